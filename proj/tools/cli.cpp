// sonet command line: SOM preprocessing, training, evaluation, retrieval,
// robustness sweeps and figure export.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sonet/train.hpp"

namespace fs = std::filesystem;
using namespace sonet;

namespace {

// Exit codes, also listed in --help.
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kBadConfig = 3;
constexpr int kMissingFile = 4;
constexpr int kShapeMismatch = 5;
constexpr int kRuntime = 6;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::set<std::string> kKnownKeys = {
    "dataset",          "classes",        "with_parts",      "n_per_class",
    "test_per_class",   "points_per_cloud", "data_seed",
    "train_images",     "train_labels",   "test_images",     "test_labels",
    "train_limit",      "test_limit",     "image_points",    "image_sigma",
    "clouds",           "labels",
    "som_size",         "k",              "hierarchical",    "k_prime",
    "use_normals",      "point_widths",   "node_widths",     "global_dim",
    "mlp_widths",       "num_classes",    "dropout_keep",
    "code_dim",         "fc_points",      "fc_widths",       "conv_h0",
    "conv_w0",          "conv_c0",        "stage_channels",  "conv2pc_hidden",
    "pre_widths",       "post_widths",    "num_parts",
    "epochs",           "batch_size",     "base_lr",         "lr_decay_every",
    "seed",             "workers",        "augment",         "point_noise_sigma",
    "som_noise_sigma",  "coarse_supervision",
    "task",             "query_index",    "fig_source",      "fig_input",
    "dropout_fracs",    "noise_sigmas",
};

class RunConfig {
public:
    static RunConfig load(const std::string& path) {
        if (!fs::exists(path)) throw FileError("config file not found: " + path);
        std::ifstream in(path);
        if (!in) throw FileError("cannot open config file: " + path);
        RunConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (!kKnownKeys.count(key))
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
            if (cfg.values_.count(key))
                throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string str(const std::string& key, const std::string& fallback = "") const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    long integer(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
        }
    }

    double real(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key '" + key + "' is not a number: " + it->second);
        }
    }

    bool flag(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "1" || it->second == "true") return true;
        if (it->second == "0" || it->second == "false") return false;
        throw ConfigError("config key '" + key + "' must be 0/1/true/false");
    }

    std::vector<std::size_t> sizes(const std::string& key,
                                   std::vector<std::size_t> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<std::size_t> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(static_cast<std::size_t>(std::stoul(tok)));
            } catch (...) {
                throw ConfigError("config key '" + key + "' has a bad list entry: " + tok);
            }
        }
        if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
        return out;
    }

    std::vector<double> reals(const std::string& key, std::vector<double> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(std::stod(tok));
            } catch (...) {
                throw ConfigError("config key '" + key + "' has a bad list entry: " + tok);
            }
        }
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

// Command-line overrides shared by the subcommands.
struct Overrides {
    std::string config_path;
    std::string out_dir = "out";
    std::string pretrained;
    std::string format = "pcb";
    long seed = -1;
    long workers = -1;
    long epochs = -1;
    long som_size = -1;
    long k = -1;
    double noise = -1;
    double dropout_frac = -1;
};

std::uint64_t effective_seed(const RunConfig& cfg, const Overrides& ov) {
    if (ov.seed >= 0) return static_cast<std::uint64_t>(ov.seed);
    return static_cast<std::uint64_t>(cfg.integer("seed", 1));
}

struct SplitData {
    Dataset train;
    Dataset test;
};

SplitData build_dataset(const RunConfig& cfg, const Overrides& ov) {
    const std::string kind = cfg.str("dataset", "synth");
    const std::uint64_t dseed = static_cast<std::uint64_t>(cfg.integer("data_seed", 100));
    SplitData out;
    if (kind == "synth") {
        std::vector<ShapeKind> classes;
        std::stringstream ss(cfg.str("classes", "sphere,cube,cylinder,torus"));
        std::string tok;
        while (std::getline(ss, tok, ',')) classes.push_back(shape_kind_from_name(tok));
        const auto n_train = static_cast<std::size_t>(cfg.integer("n_per_class", 20));
        const auto n_test = static_cast<std::size_t>(cfg.integer("test_per_class", 5));
        const auto pts = static_cast<std::size_t>(cfg.integer("points_per_cloud", 512));
        const bool parts = cfg.flag("with_parts", false);
        out.train = synth_shapes(classes, n_train, pts, parts, dseed);
        out.test = synth_shapes(classes, n_test, pts, parts, dseed + 1);
    } else if (kind == "digits") {
        const auto pts = static_cast<std::size_t>(cfg.integer("image_points", 512));
        const double sigma = cfg.real("image_sigma", 0.01);
        out.train = digits_dataset(cfg.require("train_images"), cfg.require("train_labels"), pts,
                                   sigma, dseed,
                                   static_cast<std::size_t>(cfg.integer("train_limit", 0)));
        out.test = digits_dataset(cfg.require("test_images"), cfg.require("test_labels"), pts,
                                  sigma, dseed + 1,
                                  static_cast<std::size_t>(cfg.integer("test_limit", 0)));
    } else if (kind == "dir") {
        const std::string dir = cfg.require("clouds");
        if (!fs::is_directory(dir)) throw FileError("cloud directory not found: " + dir);
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const auto ext = e.path().extension().string();
            if (ext == ".xyz" || ext == ".pcb") files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FileError("no .xyz/.pcb files in " + dir);
        for (const auto& f : files) {
            PointCloud c = fs::path(f).extension() == ".xyz" ? read_xyz(f) : read_pcb(f);
            out.train.clouds.push_back(std::move(c));
        }
        if (cfg.has("labels")) {
            auto labels = read_label_file(cfg.require("labels"));
            if (labels.size() != out.train.clouds.size())
                throw ConfigError("label file size does not match cloud count");
            for (std::size_t i = 0; i < labels.size(); ++i)
                out.train.clouds[i].class_id = labels[i];
        }
        out.test = out.train;
    } else {
        throw ConfigError("unknown dataset kind '" + kind + "' (synth|digits|dir)");
    }
    (void)ov;
    return out;
}

EncoderConfig encoder_config(const RunConfig& cfg, const Overrides& ov) {
    EncoderConfig e;
    e.som_m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    e.k = static_cast<std::size_t>(ov.k > 0 ? ov.k : cfg.integer("k", 3));
    e.use_normals = cfg.flag("use_normals", false);
    e.point_widths = cfg.sizes("point_widths", {64, 64, 128});
    e.node_widths = cfg.sizes("node_widths", {256, 512});
    e.global_dim = static_cast<std::size_t>(cfg.integer("global_dim", 512));
    e.hierarchical = cfg.flag("hierarchical", false);
    e.k_prime = static_cast<std::size_t>(cfg.integer("k_prime", 9));
    return e;
}

DecoderConfig decoder_config(const RunConfig& cfg, const EncoderConfig& enc) {
    DecoderConfig d;
    d.code_dim = static_cast<std::size_t>(cfg.integer("code_dim", static_cast<long>(enc.global_dim)));
    d.fc_points = static_cast<std::size_t>(cfg.integer("fc_points", 64));
    d.fc_widths = cfg.sizes("fc_widths", {256});
    d.conv_h0 = static_cast<std::size_t>(cfg.integer("conv_h0", 4));
    d.conv_w0 = static_cast<std::size_t>(cfg.integer("conv_w0", 4));
    d.conv_c0 = static_cast<std::size_t>(cfg.integer("conv_c0", 64));
    d.stage_channels = cfg.sizes("stage_channels", {32, 16});
    d.conv2pc_hidden = static_cast<std::size_t>(cfg.integer("conv2pc_hidden", 32));
    return d;
}

TrainConfig train_config(const RunConfig& cfg, const Overrides& ov) {
    TrainConfig tc;
    tc.epochs = static_cast<std::size_t>(ov.epochs >= 0 ? ov.epochs : cfg.integer("epochs", 20));
    tc.batch_size = static_cast<std::size_t>(cfg.integer("batch_size", 8));
    tc.schedule.base_lr = cfg.real("base_lr", 0.001);
    tc.schedule.decay_every = static_cast<std::size_t>(cfg.integer("lr_decay_every", 40));
    tc.augment_enabled = cfg.flag("augment", true);
    tc.augment.point_noise_sigma = cfg.real("point_noise_sigma", 0.01);
    tc.augment.som_noise_sigma = cfg.real("som_noise_sigma", 0.04);
    tc.seed = effective_seed(cfg, ov);
    tc.coarse_supervision = cfg.flag("coarse_supervision", true);
    return tc;
}

SomTrainConfig som_config(const RunConfig& cfg, const Overrides& ov) {
    SomTrainConfig sc;
    if (ov.workers > 0) sc.workers = static_cast<std::size_t>(ov.workers);
    else sc.workers = static_cast<std::size_t>(cfg.integer("workers", 1));
    return sc;
}

std::size_t infer_classes(const RunConfig& cfg, const SplitData& data) {
    int max_label = 0;
    for (const auto& c : data.train.clouds) max_label = std::max(max_label, c.class_id);
    for (const auto& c : data.test.clouds) max_label = std::max(max_label, c.class_id);
    return static_cast<std::size_t>(cfg.integer("num_classes", max_label + 1));
}

Checkpoint maybe_warm_start(const Overrides& ov) {
    if (ov.pretrained.empty()) return {};
    if (!fs::exists(ov.pretrained)) throw FileError("pretrained checkpoint not found: " + ov.pretrained);
    return load_checkpoint(ov.pretrained);
}

void ensure_out_dir(const Overrides& ov) { fs::create_directories(ov.out_dir); }

// ---- subcommands ----

int cmd_som(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.train, m, som_config(cfg, ov));
    ensure_out_dir(ov);
    for (std::size_t i = 0; i < soms.size(); ++i) {
        PointCloud nodes(soms[i].node_count(), soms[i].dims);
        nodes.points = soms[i].nodes;
        const std::string path = ov.out_dir + "/som_" + std::to_string(i) +
                                 (ov.format == "xyz" ? ".xyz" : ".pcb");
        if (ov.format == "xyz") write_xyz(path, nodes);
        else write_pcb(path, nodes);
    }
    std::cout << "wrote " << soms.size() << " SOM node files to " << ov.out_dir << "\n";
    return kOk;
}

int cmd_train_cls(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.train, m, som_config(cfg, ov));
    auto test_soms = train_soms(data.test, m, som_config(cfg, ov));

    ClassifierConfig ccfg;
    ccfg.encoder = encoder_config(cfg, ov);
    ccfg.mlp_widths = cfg.sizes("mlp_widths", {256, 128});
    ccfg.num_classes = infer_classes(cfg, data);
    ccfg.dropout_keep = cfg.real("dropout_keep", 0.4);
    Classifier model(ccfg, effective_seed(cfg, ov));

    auto warm = maybe_warm_start(ov);
    auto res = fit_classifier(model, data.train, soms, data.test, test_soms, train_config(cfg, ov),
                              ov.pretrained.empty() ? nullptr : &warm);
    ensure_out_dir(ov);
    save_checkpoint(ov.out_dir + "/cls.snet", res.checkpoint);
    write_metric_csv(ov.out_dir + "/cls_metrics.csv", res.log);
    std::cout << "test accuracy " << eval_classifier(model, data.test, test_soms) << "\n";
    return kOk;
}

int cmd_train_ae(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.train, m, som_config(cfg, ov));
    auto test_soms = train_soms(data.test, m, som_config(cfg, ov));

    AutoencoderConfig acfg;
    acfg.encoder = encoder_config(cfg, ov);
    acfg.decoder = decoder_config(cfg, acfg.encoder);
    Autoencoder model(acfg, effective_seed(cfg, ov));

    auto warm = maybe_warm_start(ov);
    auto res = fit_autoencoder(model, data.train, soms, data.test, test_soms, train_config(cfg, ov),
                               ov.pretrained.empty() ? nullptr : &warm);
    ensure_out_dir(ov);
    save_checkpoint(ov.out_dir + "/ae.snet", res.checkpoint);
    write_metric_csv(ov.out_dir + "/ae_metrics.csv", res.log);
    std::cout << "test chamfer " << eval_autoencoder_chamfer(model, data.test, test_soms) << "\n";
    return kOk;
}

int cmd_train_seg(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.train, m, som_config(cfg, ov));
    auto test_soms = train_soms(data.test, m, som_config(cfg, ov));

    SegmenterConfig scfg;
    scfg.encoder = encoder_config(cfg, ov);
    scfg.pre_widths = cfg.sizes("pre_widths", {256, 128});
    scfg.post_widths = cfg.sizes("post_widths", {128});
    int max_part = 0;
    for (const auto& c : data.train.clouds)
        for (int l : c.labels) max_part = std::max(max_part, l);
    scfg.num_parts = static_cast<std::size_t>(cfg.integer("num_parts", max_part + 1));
    Segmenter model(scfg, effective_seed(cfg, ov));

    auto warm = maybe_warm_start(ov);
    auto res = fit_segmenter(model, data.train, soms, data.test, test_soms, train_config(cfg, ov),
                             ov.pretrained.empty() ? nullptr : &warm);
    ensure_out_dir(ov);
    save_checkpoint(ov.out_dir + "/seg.snet", res.checkpoint);
    write_metric_csv(ov.out_dir + "/seg_metrics.csv", res.log);
    std::cout << "test mean IoU " << eval_segmenter_miou(model, data.test, test_soms) << "\n";
    return kOk;
}

int cmd_eval(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    if (ov.pretrained.empty()) throw ConfigError("eval requires --pretrained <checkpoint>");
    auto ckpt = maybe_warm_start(ov);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.test, m, som_config(cfg, ov));
    const std::string task = cfg.str("task", "cls");
    if (task == "cls") {
        ClassifierConfig ccfg;
        ccfg.encoder = encoder_config(cfg, ov);
        ccfg.mlp_widths = cfg.sizes("mlp_widths", {256, 128});
        ccfg.num_classes = infer_classes(cfg, data);
        Classifier model(ccfg, 1);
        apply_checkpoint(ckpt, model.params());
        std::cout << "accuracy " << eval_classifier(model, data.test, soms) << "\n";
    } else if (task == "ae") {
        AutoencoderConfig acfg;
        acfg.encoder = encoder_config(cfg, ov);
        acfg.decoder = decoder_config(cfg, acfg.encoder);
        Autoencoder model(acfg, 1);
        apply_checkpoint(ckpt, model.params());
        std::cout << "chamfer " << eval_autoencoder_chamfer(model, data.test, soms) << "\n";
    } else if (task == "seg") {
        SegmenterConfig scfg;
        scfg.encoder = encoder_config(cfg, ov);
        scfg.pre_widths = cfg.sizes("pre_widths", {256, 128});
        scfg.post_widths = cfg.sizes("post_widths", {128});
        scfg.num_parts = static_cast<std::size_t>(cfg.integer("num_parts", 3));
        Segmenter model(scfg, 1);
        apply_checkpoint(ckpt, model.params());
        std::cout << "mean IoU " << eval_segmenter_miou(model, data.test, soms) << "\n";
    } else {
        throw ConfigError("unknown task '" + task + "' (cls|ae|seg)");
    }
    return kOk;
}

int cmd_retrieve(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    if (ov.pretrained.empty()) throw ConfigError("retrieve requires --pretrained <checkpoint>");
    auto ckpt = maybe_warm_start(ov);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.train, m, som_config(cfg, ov));

    ClassifierConfig ccfg;
    ccfg.encoder = encoder_config(cfg, ov);
    ccfg.mlp_widths = cfg.sizes("mlp_widths", {256, 128});
    ccfg.num_classes = infer_classes(cfg, data);
    Classifier model(ccfg, 1);
    apply_checkpoint(ckpt, model.params());

    std::vector<std::vector<double>> library;
    for (std::size_t i = 0; i < data.train.clouds.size(); ++i)
        library.push_back(model.scores(data.train.clouds[i], soms[i]));
    const auto qi = static_cast<std::size_t>(cfg.integer("query_index", 0));
    if (qi >= library.size()) throw ConfigError("query_index out of range");
    auto hits = retrieve(library[qi], library);
    std::cout << "rank,index,distance\n";
    for (std::size_t r = 0; r < hits.size(); ++r)
        std::cout << r + 1 << "," << hits[r].index << "," << hits[r].distance << "\n";
    return kOk;
}

PointCloud drop_points(const PointCloud& c, double frac, RandomStream& rng) {
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                   static_cast<double>(c.n) * (1.0 - frac)));
    std::vector<std::size_t> idx(c.n);
    for (std::size_t i = 0; i < c.n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.index(c.n - i)]);
    PointCloud out(keep, c.dims);
    if (c.has_normals()) out.normals.assign(keep * c.dims, 0.0);
    out.class_id = c.class_id;
    for (std::size_t i = 0; i < keep; ++i) {
        for (std::size_t d = 0; d < c.dims; ++d) {
            out.point(i)[d] = c.point(idx[i])[d];
            if (c.has_normals()) out.normal(i)[d] = c.normal(idx[i])[d];
        }
    }
    return out;
}

int cmd_robustness(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    if (ov.pretrained.empty()) throw ConfigError("robustness requires --pretrained <checkpoint>");
    auto ckpt = maybe_warm_start(ov);
    auto data = build_dataset(cfg, ov);
    const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size : cfg.integer("som_size", 8));
    auto soms = train_soms(data.test, m, som_config(cfg, ov));

    ClassifierConfig ccfg;
    ccfg.encoder = encoder_config(cfg, ov);
    ccfg.mlp_widths = cfg.sizes("mlp_widths", {256, 128});
    ccfg.num_classes = infer_classes(cfg, data);
    Classifier model(ccfg, 1);
    apply_checkpoint(ckpt, model.params());

    std::vector<double> fracs = cfg.reals("dropout_fracs", {0.0, 0.25, 0.5, 0.75});
    std::vector<double> sigmas = cfg.reals("noise_sigmas", {0.0, 0.05, 0.1, 0.2});
    if (ov.dropout_frac >= 0) fracs = {ov.dropout_frac};
    if (ov.noise >= 0) sigmas = {ov.noise};
    const std::uint64_t seed = effective_seed(cfg, ov);

    ensure_out_dir(ov);
    std::ofstream csv(ov.out_dir + "/robustness.csv");
    csv << "kind,level,accuracy\n";
    for (double f : fracs) {
        RandomStream rng(seed);
        std::size_t ok = 0;
        for (std::size_t i = 0; i < data.test.clouds.size(); ++i) {
            auto c = drop_points(data.test.clouds[i], f, rng);
            if (model.predict(c, soms[i]) == data.test.clouds[i].class_id) ++ok;
        }
        const double acc = static_cast<double>(ok) / static_cast<double>(data.test.clouds.size());
        csv << "point_dropout," << f << "," << acc << "\n";
        std::cout << "point_dropout " << f << " accuracy " << acc << "\n";
    }
    for (double s : sigmas) {
        RandomStream rng(seed + 1);
        std::size_t ok = 0;
        for (std::size_t i = 0; i < data.test.clouds.size(); ++i) {
            SomGrid noisy = soms[i];
            for (auto& v : noisy.nodes) v += s * rng.normal();
            if (model.predict(data.test.clouds[i], noisy) == data.test.clouds[i].class_id) ++ok;
        }
        const double acc = static_cast<double>(ok) / static_cast<double>(data.test.clouds.size());
        csv << "som_noise," << s << "," << acc << "\n";
        std::cout << "som_noise " << s << " accuracy " << acc << "\n";
    }
    return kOk;
}

void write_scatter_svg(const std::string& path, const PointCloud& cloud) {
    // project to the first two axes; unit cube -> 400x400 canvas
    std::ofstream svg(path);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" "
           "viewBox=\"0 0 400 400\">\n<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < cloud.n; ++i) {
        const double x = (cloud.point(i)[0] + 1.0) * 200.0;
        const double y = (1.0 - cloud.point(i)[1]) * 200.0;
        svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2\" fill=\"#1f6fb2\"/>\n";
    }
    svg << "</svg>\n";
}

int cmd_export_fig(const Overrides& ov) {
    auto cfg = RunConfig::load(ov.config_path);
    const std::string source = cfg.str("fig_source", "cloud");
    PointCloud cloud;
    if (source == "cloud") {
        const std::string input = cfg.require("fig_input");
        if (!fs::exists(input)) throw FileError("figure input not found: " + input);
        cloud = fs::path(input).extension() == ".xyz" ? read_xyz(input) : read_pcb(input);
    } else if (source == "som") {
        const std::string input = cfg.require("fig_input");
        if (!fs::exists(input)) throw FileError("figure input not found: " + input);
        cloud = fs::path(input).extension() == ".xyz" ? read_xyz(input) : read_pcb(input);
    } else if (source == "reconstruction") {
        if (ov.pretrained.empty())
            throw ConfigError("fig_source=reconstruction requires --pretrained");
        auto ckpt = maybe_warm_start(ov);
        auto data = build_dataset(cfg, ov);
        const auto m = static_cast<std::size_t>(ov.som_size > 0 ? ov.som_size
                                                                : cfg.integer("som_size", 8));
        auto soms = train_soms(data.test, m, som_config(cfg, ov));
        AutoencoderConfig acfg;
        acfg.encoder = encoder_config(cfg, ov);
        acfg.decoder = decoder_config(cfg, acfg.encoder);
        Autoencoder model(acfg, 1);
        apply_checkpoint(ckpt, model.params());
        const auto qi = static_cast<std::size_t>(cfg.integer("query_index", 0));
        if (qi >= data.test.clouds.size()) throw ConfigError("query_index out of range");
        cloud = model.reconstruct(data.test.clouds[qi], soms[qi]);
    } else {
        throw ConfigError("unknown fig_source '" + source + "' (cloud|som|reconstruction)");
    }
    ensure_out_dir(ov);
    write_scatter_svg(ov.out_dir + "/figure.svg", cloud);
    std::ofstream csv(ov.out_dir + "/figure.csv");
    csv << "x,y";
    if (cloud.dims > 2) csv << ",z";
    csv << "\n";
    for (std::size_t i = 0; i < cloud.n; ++i) {
        for (std::size_t d = 0; d < cloud.dims; ++d) csv << (d ? "," : "") << cloud.point(i)[d];
        csv << "\n";
    }
    std::cout << "wrote " << ov.out_dir << "/figure.svg and figure.csv (" << cloud.n
              << " points)\n";
    return kOk;
}

void add_common(CLI::App* sub, Overrides& ov, bool needs_config = true) {
    auto* c = sub->add_option("--config", ov.config_path, "run configuration file (key=value)");
    if (needs_config) c->required();
    sub->add_option("--seed", ov.seed, "override the run seed");
    sub->add_option("--workers", ov.workers, "SOM training worker threads");
    sub->add_option("--out", ov.out_dir, "output directory (default: out)");
    sub->add_option("--pretrained", ov.pretrained, "checkpoint to load before running");
    sub->add_option("--epochs", ov.epochs, "override the epoch count");
    sub->add_option("--som-size", ov.som_size, "override the SOM grid size m");
    sub->add_option("--k", ov.k, "override the point-to-node kNN k");
    sub->add_option("--noise", ov.noise, "single SOM noise sigma for robustness");
    sub->add_option("--dropout-frac", ov.dropout_frac, "single point-dropout fraction for robustness");
    sub->add_option("--format", ov.format, "cloud output format: xyz or pcb")
        ->check(CLI::IsMember({"xyz", "pcb"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "sonet: point-cloud learning over self-organizing maps\n"
        "Exit codes: 0 success, 2 usage error, 3 malformed config,\n"
        "4 missing file, 5 shape mismatch, 6 runtime error."};
    app.require_subcommand(1);

    Overrides ov;
    auto* som = app.add_subcommand("som", "train SOMs for a dataset and write node files");
    auto* tae = app.add_subcommand("train-ae", "train the autoencoder");
    auto* tcls = app.add_subcommand("train-cls", "train the classifier");
    auto* tseg = app.add_subcommand("train-seg", "train the part segmenter");
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    auto* ret = app.add_subcommand("retrieve", "rank the library for a query cloud");
    auto* rob = app.add_subcommand("robustness", "sweep point dropout and SOM noise");
    auto* fig = app.add_subcommand("export-fig", "emit a 2-D scatter SVG/CSV");
    for (auto* sub : {som, tae, tcls, tseg, ev, ret, rob, fig}) add_common(sub, ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (som->parsed()) return cmd_som(ov);
        if (tae->parsed()) return cmd_train_ae(ov);
        if (tcls->parsed()) return cmd_train_cls(ov);
        if (tseg->parsed()) return cmd_train_seg(ov);
        if (ev->parsed()) return cmd_eval(ov);
        if (ret->parsed()) return cmd_retrieve(ov);
        if (rob->parsed()) return cmd_robustness(ov);
        if (fig->parsed()) return cmd_export_fig(ov);
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const FileError& e) {
        std::cerr << "file error: " << e.what() << "\n";
        return kMissingFile;
    } catch (const Error& e) {
        const std::string msg = e.what();
        std::cerr << "error: " << msg << "\n";
        if (msg.find("mismatch") != std::string::npos) return kShapeMismatch;
        if (msg.find("not found") != std::string::npos ||
            msg.find("cannot open") != std::string::npos)
            return kMissingFile;
        return kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}
