#include "sonet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <cstring>
#include <fstream>

namespace sonet {

Tensor& ModelParams::get(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("model: unknown parameter " + name);
    return it->second;
}

const Tensor& ModelParams::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("model: unknown parameter " + name);
    return it->second;
}

bool ModelParams::trainable(const std::string& name) {
    auto ends_with = [&](const char* suffix) {
        const std::size_t len = std::strlen(suffix);
        return name.size() >= len && name.compare(name.size() - len, len, suffix) == 0;
    };
    return !ends_with(".running_mean") && !ends_with(".running_var");
}

int TapeCtx::param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const int id = tape_.leaf(params_.get(name));
    bound_.emplace(name, id);
    return id;
}

int TapeCtx::bn(const std::string& layer, int x) {
    const int g = param(layer + ".gamma");
    const int b = param(layer + ".beta");
    Tensor& rm = params_.get(layer + ".running_mean");
    Tensor& rv = params_.get(layer + ".running_var");
    BatchNormState st;
    st.running_mean = rm.data;
    st.running_var = rv.data;
    // Always normalize with the current rows' statistics: the network is
    // trained one cloud at a time, so per-cloud stats are what the layers
    // learn against and running averages are not representative at eval.
    // Running stats are still tracked and checkpointed.
    const int y = tape_.batchnorm(x, g, b, st, Mode::Train);
    if (mode_ == Mode::Train) {
        rm.data = st.running_mean;
        rv.data = st.running_var;
    }
    return y;
}

std::map<std::string, Tensor> TapeCtx::collect_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : bound_) {
        if (!ModelParams::trainable(name)) continue;
        out.emplace(name, tape_.grad(id));
    }
    return out;
}

namespace {

void init_dense(ModelParams& params, RandomStream& rng, const std::string& name, std::size_t in,
                std::size_t out, bool relu_gain) {
    Tensor W({in, out});
    const double std = std::sqrt((relu_gain ? 2.0 : 1.0) / static_cast<double>(in));
    for (auto& v : W.data) v = rng.normal(0.0, std);
    params.tensors[name + ".W"] = std::move(W);
    params.tensors[name + ".b"] = Tensor({out});
}

void init_bn(ModelParams& params, const std::string& name, std::size_t features) {
    params.tensors[name + ".gamma"] = Tensor::full({features}, 1.0);
    params.tensors[name + ".beta"] = Tensor({features});
    params.tensors[name + ".running_mean"] = Tensor({features});
    params.tensors[name + ".running_var"] = Tensor::full({features}, 1.0);
}

void init_conv(ModelParams& params, RandomStream& rng, const std::string& name, std::size_t cin,
               std::size_t cout, std::size_t ks, bool relu_gain) {
    Tensor K({cout, cin, ks, ks});
    const double fan_in = static_cast<double>(cin * ks * ks);
    const double std = std::sqrt((relu_gain ? 2.0 : 1.0) / fan_in);
    for (auto& v : K.data) v = rng.normal(0.0, std);
    params.tensors[name + ".K"] = std::move(K);
    params.tensors[name + ".b"] = Tensor({cout});
}

// Shared dense + batch norm + relu stack over 2-D rows.
int dense_bn_relu(TapeCtx& ctx, const std::string& name, int x) {
    Tape& t = ctx.tape();
    int y = t.dense(x, ctx.param(name + ".W"), ctx.param(name + ".b"));
    y = ctx.bn(name, y);
    return t.relu(y);
}

}  // namespace

void EncoderConfig::validate() const {
    if (som_m < 2) throw Error("encoder config: som_m must be >= 2");
    if (dims != 2 && dims != 3) throw Error("encoder config: dims must be 2 or 3");
    if (k < 1 || k > som_m * som_m) throw Error("encoder config: k out of range");
    if (point_widths.empty() || node_widths.empty())
        throw Error("encoder config: empty layer widths");
    for (std::size_t w : point_widths)
        if (w < 1) throw Error("encoder config: widths must be >= 1");
    if (hierarchical && (k_prime < 1 || k_prime > som_m * som_m))
        throw Error("encoder config: k' out of range");
    if (hierarchical && hier_widths.empty())
        throw Error("encoder config: hierarchical variant needs hier widths");
}

void Encoder::init(ModelParams& params, RandomStream& rng) const {
    cfg_.validate();
    std::size_t w = cfg_.input_width();
    for (std::size_t i = 0; i < cfg_.point_widths.size(); ++i) {
        const std::string name = prefix_ + ".point" + std::to_string(i);
        init_dense(params, rng, name, w, cfg_.point_widths[i], true);
        init_bn(params, name, cfg_.point_widths[i]);
        w = cfg_.point_widths[i];
    }
    // node features start as max-pooled point features concatenated with
    // the node coordinates
    w += cfg_.dims;
    if (cfg_.hierarchical) {
        for (std::size_t i = 0; i < cfg_.hier_widths.size(); ++i) {
            const std::string name = prefix_ + ".hier" + std::to_string(i);
            init_dense(params, rng, name, w, cfg_.hier_widths[i], true);
            init_bn(params, name, cfg_.hier_widths[i]);
            w = cfg_.hier_widths[i];
        }
    }
    for (std::size_t i = 0; i < cfg_.node_widths.size(); ++i) {
        const std::string name = prefix_ + ".node" + std::to_string(i);
        init_dense(params, rng, name, w, cfg_.node_widths[i], true);
        init_bn(params, name, cfg_.node_widths[i]);
        w = cfg_.node_widths[i];
    }
    init_dense(params, rng, prefix_ + ".global", w, cfg_.global_dim, false);
}

EncodeOut Encoder::forward(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) const {
    if (som.dims != cfg_.dims || som.m != cfg_.som_m)
        throw Error("encoder: SOM does not match the configuration");
    if (cloud.dims != cfg_.dims) throw Error("encoder: cloud dimension mismatch");
    if (cfg_.use_normals && !cloud.has_normals())
        throw Error("encoder: configuration expects normals");
    Tape& t = ctx.tape();

    EncodeOut out;
    // Canonical lexicographic point order: every reduction and batch
    // statistic then sees the rows in the same sequence for any input
    // permutation, so the forward pass is bit-exact permutation invariant.
    out.order.resize(cloud.n);
    std::iota(out.order.begin(), out.order.end(), std::size_t{0});
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t a, std::size_t b) {
                         const double* pa = cloud.point(a);
                         const double* pb = cloud.point(b);
                         for (std::size_t d = 0; d < cloud.dims; ++d) {
                             if (pa[d] != pb[d]) return pa[d] < pb[d];
                         }
                         if (!cloud.has_normals()) return false;
                         const double* na = cloud.normal(a);
                         const double* nb = cloud.normal(b);
                         for (std::size_t d = 0; d < cloud.dims; ++d) {
                             if (na[d] != nb[d]) return na[d] < nb[d];
                         }
                         return false;
                     });
    PointCloud sorted(cloud.n, cloud.dims);
    if (cloud.has_normals()) sorted.normals.resize(cloud.n * cloud.dims);
    for (std::size_t i = 0; i < cloud.n; ++i) {
        const std::size_t src = out.order[i];
        for (std::size_t d = 0; d < cloud.dims; ++d) {
            sorted.point(i)[d] = cloud.point(src)[d];
            if (cloud.has_normals()) sorted.normal(i)[d] = cloud.normal(src)[d];
        }
    }
    out.assign = knn_assign(sorted, som, cfg_.k);
    const Assignment& a = out.assign;
    const std::size_t R = a.rows();
    const std::size_t in_w = cfg_.input_width();

    Tensor rows({R, in_w});
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t d = 0; d < cfg_.dims; ++d)
            rows.at(r, d) = a.normalized[r * cfg_.dims + d];
        if (cfg_.use_normals)
            for (std::size_t d = 0; d < cfg_.dims; ++d)
                rows.at(r, cfg_.dims + d) = sorted.normal(a.owner_point[r])[d];
    }
    out.point_rows = t.leaf(std::move(rows));

    int x = out.point_rows;
    for (std::size_t i = 0; i < cfg_.point_widths.size(); ++i)
        x = dense_bn_relu(ctx, prefix_ + ".point" + std::to_string(i), x);

    // kN point features -> M node features; isolated nodes stay zero
    x = t.group_max(x, a.node_members);

    const std::size_t M = som.node_count();
    Tensor coords({M, cfg_.dims});
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t d = 0; d < cfg_.dims; ++d) coords.at(j, d) = som.node(j)[d];
    x = t.concat_cols(x, t.leaf(std::move(coords)));

    if (cfg_.hierarchical) {
        const auto nbr = node_knn(som, cfg_.k_prime);
        std::vector<std::size_t> gather(nbr.begin(), nbr.end());
        int h = t.gather_rows(x, std::move(gather));
        for (std::size_t i = 0; i < cfg_.hier_widths.size(); ++i)
            h = dense_bn_relu(ctx, prefix_ + ".hier" + std::to_string(i), h);
        std::vector<std::vector<std::size_t>> groups(M);
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t c = 0; c < cfg_.k_prime; ++c)
                groups[j].push_back(j * cfg_.k_prime + c);
        x = t.group_max(h, groups);
    }

    for (std::size_t i = 0; i < cfg_.node_widths.size(); ++i)
        x = dense_bn_relu(ctx, prefix_ + ".node" + std::to_string(i), x);
    out.node_feats = x;

    std::vector<std::vector<std::size_t>> all(1);
    for (std::size_t j = 0; j < M; ++j) all[0].push_back(j);
    int g = t.group_max(x, all);  // 1 x node_feat_width
    out.global = t.dense(g, ctx.param(prefix_ + ".global.W"), ctx.param(prefix_ + ".global.b"));
    return out;
}

std::size_t DecoderConfig::conv_points() const {
    std::size_t h = conv_h0, w = conv_w0;
    for (std::size_t s = 0; s < stage_channels.size(); ++s) {
        h *= 2;
        w *= 2;
    }
    return h * w;
}

void DecoderConfig::validate() const {
    if (code_dim < 1) throw Error("decoder config: code_dim must be >= 1");
    if (conv_h0 < 1 || conv_w0 < 1 || conv_c0 < 1) throw Error("decoder config: bad conv grid");
    if (fc_points + conv_points() < 1) throw Error("decoder config: no output points");
}

void Decoder::init(ModelParams& params, RandomStream& rng) const {
    cfg_.validate();
    if (cfg_.fc_points > 0) {
        std::size_t w = cfg_.code_dim;
        for (std::size_t i = 0; i < cfg_.fc_widths.size(); ++i) {
            init_dense(params, rng, prefix_ + ".fc" + std::to_string(i), w, cfg_.fc_widths[i], true);
            w = cfg_.fc_widths[i];
        }
        init_dense(params, rng, prefix_ + ".fc_out", w, 3 * cfg_.fc_points, false);
    }
    init_dense(params, rng, prefix_ + ".conv_in", cfg_.code_dim,
               cfg_.conv_c0 * cfg_.conv_h0 * cfg_.conv_w0, true);
    std::size_t cin = cfg_.conv_c0;
    for (std::size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
        const std::string name = prefix_ + ".up" + std::to_string(s);
        init_conv(params, rng, name, cin, cfg_.stage_channels[s], 3, true);
        init_bn(params, name, cfg_.stage_channels[s]);
        cin = cfg_.stage_channels[s];
    }
    // conv2pc heads: one per feature-map scale (stage 0 reads the initial map)
    cin = cfg_.conv_c0;
    for (std::size_t s = 0; s <= cfg_.stage_channels.size(); ++s) {
        const std::string name = prefix_ + ".pc" + std::to_string(s);
        init_conv(params, rng, name + ".a", cin, cfg_.conv2pc_hidden, 1, true);
        init_conv(params, rng, name + ".b", cfg_.conv2pc_hidden, 3, 1, false);
        if (s < cfg_.stage_channels.size()) cin = cfg_.stage_channels[s];
    }
}

DecodeOut Decoder::forward(TapeCtx& ctx, int code) const {
    Tape& t = ctx.tape();
    if (t.value(code).rank() != 2 || t.value(code).dim(0) != 1 ||
        t.value(code).dim(1) != cfg_.code_dim)
        throw Error("decoder: code length mismatch");

    DecodeOut out;
    auto conv2pc = [&](int fmap, std::size_t s) {
        const std::string name = prefix_ + ".pc" + std::to_string(s);
        int y = t.conv2d(fmap, ctx.param(name + ".a.K"), ctx.param(name + ".a.b"), 1);
        y = t.relu(y);
        y = t.conv2d(y, ctx.param(name + ".b.K"), ctx.param(name + ".b.b"), 1);
        return t.nchw_to_rows(y);  // (H*W) x 3
    };

    int fmap = t.dense(code, ctx.param(prefix_ + ".conv_in.W"), ctx.param(prefix_ + ".conv_in.b"));
    fmap = t.relu(fmap);
    fmap = t.reshape(fmap, {1, cfg_.conv_c0, cfg_.conv_h0, cfg_.conv_w0});
    std::size_t H = cfg_.conv_h0, W = cfg_.conv_w0;
    for (std::size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
        out.coarse_clouds.push_back(conv2pc(fmap, s));
        const std::string name = prefix_ + ".up" + std::to_string(s);
        fmap = t.upsample_nn_2x(fmap);
        H *= 2;
        W *= 2;
        fmap = t.conv2d(fmap, ctx.param(name + ".K"), ctx.param(name + ".b"), 3);
        // channel-wise batch norm over the spatial positions
        int rows = t.nchw_to_rows(fmap);
        rows = ctx.bn(name, rows);
        rows = t.relu(rows);
        fmap = t.rows_to_nchw(rows, 1, cfg_.stage_channels[s], H, W);
    }
    int conv_cloud = conv2pc(fmap, cfg_.stage_channels.size());

    if (cfg_.fc_points > 0) {
        int h = code;
        for (std::size_t i = 0; i < cfg_.fc_widths.size(); ++i) {
            const std::string name = prefix_ + ".fc" + std::to_string(i);
            h = t.relu(t.dense(h, ctx.param(name + ".W"), ctx.param(name + ".b")));
        }
        h = t.dense(h, ctx.param(prefix_ + ".fc_out.W"), ctx.param(prefix_ + ".fc_out.b"));
        h = t.reshape(h, {cfg_.fc_points, 3});
        out.final_cloud = t.concat_rows(h, conv_cloud);
    } else {
        out.final_cloud = conv_cloud;
    }
    return out;
}

// ---- checkpoint io ----

namespace {

void put_u16(std::ostream& s, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    s.write(reinterpret_cast<char*>(b), 2);
}
void put_u32(std::ostream& s, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    s.write(reinterpret_cast<char*>(b), 4);
}
void put_u64(std::ostream& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        unsigned char b = static_cast<unsigned char>(v >> (8 * i));
        s.write(reinterpret_cast<char*>(&b), 1);
    }
}
std::uint16_t get_u16(std::istream& s) {
    unsigned char b[2];
    if (!s.read(reinterpret_cast<char*>(b), 2)) throw Error("checkpoint: truncated file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t get_u32(std::istream& s) {
    unsigned char b[4];
    if (!s.read(reinterpret_cast<char*>(b), 4)) throw Error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
std::uint64_t get_u64(std::istream& s) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        unsigned char b;
        if (!s.read(reinterpret_cast<char*>(&b), 1)) throw Error("checkpoint: truncated file");
        v |= static_cast<std::uint64_t>(b) << (8 * i);
    }
    return v;
}

void write_tensor_entry(std::ostream& s, const std::string& name, const Tensor& t) {
    put_u16(s, static_cast<std::uint16_t>(name.size()));
    s.write(name.data(), static_cast<std::streamsize>(name.size()));
    unsigned char rank = static_cast<unsigned char>(t.rank());
    s.write(reinterpret_cast<char*>(&rank), 1);
    for (std::size_t d : t.shape) put_u32(s, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(s, bits);
    }
}

std::pair<std::string, Tensor> read_tensor_entry(std::istream& s) {
    const std::uint16_t len = get_u16(s);
    std::string name(len, '\0');
    if (!s.read(name.data(), len)) throw Error("checkpoint: truncated name");
    unsigned char rank;
    if (!s.read(reinterpret_cast<char*>(&rank), 1)) throw Error("checkpoint: truncated rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get_u32(s);
    Tensor t(shape);
    for (auto& v : t.data) {
        const std::uint32_t bits = get_u32(s);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open file for writing: " + path);
    f.write("SNET", 4);
    put_u32(f, ckpt.version);
    put_u32(f, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) write_tensor_entry(f, name, t);
    put_u32(f, static_cast<std::uint32_t>(ckpt.opt_m.size() + ckpt.opt_v.size()));
    for (const auto& [name, t] : ckpt.opt_m) write_tensor_entry(f, name + ".m", t);
    for (const auto& [name, t] : ckpt.opt_v) write_tensor_entry(f, name + ".v", t);
    put_u64(f, ckpt.step);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open file for reading: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "SNET", 4) != 0)
        throw Error("checkpoint: bad magic in " + path);
    Checkpoint ckpt;
    ckpt.version = get_u32(f);
    if (ckpt.version != 1) throw Error("checkpoint: unsupported version");
    const std::uint32_t count = get_u32(f);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, t] = read_tensor_entry(f);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    const std::uint32_t opt_count = get_u32(f);
    for (std::uint32_t i = 0; i < opt_count; ++i) {
        auto [name, t] = read_tensor_entry(f);
        if (name.size() < 2) throw Error("checkpoint: bad optimizer entry name");
        const std::string suffix = name.substr(name.size() - 2);
        const std::string base = name.substr(0, name.size() - 2);
        if (suffix == ".m")
            ckpt.opt_m.emplace(base, std::move(t));
        else if (suffix == ".v")
            ckpt.opt_v.emplace(base, std::move(t));
        else
            throw Error("checkpoint: bad optimizer entry name " + name);
    }
    ckpt.step = get_u64(f);
    return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ModelParams& params) {
    std::vector<std::string> bad;
    for (const auto& [name, t] : ckpt.tensors) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end() || !it->second.same_shape(t)) bad.push_back(name);
    }
    if (!bad.empty()) {
        std::string msg = "checkpoint: shape/name mismatch for:";
        for (const auto& n : bad) msg += " " + n;
        throw Error(msg);
    }
    for (const auto& [name, t] : ckpt.tensors) params.tensors[name] = t;
}

// ---- task models ----

Classifier::Classifier(ClassifierConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), encoder_(cfg_.encoder, "enc") {
    if (cfg_.num_classes < 1) throw Error("classifier: need at least one class");
    if (!(cfg_.dropout_keep > 0.0) || cfg_.dropout_keep > 1.0)
        throw Error("classifier: dropout keep ratio must be in (0,1]");
    RandomStream rng(init_seed);
    encoder_.init(params_, rng);
    std::size_t w = cfg_.encoder.global_dim;
    for (std::size_t i = 0; i < cfg_.mlp_widths.size(); ++i) {
        init_dense(params_, rng, "cls.fc" + std::to_string(i), w, cfg_.mlp_widths[i], true);
        w = cfg_.mlp_widths[i];
    }
    init_dense(params_, rng, "cls.out", w, cfg_.num_classes, false);
}

int Classifier::logits(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) const {
    Tape& t = ctx.tape();
    EncodeOut enc = encoder_.forward(ctx, cloud, som);
    int h = enc.global;
    const std::size_t n_layers = cfg_.mlp_widths.size();
    for (std::size_t i = 0; i < n_layers; ++i) {
        // dropout on the inputs of the last two layers of the MLP
        if (i + 2 >= n_layers + 1)
            h = t.dropout(h, cfg_.dropout_keep, ctx.next_dropout_seed(), ctx.mode());
        const std::string name = "cls.fc" + std::to_string(i);
        h = t.relu(t.dense(h, ctx.param(name + ".W"), ctx.param(name + ".b")));
    }
    h = t.dropout(h, cfg_.dropout_keep, ctx.next_dropout_seed(), ctx.mode());
    return t.dense(h, ctx.param("cls.out.W"), ctx.param("cls.out.b"));
}

std::vector<double> Classifier::scores(const PointCloud& cloud, const SomGrid& som) const {
    TapeCtx ctx(const_cast<ModelParams&>(params_), Mode::Eval);
    const int id = logits(ctx, cloud, som);
    return ctx.tape().value(id).data;
}

int Classifier::predict(const PointCloud& cloud, const SomGrid& som) const {
    const auto s = scores(cloud, som);
    return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

Autoencoder::Autoencoder(AutoencoderConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), encoder_(cfg_.encoder, "enc"), decoder_(cfg_.decoder, "dec") {
    if (cfg_.decoder.code_dim != cfg_.encoder.global_dim)
        throw Error("autoencoder: decoder code_dim must equal encoder global_dim");
    if (cfg_.encoder.dims != 3) throw Error("autoencoder: decoder emits 3-D points");
    RandomStream rng(init_seed);
    encoder_.init(params_, rng);
    decoder_.init(params_, rng);
}

int Autoencoder::loss(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som,
                      bool coarse_supervision, DecodeOut* out) const {
    Tape& t = ctx.tape();
    EncodeOut enc = encoder_.forward(ctx, cloud, som);
    DecodeOut dec = decoder_.forward(ctx, enc.global);

    Tensor target({cloud.n, 3});
    for (std::size_t i = 0; i < cloud.n; ++i)
        for (std::size_t d = 0; d < 3; ++d) target.at(i, d) = cloud.point(i)[d];
    const int target_id = t.leaf(std::move(target));

    int loss = t.chamfer(dec.final_cloud, target_id);
    if (coarse_supervision)
        for (int coarse : dec.coarse_clouds) loss = t.add(loss, t.chamfer(coarse, target_id));
    if (out) *out = dec;
    return loss;
}

PointCloud Autoencoder::reconstruct(const PointCloud& cloud, const SomGrid& som) const {
    TapeCtx ctx(const_cast<ModelParams&>(params_), Mode::Eval);
    DecodeOut dec;
    loss(ctx, cloud, som, false, &dec);
    const Tensor& pts = ctx.tape().value(dec.final_cloud);
    PointCloud out(pts.dim(0), 3);
    out.points = pts.data;
    return out;
}

Segmenter::Segmenter(SegmenterConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), encoder_(cfg_.encoder, "enc") {
    if (cfg_.num_parts < 1) throw Error("segmenter: need at least one part");
    if (cfg_.pre_widths.empty() || cfg_.post_widths.empty())
        throw Error("segmenter: empty head widths");
    RandomStream rng(init_seed);
    encoder_.init(params_, rng);
    std::size_t w = cfg_.encoder.input_width() + cfg_.encoder.node_feat_width() +
                    cfg_.encoder.global_dim;
    for (std::size_t i = 0; i < cfg_.pre_widths.size(); ++i) {
        const std::string name = "seg.pre" + std::to_string(i);
        init_dense(params_, rng, name, w, cfg_.pre_widths[i], true);
        init_bn(params_, name, cfg_.pre_widths[i]);
        w = cfg_.pre_widths[i];
    }
    for (std::size_t i = 0; i < cfg_.post_widths.size(); ++i) {
        const std::string name = "seg.post" + std::to_string(i);
        init_dense(params_, rng, name, w, cfg_.post_widths[i], true);
        init_bn(params_, name, cfg_.post_widths[i]);
        w = cfg_.post_widths[i];
    }
    init_dense(params_, rng, "seg.out", w, cfg_.num_parts, false);
}

int Segmenter::scores(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) const {
    Tape& t = ctx.tape();
    EncodeOut enc = encoder_.forward(ctx, cloud, som);
    const Assignment& a = enc.assign;
    const std::size_t R = a.rows();

    // each normalized row gets its owner node's feature and the expanded
    // global feature (middle fusion happens after the pre stack)
    int node_rows = t.gather_rows(enc.node_feats, a.owner_node);
    int global_rows = t.gather_rows(enc.global, std::vector<std::size_t>(R, 0));
    int x = t.concat_cols(enc.point_rows, t.concat_cols(node_rows, global_rows));

    for (std::size_t i = 0; i < cfg_.pre_widths.size(); ++i)
        x = dense_bn_relu(ctx, "seg.pre" + std::to_string(i), x);

    std::vector<std::vector<std::size_t>> point_groups(a.n);
    for (std::size_t r = 0; r < R; ++r) point_groups[a.owner_point[r]].push_back(r);
    x = t.group_mean(x, point_groups);

    for (std::size_t i = 0; i < cfg_.post_widths.size(); ++i)
        x = dense_bn_relu(ctx, "seg.post" + std::to_string(i), x);
    x = t.dense(x, ctx.param("seg.out.W"), ctx.param("seg.out.b"));

    // rows are in the encoder's canonical order; map them back to the input
    std::vector<std::size_t> inv(a.n);
    for (std::size_t i = 0; i < a.n; ++i) inv[enc.order[i]] = i;
    return t.gather_rows(x, std::move(inv));
}

std::vector<int> Segmenter::predict(const PointCloud& cloud, const SomGrid& som) const {
    TapeCtx ctx(const_cast<ModelParams&>(params_), Mode::Eval);
    const int id = scores(ctx, cloud, som);
    const Tensor& sc = ctx.tape().value(id);
    std::vector<int> out(sc.dim(0));
    for (std::size_t i = 0; i < sc.dim(0); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < sc.dim(1); ++k)
            if (sc.at(i, k) > sc.at(i, best)) best = k;
        out[i] = static_cast<int>(best);
    }
    return out;
}

std::vector<RetrievalHit> retrieve(const std::vector<double>& query_scores,
                                   const std::vector<std::vector<double>>& library_scores) {
    if (library_scores.empty()) throw Error("retrieve: empty library");
    const auto argmax = [](const std::vector<double>& v) {
        return std::max_element(v.begin(), v.end()) - v.begin();
    };
    const auto query_class = argmax(query_scores);
    std::vector<RetrievalHit> hits;
    for (std::size_t i = 0; i < library_scores.size(); ++i) {
        if (library_scores[i].size() != query_scores.size())
            throw Error("retrieve: score length mismatch");
        if (argmax(library_scores[i]) != query_class) continue;
        double d2 = 0;
        for (std::size_t k = 0; k < query_scores.size(); ++k) {
            const double t = query_scores[k] - library_scores[i][k];
            d2 += t * t;
        }
        hits.push_back({i, std::sqrt(d2)});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        return a.distance < b.distance;
    });
    return hits;
}

}  // namespace sonet
