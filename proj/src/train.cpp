#include "sonet/train.hpp"

#include <fstream>
#include <functional>
#include <numeric>

namespace sonet {

void write_metric_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open file for writing: " + path);
    f << "epoch,lr,train_loss,eval_metric\n";
    for (const auto& e : log)
        f << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.eval_metric << '\n';
}

std::vector<SomGrid> train_soms(const Dataset& ds, std::size_t m, const SomTrainConfig& cfg,
                                const PotentialInitConfig& init_cfg) {
    if (ds.clouds.empty()) throw Error("train_soms: empty dataset");
    const SomGrid init = potential_init(m, ds.clouds.front().dims, init_cfg);
    std::vector<SomGrid> soms;
    soms.reserve(ds.size());
    for (const auto& cloud : ds.clouds) soms.push_back(som_train(cloud, init, cfg));
    return soms;
}

namespace {

void apply_warm_start(const Checkpoint& ckpt, ModelParams& params) {
    std::vector<std::string> bad;
    bool any = false;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("enc.", 0) != 0) continue;  // encoder subset only
        any = true;
        auto it = params.tensors.find(name);
        if (it == params.tensors.end() || !it->second.same_shape(t)) {
            bad.push_back(name);
            continue;
        }
        it->second = t;
    }
    if (!any) throw Error("warm start: checkpoint contains no encoder tensors");
    if (!bad.empty()) {
        std::string msg = "warm start: shape mismatch for:";
        for (const auto& n : bad) msg += " " + n;
        throw Error(msg);
    }
}

using SampleLoss =
    std::function<int(TapeCtx&, const PointCloud&, const SomGrid&)>;

FitResult fit_generic(ModelParams& params, const Dataset& train,
                      const std::vector<SomGrid>& soms, const TrainConfig& cfg,
                      const Checkpoint* warm_start, const SampleLoss& sample_loss,
                      const std::function<double()>& eval_metric) {
    if (train.clouds.empty()) throw Error("fit: empty dataset");
    if (soms.size() != train.size()) throw Error("fit: SOM count does not match dataset");
    if (warm_start) apply_warm_start(*warm_start, params);

    AdamState adam;
    adam.base_lr = cfg.schedule.base_lr;
    RandomStream rng(cfg.seed);
    FitResult res;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.schedule.lr_at(epoch);
        // Fisher-Yates shuffle
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.index(i));
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::map<std::string, Tensor> batch_grads;
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (std::size_t s = start; s < end; ++s) {
                const PointCloud* cloud = &train.clouds[order[s]];
                const SomGrid* som = &soms[order[s]];
                PointCloud aug_cloud;
                SomGrid aug_som;
                if (cfg.augment_enabled) {
                    AugmentParams ap = cfg.augment;
                    ap.seed = rng.raw();
                    std::tie(aug_cloud, aug_som) = augment(*cloud, *som, ap);
                    cloud = &aug_cloud;
                    som = &aug_som;
                }
                TapeCtx ctx(params, Mode::Train, rng.raw());
                const int loss = sample_loss(ctx, *cloud, *som);
                epoch_loss += ctx.tape().value(loss).data[0];
                ctx.backward(loss);
                for (auto& [name, g] : ctx.collect_grads()) {
                    auto [it, inserted] = batch_grads.try_emplace(name, g.shape);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        it->second.data[i] += inv_b * g.data[i];
                }
            }
            // parameters missing from the batch gradient (dropout never
            // dropped into them) would be a bug; adam_step requires full
            // coverage, so fill any gap with zeros
            std::map<std::string, Tensor> trainables;
            for (auto& [name, t] : params.tensors) {
                if (!ModelParams::trainable(name)) continue;
                auto it = batch_grads.find(name);
                if (it == batch_grads.end()) batch_grads.emplace(name, Tensor(t.shape));
                trainables.emplace(name, std::move(t));
            }
            adam_step(trainables, batch_grads, adam, lr);
            for (auto& [name, t] : trainables) params.tensors[name] = std::move(t);
        }
        epoch_loss /= static_cast<double>(train.size());
        res.log.push_back({epoch + 1, lr, epoch_loss, eval_metric()});
    }

    res.checkpoint.tensors = params.tensors;
    res.checkpoint.opt_m = adam.m;
    res.checkpoint.opt_v = adam.v;
    res.checkpoint.step = adam.t;
    return res;
}

}  // namespace

double eval_classifier(const Classifier& model, const Dataset& ds,
                       const std::vector<SomGrid>& soms) {
    std::vector<int> pred, truth;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        pred.push_back(model.predict(ds.clouds[i], soms[i]));
        truth.push_back(ds.clouds[i].class_id);
    }
    return accuracy(pred, truth);
}

double eval_autoencoder_chamfer(const Autoencoder& model, const Dataset& ds,
                                const std::vector<SomGrid>& soms) {
    double total = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        TapeCtx ctx(const_cast<ModelParams&>(model.params()), Mode::Eval);
        const int loss = model.loss(ctx, ds.clouds[i], soms[i], false);
        total += ctx.tape().value(loss).data[0];
    }
    return total / static_cast<double>(ds.size());
}

double eval_segmenter_miou(const Segmenter& model, const Dataset& ds,
                           const std::vector<SomGrid>& soms) {
    std::vector<std::vector<int>> preds, truths, parts;
    std::vector<int> all_parts;
    for (std::size_t p = 0; p < model.config().num_parts; ++p)
        all_parts.push_back(static_cast<int>(p));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        preds.push_back(model.predict(ds.clouds[i], soms[i]));
        truths.push_back(ds.clouds[i].labels);
        parts.push_back(all_parts);
    }
    return mean_iou(preds, truths, parts);
}

FitResult fit_classifier(Classifier& model, const Dataset& train, const std::vector<SomGrid>& soms,
                         const Dataset& eval, const std::vector<SomGrid>& eval_soms,
                         const TrainConfig& cfg, const Checkpoint* warm_start) {
    for (const auto& c : train.clouds)
        if (c.class_id < 0) throw Error("fit_classifier: cloud without class label");
    auto loss = [&](TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) {
        const int lg = model.logits(ctx, cloud, som);
        return ctx.tape().softmax_cross_entropy(lg, {cloud.class_id});
    };
    auto metric = [&]() {
        return eval.clouds.empty() ? eval_classifier(model, train, soms)
                                   : eval_classifier(model, eval, eval_soms);
    };
    return fit_generic(model.params(), train, soms, cfg, warm_start, loss, metric);
}

FitResult fit_autoencoder(Autoencoder& model, const Dataset& train,
                          const std::vector<SomGrid>& soms, const Dataset& eval,
                          const std::vector<SomGrid>& eval_soms, const TrainConfig& cfg,
                          const Checkpoint* warm_start) {
    auto loss = [&](TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) {
        return model.loss(ctx, cloud, som, cfg.coarse_supervision);
    };
    auto metric = [&]() {
        return eval.clouds.empty() ? eval_autoencoder_chamfer(model, train, soms)
                                   : eval_autoencoder_chamfer(model, eval, eval_soms);
    };
    return fit_generic(model.params(), train, soms, cfg, warm_start, loss, metric);
}

FitResult fit_segmenter(Segmenter& model, const Dataset& train, const std::vector<SomGrid>& soms,
                        const Dataset& eval, const std::vector<SomGrid>& eval_soms,
                        const TrainConfig& cfg, const Checkpoint* warm_start) {
    for (const auto& c : train.clouds)
        if (!c.has_labels()) throw Error("fit_segmenter: cloud without part labels");
    auto loss = [&](TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) {
        const int sc = model.scores(ctx, cloud, som);
        return ctx.tape().softmax_cross_entropy(sc, cloud.labels);
    };
    auto metric = [&]() {
        return eval.clouds.empty() ? eval_segmenter_miou(model, train, soms)
                                   : eval_segmenter_miou(model, eval, eval_soms);
    };
    return fit_generic(model.params(), train, soms, cfg, warm_start, loss, metric);
}

}  // namespace sonet
