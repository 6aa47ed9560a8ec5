#include "sonet/nn.hpp"

#include <algorithm>
#include <cmath>

namespace sonet {

void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state, double lr) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw Error("adam_step: missing gradient for " + name);
        const Tensor& g = git->second;
        if (!g.same_shape(p)) throw Error("adam_step: gradient shape mismatch for " + name);
        auto& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
        auto& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
        if (!m.same_shape(p) || !v.same_shape(p))
            throw Error("adam_step: moment shape mismatch for " + name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m.data[i] = state.beta1 * m.data[i] + (1 - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (1 - state.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw Error("accuracy: label arrays must be aligned and non-empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double instance_iou(const std::vector<int>& pred, const std::vector<int>& truth,
                    const std::vector<int>& category_parts) {
    if (pred.size() != truth.size() || pred.empty())
        throw Error("instance_iou: label arrays must be aligned and non-empty");
    if (category_parts.empty()) throw Error("instance_iou: empty part set");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool pok = std::find(category_parts.begin(), category_parts.end(), pred[i]) !=
                         category_parts.end();
        const bool tok = std::find(category_parts.begin(), category_parts.end(), truth[i]) !=
                         category_parts.end();
        if (!pok || !tok) throw Error("instance_iou: label outside the category's part set");
    }
    double total = 0;
    for (int part : category_parts) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == part;
            const bool t = truth[i] == part;
            if (p && t) ++inter;
            if (p || t) ++uni;
        }
        total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return total / static_cast<double>(category_parts.size());
}

double mean_iou(const std::vector<std::vector<int>>& preds,
                const std::vector<std::vector<int>>& truths,
                const std::vector<std::vector<int>>& category_parts_per_instance) {
    if (preds.size() != truths.size() || preds.size() != category_parts_per_instance.size() ||
        preds.empty())
        throw Error("mean_iou: instance arrays must be aligned and non-empty");
    double total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        total += instance_iou(preds[i], truths[i], category_parts_per_instance[i]);
    return total / static_cast<double>(preds.size());
}

}  // namespace sonet
