#pragma once

#include <map>
#include <string>
#include <vector>

#include "sonet/tensor.hpp"

namespace sonet {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double base_lr = 0.001;
    std::uint64_t t = 0;
    std::map<std::string, Tensor> m;  // first moments, keyed by parameter name
    std::map<std::string, Tensor> v;  // second moments
};

// One Adam update over a set of named parameters. Moments are created on
// first sight of a name; the step counter advances once per call.
void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state, double lr);

struct LrSchedule {
    double base_lr = 0.001;
    std::size_t decay_every = 20;  // epochs
    double factor = 0.5;

    double lr_at(std::size_t epoch) const {  // epoch is 0-based
        double lr = base_lr;
        for (std::size_t e = decay_every; e <= epoch; e += decay_every) lr *= factor;
        return lr;
    }
};

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

// Mean over a category's parts of per-part IoU; parts absent from both
// prediction and truth count as 1.
double instance_iou(const std::vector<int>& pred, const std::vector<int>& truth,
                    const std::vector<int>& category_parts);

double mean_iou(const std::vector<std::vector<int>>& preds,
                const std::vector<std::vector<int>>& truths,
                const std::vector<std::vector<int>>& category_parts_per_instance);

}  // namespace sonet
