#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sonet/grouping.hpp"
#include "sonet/tensor.hpp"

namespace sonet {

enum class Mode { Train, Eval };

// Running statistics for one batch-norm layer.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormState init(std::size_t features) {
        BatchNormState s;
        s.running_mean.assign(features, 0.0);
        s.running_var.assign(features, 1.0);
        return s;
    }
};

// Reverse-mode tape over dense double tensors. Op methods record the
// forward value and a closure that accumulates input gradients; backward()
// replays closures in exact reverse recording order.
class Tape {
public:
    int leaf(Tensor value);

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // Seeds d(root)=1 (root must be scalar) and propagates.
    void backward(int root);

    // y = x W + b for x: B x Fin, W: Fin x Fout, b: Fout
    int dense(int x, int W, int b);
    int relu(int x);
    // x: R x F, normalized over rows; state is updated in train mode.
    int batchnorm(int x, int gamma, int beta, BatchNormState& state, Mode mode);
    // x: B x Cin x H x W; K: Cout x Cin x ks x ks, ks in {1,3}; 3x3 uses
    // zero padding 1 (same-size output), 1x1 no padding; stride 1.
    int conv2d(int x, int K, int b, std::size_t ksize);
    int upsample_nn_2x(int x);                       // B x C x H x W -> B x C x 2H x 2W
    int concat_cols(int a, int b);                   // R x Ca , R x Cb -> R x (Ca+Cb)
    int concat_rows(int a, int b);                   // Ra x C , Rb x C -> (Ra+Rb) x C
    int nchw_to_rows(int x);                         // B x C x H x W -> (B*H*W) x C
    int rows_to_nchw(int x, std::size_t B, std::size_t C, std::size_t H, std::size_t W);
    int gather_rows(int x, std::vector<std::size_t> rows);
    int group_max(int x, const std::vector<std::vector<std::size_t>>& groups);
    int group_mean(int x, const std::vector<std::vector<std::size_t>>& groups);
    int dropout(int x, double keep_ratio, std::uint64_t seed, Mode mode);
    int softmax_cross_entropy(int logits, const std::vector<int>& labels);  // mean over batch
    // Symmetric mean nearest-neighbor distance between two point sets,
    // a: A x D, b: B x D.
    int chamfer(int a, int b);
    int reshape(int x, std::vector<std::size_t> shape);
    int add(int a, int b);
    int mul(int a, int b);
    int scale(int x, double c);
    int sum(int x);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;  // empty for leaves
    };
    std::vector<Node> nodes_;

    int push(Tensor value, std::function<void()> back);
    Tensor& grad_mut(int id) { return nodes_[id].grad; }
};

// Max relative finite-difference error of d(f)/d(params). `build` records
// the computation on a fresh tape from leaf ids for each param and returns
// the scalar root id. Central differences with the given eps.
double gradcheck(const std::function<int(Tape&, const std::vector<int>&)>& build,
                 const std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace sonet
