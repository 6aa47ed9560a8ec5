#include "sonet/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sonet/random.hpp"

namespace sonet {

namespace {

void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
    for (double v : t.data)
        if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite forward value");
#else
    (void)t;
    (void)op;
#endif
}

void accumulate(Tensor& g, const Tensor& shape_like, const std::vector<double>& delta) {
    if (g.data.empty()) g = Tensor(shape_like.shape);
    for (std::size_t i = 0; i < delta.size(); ++i) g.data[i] += delta[i];
}

}  // namespace

int Tape::push(Tensor value, std::function<void()> back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back)});
    return static_cast<int>(nodes_.size() - 1);
}

int Tape::leaf(Tensor value) { return push(std::move(value), {}); }

void Tape::backward(int root) {
    if (nodes_[root].value.size() != 1) throw Error("backward: root must be scalar");
    for (auto& n : nodes_) n.grad = Tensor{};
    nodes_[root].grad = Tensor(nodes_[root].value.shape);
    nodes_[root].grad.data[0] = 1.0;
    for (int id = root; id >= 0; --id) {
        if (nodes_[id].grad.data.empty() || !nodes_[id].back) continue;
        nodes_[id].back();
    }
    // leaves touched by no op keep an empty grad; give them zeros for callers
    for (auto& n : nodes_)
        if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
}

int Tape::dense(int x, int W, int b) {
    const Tensor& xv = value(x);
    const Tensor& Wv = value(W);
    const Tensor& bv = value(b);
    if (xv.rank() != 2 || Wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != Wv.dim(0) ||
        bv.dim(0) != Wv.dim(1))
        throw Error("dense: shape mismatch x" + shape_str(xv.shape) + " W" + shape_str(Wv.shape) +
                    " b" + shape_str(bv.shape));
    const std::size_t B = xv.dim(0), Fi = xv.dim(1), Fo = Wv.dim(1);
    Tensor y({B, Fo});
    for (std::size_t r = 0; r < B; ++r) {
        double* yr = y.data.data() + r * Fo;
        for (std::size_t j = 0; j < Fo; ++j) yr[j] = bv.data[j];
        const double* xr = xv.data.data() + r * Fi;
        for (std::size_t i = 0; i < Fi; ++i) {
            const double xi = xr[i];
            const double* wr = Wv.data.data() + i * Fo;
            for (std::size_t j = 0; j < Fo; ++j) yr[j] += xi * wr[j];
        }
    }
    check_finite(y, "dense");
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, W, b, out, B, Fi, Fo]() {
        const Tensor& gy = grad(out);
        const Tensor& xv = value(x);
        const Tensor& Wv = value(W);
        Tensor& gx = grad_mut(x);
        Tensor& gW = grad_mut(W);
        Tensor& gb = grad_mut(b);
        if (gx.data.empty()) gx = Tensor(xv.shape);
        if (gW.data.empty()) gW = Tensor(Wv.shape);
        if (gb.data.empty()) gb = Tensor(value(b).shape);
        for (std::size_t r = 0; r < B; ++r) {
            const double* gyr = gy.data.data() + r * Fo;
            const double* xr = xv.data.data() + r * Fi;
            double* gxr = gx.data.data() + r * Fi;
            for (std::size_t j = 0; j < Fo; ++j) gb.data[j] += gyr[j];
            for (std::size_t i = 0; i < Fi; ++i) {
                const double* wr = Wv.data.data() + i * Fo;
                double* gWr = gW.data.data() + i * Fo;
                double acc = 0;
                const double xi = xr[i];
                for (std::size_t j = 0; j < Fo; ++j) {
                    acc += gyr[j] * wr[j];
                    gWr[j] += xi * gyr[j];
                }
                gxr[i] += acc;
            }
        }
    };
    return out;
}

int Tape::relu(int x) {
    Tensor y = value(x);
    for (double& v : y.data) v = v > 0 ? v : 0.0;
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out]() {
        const Tensor& gy = grad(out);
        const Tensor& xv = value(x);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(xv.shape);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv.data[i] > 0) gx.data[i] += gy.data[i];
    };
    return out;
}

int Tape::batchnorm(int x, int gamma, int beta, BatchNormState& state, Mode mode) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) throw Error("batchnorm: x must be 2-D");
    const std::size_t R = xv.dim(0), F = xv.dim(1);
    if (value(gamma).size() != F || value(beta).size() != F)
        throw Error("batchnorm: gamma/beta width mismatch");
    if (state.running_mean.size() != F) throw Error("batchnorm: state width mismatch");
    if (mode == Mode::Train && R < 2) throw Error("batchnorm: need at least 2 rows in train mode");

    std::vector<double> mean(F, 0.0), var(F, 0.0);
    if (mode == Mode::Train) {
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t f = 0; f < F; ++f) mean[f] += xv.at(r, f);
        for (std::size_t f = 0; f < F; ++f) mean[f] /= static_cast<double>(R);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t f = 0; f < F; ++f) {
                const double d = xv.at(r, f) - mean[f];
                var[f] += d * d;
            }
        for (std::size_t f = 0; f < F; ++f) var[f] /= static_cast<double>(R);
        for (std::size_t f = 0; f < F; ++f) {
            state.running_mean[f] += state.momentum * (mean[f] - state.running_mean[f]);
            state.running_var[f] += state.momentum * (var[f] - state.running_var[f]);
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    const double eps = state.eps;
    Tensor y({R, F});
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    std::vector<double> inv_std(F);
    for (std::size_t f = 0; f < F; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + eps);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t f = 0; f < F; ++f)
            y.at(r, f) = gv.data[f] * (xv.at(r, f) - mean[f]) * inv_std[f] + bv.data[f];
    check_finite(y, "batchnorm");

    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, gamma, beta, out, R, F, mean, inv_std, mode]() {
        const Tensor& gy = grad(out);
        const Tensor& xv = value(x);
        const Tensor& gv = value(gamma);
        Tensor& gx = grad_mut(x);
        Tensor& gg = grad_mut(gamma);
        Tensor& gb = grad_mut(beta);
        if (gx.data.empty()) gx = Tensor(xv.shape);
        if (gg.data.empty()) gg = Tensor(value(gamma).shape);
        if (gb.data.empty()) gb = Tensor(value(beta).shape);
        const double invR = 1.0 / static_cast<double>(R);
        for (std::size_t f = 0; f < F; ++f) {
            double sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t r = 0; r < R; ++r) {
                const double xhat = (xv.at(r, f) - mean[f]) * inv_std[f];
                sum_dy += gy.at(r, f);
                sum_dy_xhat += gy.at(r, f) * xhat;
            }
            gg.data[f] += sum_dy_xhat;
            gb.data[f] += sum_dy;
            if (mode == Mode::Train) {
                // full batch-statistics chain rule
                for (std::size_t r = 0; r < R; ++r) {
                    const double xhat = (xv.at(r, f) - mean[f]) * inv_std[f];
                    gx.at(r, f) += gv.data[f] * inv_std[f] *
                                   (gy.at(r, f) - invR * sum_dy - invR * xhat * sum_dy_xhat);
                }
            } else {
                for (std::size_t r = 0; r < R; ++r)
                    gx.at(r, f) += gy.at(r, f) * gv.data[f] * inv_std[f];
            }
        }
    };
    return out;
}

int Tape::conv2d(int x, int K, int b, std::size_t ksize) {
    if (ksize != 1 && ksize != 3) throw Error("conv2d: kernel size must be 1 or 3");
    const Tensor& xv = value(x);
    const Tensor& Kv = value(K);
    const Tensor& bv = value(b);
    if (xv.rank() != 4 || Kv.rank() != 4 || bv.rank() != 1)
        throw Error("conv2d: rank mismatch");
    const std::size_t B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::size_t Co = Kv.dim(0);
    if (Kv.dim(1) != Ci || Kv.dim(2) != ksize || Kv.dim(3) != ksize || bv.dim(0) != Co)
        throw Error("conv2d: shape mismatch x" + shape_str(xv.shape) + " K" + shape_str(Kv.shape));
    const long pad = ksize == 3 ? 1 : 0;

    Tensor y({B, Co, H, W});
    auto xat = [&](std::size_t n, std::size_t c, long i, long j) -> double {
        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) return 0.0;
        return xv.data[((n * Ci + c) * H + i) * W + j];
    };
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double acc = bv.data[co];
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t u = 0; u < ksize; ++u)
                            for (std::size_t v = 0; v < ksize; ++v)
                                acc += Kv.data[((co * Ci + ci) * ksize + u) * ksize + v] *
                                       xat(n, ci, static_cast<long>(i + u) - pad,
                                           static_cast<long>(j + v) - pad);
                    y.data[((n * Co + co) * H + i) * W + j] = acc;
                }
    check_finite(y, "conv2d");

    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, K, b, out, B, Ci, Co, H, W, ksize, pad]() {
        const Tensor& gy = grad(out);
        const Tensor& xv = value(x);
        const Tensor& Kv = value(K);
        Tensor& gx = grad_mut(x);
        Tensor& gK = grad_mut(K);
        Tensor& gb = grad_mut(b);
        if (gx.data.empty()) gx = Tensor(xv.shape);
        if (gK.data.empty()) gK = Tensor(Kv.shape);
        if (gb.data.empty()) gb = Tensor(value(b).shape);
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) {
                        const double g = gy.data[((n * Co + co) * H + i) * W + j];
                        gb.data[co] += g;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            for (std::size_t u = 0; u < ksize; ++u)
                                for (std::size_t v = 0; v < ksize; ++v) {
                                    const long ii = static_cast<long>(i + u) - pad;
                                    const long jj = static_cast<long>(j + v) - pad;
                                    if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) ||
                                        jj >= static_cast<long>(W))
                                        continue;
                                    const std::size_t xi = ((n * Ci + ci) * H + ii) * W + jj;
                                    gK.data[((co * Ci + ci) * ksize + u) * ksize + v] +=
                                        g * xv.data[xi];
                                    gx.data[xi] +=
                                        g * Kv.data[((co * Ci + ci) * ksize + u) * ksize + v];
                                }
                    }
    };
    return out;
}

int Tape::upsample_nn_2x(int x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw Error("upsample_nn_2x: x must be 4-D");
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor y({B, C, 2 * H, 2 * W});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < 2 * H; ++i)
                for (std::size_t j = 0; j < 2 * W; ++j)
                    y.data[((n * C + c) * 2 * H + i) * 2 * W + j] =
                        xv.data[((n * C + c) * H + i / 2) * W + j / 2];
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, B, C, H, W]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < 2 * H; ++i)
                    for (std::size_t j = 0; j < 2 * W; ++j)
                        gx.data[((n * C + c) * H + i / 2) * W + j / 2] +=
                            gy.data[((n * C + c) * 2 * H + i) * 2 * W + j];
    };
    return out;
}

int Tape::concat_cols(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
        throw Error("concat_cols: row count mismatch");
    const std::size_t R = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
    Tensor y({R, Ca + Cb});
    for (std::size_t r = 0; r < R; ++r) {
        std::copy_n(av.data.data() + r * Ca, Ca, y.data.data() + r * (Ca + Cb));
        std::copy_n(bv.data.data() + r * Cb, Cb, y.data.data() + r * (Ca + Cb) + Ca);
    }
    int out = push(std::move(y), {});
    nodes_[out].back = [this, a, b, out, R, Ca, Cb]() {
        const Tensor& gy = grad(out);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        if (ga.data.empty()) ga = Tensor(value(a).shape);
        if (gb.data.empty()) gb = Tensor(value(b).shape);
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t c = 0; c < Ca; ++c) ga.data[r * Ca + c] += gy.data[r * (Ca + Cb) + c];
            for (std::size_t c = 0; c < Cb; ++c)
                gb.data[r * Cb + c] += gy.data[r * (Ca + Cb) + Ca + c];
        }
    };
    return out;
}

int Tape::concat_rows(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
        throw Error("concat_rows: column count mismatch");
    const std::size_t Ra = av.dim(0), Rb = bv.dim(0), C = av.dim(1);
    Tensor y({Ra + Rb, C});
    std::copy(av.data.begin(), av.data.end(), y.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + static_cast<long>(Ra * C));
    int out = push(std::move(y), {});
    nodes_[out].back = [this, a, b, out, Ra, Rb, C]() {
        const Tensor& gy = grad(out);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        if (ga.data.empty()) ga = Tensor(value(a).shape);
        if (gb.data.empty()) gb = Tensor(value(b).shape);
        for (std::size_t i = 0; i < Ra * C; ++i) ga.data[i] += gy.data[i];
        for (std::size_t i = 0; i < Rb * C; ++i) gb.data[i] += gy.data[Ra * C + i];
    };
    return out;
}

int Tape::nchw_to_rows(int x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw Error("nchw_to_rows: x must be 4-D");
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor y({B * H * W, C});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < H * W; ++p)
                y.data[(n * H * W + p) * C + c] = xv.data[(n * C + c) * H * W + p];
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, B, C, H, W]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < H * W; ++p)
                    gx.data[(n * C + c) * H * W + p] += gy.data[(n * H * W + p) * C + c];
    };
    return out;
}

int Tape::rows_to_nchw(int x, std::size_t B, std::size_t C, std::size_t H, std::size_t W) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2 || xv.dim(0) != B * H * W || xv.dim(1) != C)
        throw Error("rows_to_nchw: shape mismatch");
    Tensor y({B, C, H, W});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < H * W; ++p)
                y.data[(n * C + c) * H * W + p] = xv.data[(n * H * W + p) * C + c];
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, B, C, H, W]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < H * W; ++p)
                    gx.data[(n * H * W + p) * C + c] += gy.data[(n * C + c) * H * W + p];
    };
    return out;
}

int Tape::gather_rows(int x, std::vector<std::size_t> rows) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) throw Error("gather_rows: x must be 2-D");
    const std::size_t C = xv.dim(1);
    Tensor y({rows.size(), C});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= xv.dim(0)) throw Error("gather_rows: index out of range");
        std::copy_n(xv.data.data() + rows[r] * C, C, y.data.data() + r * C);
    }
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, rows = std::move(rows), C]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < C; ++c) gx.data[rows[r] * C + c] += gy.data[r * C + c];
    };
    return out;
}

int Tape::group_max(int x, const std::vector<std::vector<std::size_t>>& groups) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) throw Error("group_max: x must be 2-D");
    const std::size_t C = xv.dim(1);
    GroupMax gm = group_reduce_max(xv, groups, std::vector<double>(C, 0.0));
    const std::size_t G = groups.size();
    int out = push(std::move(gm.out), {});
    nodes_[out].back = [this, x, out, argmax = std::move(gm.argmax), G, C]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t c = 0; c < C; ++c) {
                const long r = argmax[g * C + c];
                if (r >= 0) gx.data[static_cast<std::size_t>(r) * C + c] += gy.at(g, c);
            }
    };
    return out;
}

int Tape::group_mean(int x, const std::vector<std::vector<std::size_t>>& groups) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) throw Error("group_mean: x must be 2-D");
    const std::size_t C = xv.dim(1);
    const std::size_t G = groups.size();
    Tensor y({G, C});
    for (std::size_t g = 0; g < G; ++g) {
        if (groups[g].empty()) continue;  // zeros
        for (std::size_t r : groups[g]) {
            if (r >= xv.dim(0)) throw Error("group_mean: row index out of range");
            for (std::size_t c = 0; c < C; ++c) y.at(g, c) += xv.at(r, c);
        }
        for (std::size_t c = 0; c < C; ++c) y.at(g, c) /= static_cast<double>(groups[g].size());
    }
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, groups, G, C]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t g = 0; g < G; ++g) {
            if (groups[g].empty()) continue;
            const double inv = 1.0 / static_cast<double>(groups[g].size());
            for (std::size_t r : groups[g])
                for (std::size_t c = 0; c < C; ++c) gx.data[r * C + c] += gy.at(g, c) * inv;
        }
    };
    return out;
}

int Tape::dropout(int x, double keep_ratio, std::uint64_t seed, Mode mode) {
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0) throw Error("dropout: keep_ratio must be in (0,1]");
    if (mode == Mode::Eval || keep_ratio == 1.0) {
        Tensor y = value(x);
        int out = push(std::move(y), {});
        nodes_[out].back = [this, x, out]() {
            const Tensor& gy = grad(out);
            Tensor& gx = grad_mut(x);
            if (gx.data.empty()) gx = Tensor(value(x).shape);
            for (std::size_t i = 0; i < gy.size(); ++i) gx.data[i] += gy.data[i];
        };
        return out;
    }
    const Tensor& xv = value(x);
    RandomStream rng(seed);
    std::vector<char> keep(xv.size());
    for (auto& v : keep) v = rng.uniform() < keep_ratio ? 1 : 0;
    const double inv_keep = 1.0 / keep_ratio;
    Tensor y = xv;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = keep[i] ? y.data[i] * inv_keep : 0.0;
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, keep = std::move(keep), inv_keep]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t i = 0; i < gy.size(); ++i)
            if (keep[i]) gx.data[i] += gy.data[i] * inv_keep;
    };
    return out;
}

int Tape::softmax_cross_entropy(int logits, const std::vector<int>& labels) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2 || lv.dim(0) != labels.size())
        throw Error("softmax_cross_entropy: logits/labels mismatch");
    const std::size_t B = lv.dim(0), K = lv.dim(1);
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= K)
            throw Error("softmax_cross_entropy: label out of range");
    Tensor probs({B, K});
    double loss = 0;
    for (std::size_t r = 0; r < B; ++r) {
        double mx = lv.at(r, 0);
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, lv.at(r, k));
        double z = 0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(lv.at(r, k) - mx);
        for (std::size_t k = 0; k < K; ++k) probs.at(r, k) = std::exp(lv.at(r, k) - mx) / z;
        loss -= std::log(probs.at(r, static_cast<std::size_t>(labels[r])));
    }
    loss /= static_cast<double>(B);
    int out = push(Tensor::scalar(loss), {});
    nodes_[out].back = [this, logits, out, probs = std::move(probs), labels, B, K]() {
        const double g = grad(out).data[0];
        Tensor& gx = grad_mut(logits);
        if (gx.data.empty()) gx = Tensor(value(logits).shape);
        const double invB = 1.0 / static_cast<double>(B);
        for (std::size_t r = 0; r < B; ++r)
            for (std::size_t k = 0; k < K; ++k) {
                const double delta = static_cast<std::size_t>(labels[r]) == k ? 1.0 : 0.0;
                gx.data[r * K + k] += g * invB * (probs.data[r * K + k] - delta);
            }
    };
    return out;
}

int Tape::chamfer(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
        throw Error("chamfer: shape mismatch");
    const std::size_t A = av.dim(0), B = bv.dim(0), D = av.dim(1);
    if (A == 0 || B == 0) throw Error("chamfer: empty cloud");
    if (D > 8) throw Error("chamfer: dimension too large");

    std::vector<std::size_t> match_a(A), match_b(B);  // nearest index per row
    // Keep the two directional sums separate and divide once at the end, so
    // chamfer(a, b) and chamfer(b, a) add the exact same values in the same
    // order and the result is bit-symmetric.
    double sum_a = 0, sum_b = 0;
    for (std::size_t i = 0; i < A; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bj = 0;
        for (std::size_t j = 0; j < B; ++j) {
            double d2 = 0;
            for (std::size_t d = 0; d < D; ++d) {
                const double t = av.at(i, d) - bv.at(j, d);
                d2 += t * t;
            }
            if (d2 < best) {
                best = d2;
                bj = j;
            }
        }
        match_a[i] = bj;
        sum_a += std::sqrt(best);
    }
    for (std::size_t j = 0; j < B; ++j) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t i = 0; i < A; ++i) {
            double d2 = 0;
            for (std::size_t d = 0; d < D; ++d) {
                const double t = av.at(i, d) - bv.at(j, d);
                d2 += t * t;
            }
            if (d2 < best) {
                best = d2;
                bi = i;
            }
        }
        match_b[j] = bi;
        sum_b += std::sqrt(best);
    }
    const double loss = sum_a / static_cast<double>(A) + sum_b / static_cast<double>(B);

    int out = push(Tensor::scalar(loss), {});
    nodes_[out].back = [this, a, b, out, match_a = std::move(match_a),
                        match_b = std::move(match_b), A, B, D]() {
        const double g = grad(out).data[0];
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        if (ga.data.empty()) ga = Tensor(av.shape);
        if (gb.data.empty()) gb = Tensor(bv.shape);
        auto route = [&](std::size_t i, std::size_t j, double w) {
            double diff[8];
            double d2 = 0;
            for (std::size_t d = 0; d < D; ++d) {
                diff[d] = av.at(i, d) - bv.at(j, d);
                d2 += diff[d] * diff[d];
            }
            if (d2 == 0.0) return;  // zero-distance pair: zero gradient
            const double inv = 1.0 / std::sqrt(d2);
            for (std::size_t d = 0; d < D; ++d) {
                ga.data[i * D + d] += g * w * diff[d] * inv;
                gb.data[j * D + d] -= g * w * diff[d] * inv;
            }
        };
        for (std::size_t i = 0; i < A; ++i) route(i, match_a[i], 1.0 / static_cast<double>(A));
        for (std::size_t j = 0; j < B; ++j) route(match_b[j], j, 1.0 / static_cast<double>(B));
    };
    return out;
}

int Tape::reshape(int x, std::vector<std::size_t> shape) {
    const Tensor& xv = value(x);
    if (Tensor::count(shape) != xv.size()) throw Error("reshape: element count mismatch");
    Tensor y(std::move(shape), xv.data);
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data[i] += gy.data[i];
    };
    return out;
}

int Tape::add(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw Error("add: shape mismatch");
    Tensor y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv.data[i];
    int out = push(std::move(y), {});
    nodes_[out].back = [this, a, b, out]() {
        const Tensor& gy = grad(out);
        accumulate(grad_mut(a), value(a), gy.data);
        accumulate(grad_mut(b), value(b), gy.data);
    };
    return out;
}

int Tape::mul(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw Error("mul: shape mismatch");
    Tensor y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= bv.data[i];
    int out = push(std::move(y), {});
    nodes_[out].back = [this, a, b, out]() {
        const Tensor& gy = grad(out);
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        if (ga.data.empty()) ga = Tensor(av.shape);
        if (gb.data.empty()) gb = Tensor(bv.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga.data[i] += gy.data[i] * bv.data[i];
            gb.data[i] += gy.data[i] * av.data[i];
        }
    };
    return out;
}

int Tape::scale(int x, double c) {
    Tensor y = value(x);
    for (double& v : y.data) v *= c;
    int out = push(std::move(y), {});
    nodes_[out].back = [this, x, out, c]() {
        const Tensor& gy = grad(out);
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data[i] += gy.data[i] * c;
    };
    return out;
}

int Tape::sum(int x) {
    const Tensor& xv = value(x);
    double s = 0;
    for (double v : xv.data) s += v;
    int out = push(Tensor::scalar(s), {});
    nodes_[out].back = [this, x, out]() {
        const double g = grad(out).data[0];
        Tensor& gx = grad_mut(x);
        if (gx.data.empty()) gx = Tensor(value(x).shape);
        for (double& v : gx.data) v += g;
    };
    return out;
}

double gradcheck(const std::function<int(Tape&, const std::vector<int>&)>& build,
                 const std::vector<Tensor>& params, double eps) {
    auto evaluate = [&](const std::vector<Tensor>& p) {
        Tape t;
        std::vector<int> ids;
        ids.reserve(p.size());
        for (const auto& tensor : p) ids.push_back(t.leaf(tensor));
        const int root = build(t, ids);
        return t.value(root).data[0];
    };

    Tape t;
    std::vector<int> ids;
    for (const auto& tensor : params) ids.push_back(t.leaf(tensor));
    const int root = build(t, ids);
    t.backward(root);

    double max_rel = 0;
    std::vector<Tensor> work = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double orig = work[p].data[i];
            work[p].data[i] = orig + eps;
            const double fp = evaluate(work);
            work[p].data[i] = orig - eps;
            const double fm = evaluate(work);
            work[p].data[i] = orig;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = t.grad(ids[p]).data[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace sonet
