#include "sonet/som.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "sonet/random.hpp"

namespace sonet {

SomGrid potential_init(std::size_t m, std::size_t dims, const PotentialInitConfig& cfg) {
    if (m < 2) throw Error("potential_init: m must be >= 2");
    if (dims != 2 && dims != 3) throw Error("potential_init: dims must be 2 or 3");
    SomGrid grid;
    grid.m = m;
    grid.dims = dims;
    const std::size_t M = m * m;
    grid.nodes.resize(M * dims);
    RandomStream rng(cfg.seed);
    for (auto& v : grid.nodes) v = rng.uniform(-1.0, 1.0);

    std::vector<double> force(M * dims);
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
        std::fill(force.begin(), force.end(), 0.0);
        for (std::size_t j = 0; j < M; ++j) {
            double* fj = force.data() + j * dims;
            const double* sj = grid.node(j);
            for (std::size_t d = 0; d < dims; ++d) fj[d] = -sj[d];
            for (std::size_t k = 0; k < M; ++k) {
                if (k == j) continue;
                const double* sk = grid.node(k);
                double diff[3];
                double d2 = 0;
                for (std::size_t d = 0; d < dims; ++d) {
                    diff[d] = sj[d] - sk[d];
                    d2 += diff[d] * diff[d];
                }
                if (d2 == 0.0) {
                    // coincident nodes: nudge the later-indexed one along axis 0
                    if (j > k) {
                        grid.node(j)[0] += 1e-6;
                        diff[0] = 1e-6;
                        d2 = 1e-12;
                    } else {
                        continue;  // the partner gets the nudge on its own visit
                    }
                }
                for (std::size_t d = 0; d < dims; ++d) fj[d] += cfg.lambda * diff[d] / d2;
            }
        }
        double max_disp = 0.0;
        for (std::size_t i = 0; i < M * dims; ++i) {
            const double step = cfg.eta * force[i];
            grid.nodes[i] += step;
            max_disp = std::max(max_disp, std::abs(step));
        }
        if (max_disp < 1e-6) break;
    }
    return grid;
}

double neighborhood_weight(double x, double y, double p, double q, double sigma_x, double sigma_y) {
    if (sigma_x <= 0 || sigma_y <= 0) throw Error("neighborhood_weight: sigmas must be positive");
    const double dx = (x - p) / sigma_x;
    const double dy = (y - q) / sigma_y;
    return std::exp(-0.5 * (dx * dx + dy * dy)) / (2.0 * M_PI * sigma_x * sigma_y);
}

std::size_t nearest_node(const double* p, const SomGrid& som) {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < som.node_count(); ++j) {
        const double* s = som.node(j);
        double d2 = 0;
        for (std::size_t d = 0; d < som.dims; ++d) {
            const double t = p[d] - s[d];
            d2 += t * t;
        }
        if (d2 < best_d2) {
            best_d2 = d2;
            best = j;
        }
    }
    return best;
}

namespace {

// Canonical point order: lexicographic by coordinates. Equal points are
// interchangeable, so ties need no further rule.
std::vector<std::size_t> canonical_order(const PointCloud& cloud) {
    std::vector<std::size_t> order(cloud.n);
    for (std::size_t i = 0; i < cloud.n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double* pa = cloud.point(a);
        const double* pb = cloud.point(b);
        for (std::size_t d = 0; d < cloud.dims; ++d) {
            if (pa[d] != pb[d]) return pa[d] < pb[d];
        }
        return false;
    });
    return order;
}

constexpr std::size_t kChunk = 256;

// Accumulate per-node pull vectors and total weights for points
// [begin,end) of the sorted order. Layout: M*(D+1) doubles, the weighted
// displacement sum followed by the weight sum for each node.
void accumulate_range(const PointCloud& cloud, const SomGrid& som,
                      const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                      double sigma, std::vector<double>& acc) {
    const std::size_t m = som.m;
    const std::size_t M = som.node_count();
    const std::size_t D = som.dims;
    for (std::size_t oi = begin; oi < end; ++oi) {
        const double* pt = cloud.point(order[oi]);
        const std::size_t win = nearest_node(pt, som);
        const double wp = static_cast<double>(win / m);
        const double wq = static_cast<double>(win % m);
        for (std::size_t j = 0; j < M; ++j) {
            const double gx = static_cast<double>(j / m);
            const double gy = static_cast<double>(j % m);
            const double w = neighborhood_weight(gx, gy, wp, wq, sigma, sigma);
            const double* s = som.node(j);
            double* a = acc.data() + j * (D + 1);
            for (std::size_t d = 0; d < D; ++d) a[d] += w * (pt[d] - s[d]);
            a[D] += w;
        }
    }
}

}  // namespace

SomGrid som_train(const PointCloud& cloud, const SomGrid& init, const SomTrainConfig& cfg) {
    cloud.validate();
    if (cloud.dims != init.dims) throw Error("som_train: cloud/grid dimension mismatch");
    SomGrid som = init;
    const std::size_t M = som.node_count();
    const std::size_t D = som.dims;
    const auto order = canonical_order(cloud);

    double eta = cfg.eta0;
    double sigma = cfg.sigma0 > 0 ? cfg.sigma0 : static_cast<double>(som.m) / 2.0;
    const std::size_t workers = std::max<std::size_t>(1, cfg.workers);

    const std::size_t n_chunks = (cloud.n + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> partial(n_chunks);

    for (std::size_t t = 0; t < cfg.max_iter; ++t) {
        // chunked accumulation over the sorted order; partial sums are
        // combined in chunk order so any worker count gives identical bits
        if (workers == 1 || n_chunks == 1) {
            for (std::size_t c = 0; c < n_chunks; ++c) {
                partial[c].assign(M * (D + 1), 0.0);
                accumulate_range(cloud, som, order, c * kChunk,
                                 std::min(cloud.n, (c + 1) * kChunk), sigma, partial[c]);
            }
        } else {
            std::vector<std::thread> pool;
            std::size_t per = (n_chunks + workers - 1) / workers;
            for (std::size_t w = 0; w < workers; ++w) {
                std::size_t c0 = w * per, c1 = std::min(n_chunks, (w + 1) * per);
                if (c0 >= c1) break;
                pool.emplace_back([&, c0, c1]() {
                    for (std::size_t c = c0; c < c1; ++c) {
                        partial[c].assign(M * (D + 1), 0.0);
                        accumulate_range(cloud, som, order, c * kChunk,
                                         std::min(cloud.n, (c + 1) * kChunk), sigma, partial[c]);
                    }
                });
            }
            for (auto& th : pool) th.join();
        }
        std::vector<double> acc(M * (D + 1), 0.0);
        for (std::size_t c = 0; c < n_chunks; ++c)
            for (std::size_t i = 0; i < M * (D + 1); ++i) acc[i] += partial[c][i];

        // The update is the weight-normalized pull toward each node's
        // weighted centroid; normalization keeps the step size independent
        // of the point count. Gaussian weights are strictly positive, so
        // the denominator never vanishes for a non-empty cloud.
        for (std::size_t j = 0; j < M; ++j) {
            const double wsum = acc[j * (D + 1) + D];
            for (std::size_t d = 0; d < D; ++d)
                som.node(j)[d] += eta * acc[j * (D + 1) + d] / wsum;
        }
        eta = std::max(cfg.eta_min, eta * cfg.eta_decay);
        sigma = std::max(cfg.sigma_min, sigma * cfg.sigma_decay);
    }
    return som;
}

double quantization_error(const PointCloud& cloud, const SomGrid& som) {
    if (cloud.n == 0 || som.node_count() == 0) throw Error("quantization_error: empty input");
    double total = 0;
    for (std::size_t i = 0; i < cloud.n; ++i) {
        const double* p = cloud.point(i);
        const std::size_t j = nearest_node(p, som);
        double d2 = 0;
        for (std::size_t d = 0; d < som.dims; ++d) {
            const double t = p[d] - som.node(j)[d];
            d2 += t * t;
        }
        total += std::sqrt(d2);
    }
    return total / static_cast<double>(cloud.n);
}

}  // namespace sonet
