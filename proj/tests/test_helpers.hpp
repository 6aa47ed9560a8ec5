#pragma once

#include <cmath>
#include <vector>

#include "sonet/pointcloud.hpp"
#include "sonet/random.hpp"

namespace sonet::testing {

inline PointCloud random_cloud(std::size_t n, std::size_t dims, std::uint64_t seed,
                               double lo = -1.0, double hi = 1.0) {
    PointCloud c(n, dims);
    RandomStream rng(seed);
    for (auto& v : c.points) v = rng.uniform(lo, hi);
    return c;
}

inline PointCloud permuted(const PointCloud& c, RandomStream& rng) {
    std::vector<std::size_t> order(c.n);
    for (std::size_t i = 0; i < c.n; ++i) order[i] = i;
    for (std::size_t i = c.n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.index(i))]);
    PointCloud out(c.n, c.dims);
    out.class_id = c.class_id;
    if (c.has_normals()) out.normals.resize(c.n * c.dims);
    if (c.has_labels()) out.labels.resize(c.n);
    for (std::size_t i = 0; i < c.n; ++i) {
        for (std::size_t d = 0; d < c.dims; ++d) {
            out.point(i)[d] = c.point(order[i])[d];
            if (c.has_normals()) out.normal(i)[d] = c.normal(order[i])[d];
        }
        if (c.has_labels()) out.labels[i] = c.labels[order[i]];
    }
    return out;
}

// chi-square 0.999 quantile (Wilson-Hilferty approximation)
inline double chi2_q999(double dof) {
    const double z = 3.0902;  // N(0,1) 0.999 quantile
    const double a = 2.0 / (9.0 * dof);
    const double t = 1.0 - a + z * std::sqrt(a);
    return dof * t * t * t;
}

}  // namespace sonet::testing
