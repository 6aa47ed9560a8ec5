#pragma once

#include <cstdint>
#include <vector>

#include "sonet/pointcloud.hpp"

namespace sonet {

// m x m grid of nodes in D-dimensional coordinate space.
// Flat node index j = x*m + y for grid position (x,y).
struct SomGrid {
    std::size_t m = 0;
    std::size_t dims = 0;
    std::vector<double> nodes;  // (m*m) * dims, row-major

    std::size_t node_count() const { return m * m; }
    double* node(std::size_t j) { return nodes.data() + j * dims; }
    const double* node(std::size_t j) const { return nodes.data() + j * dims; }
};

struct PotentialInitConfig {
    double lambda = 0.02;   // repulsion weight
    double eta = 0.1;       // step size
    std::size_t max_iter = 500;
    std::uint64_t seed = 42;
};

struct SomTrainConfig {
    std::size_t max_iter = 60;
    double eta0 = 0.25;
    double eta_decay = 0.96;
    double eta_min = 0.01;
    double sigma0 = 0.0;       // 0 -> m/2 grid units
    double sigma_decay = 0.92;
    double sigma_min = 0.4;
    std::size_t workers = 1;
};

// Disperse m*m nodes inside the unit ball with a potential field:
// attraction toward the origin plus pairwise repulsion. Pure function of
// (m, dims, cfg); identical for every input cloud.
SomGrid potential_init(std::size_t m, std::size_t dims, const PotentialInitConfig& cfg = {});

// Bivariate Gaussian neighborhood weight of grid node (x,y) around winner
// (p,q), diagonal covariance diag(sigma_x^2, sigma_y^2).
double neighborhood_weight(double x, double y, double p, double q, double sigma_x, double sigma_y);

// Batch-update SOM training. Points are accumulated in canonical
// (lexicographically sorted) order, so the result is bit-identical under
// any permutation of the input and any worker count.
SomGrid som_train(const PointCloud& cloud, const SomGrid& init, const SomTrainConfig& cfg = {});

// Mean distance from each point to its nearest node.
double quantization_error(const PointCloud& cloud, const SomGrid& som);

// Index of the nearest node to a point (ties to the lowest flat index).
std::size_t nearest_node(const double* p, const SomGrid& som);

}  // namespace sonet
