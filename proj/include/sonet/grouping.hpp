#pragma once

#include <vector>

#include "sonet/pointcloud.hpp"
#include "sonet/som.hpp"

namespace sonet {

// Point-to-node kNN association. Row r = i*k + c holds point i's c-th
// nearest node; normalized[r] = points[i] - nodes[knn_nodes[i][c]].
struct Assignment {
    std::size_t n = 0;       // points
    std::size_t k = 0;       // neighbors per point
    std::size_t node_total = 0;
    std::size_t dims = 0;
    std::vector<std::size_t> knn_nodes;   // n*k, ascending by distance
    std::vector<double> normalized;       // (k*n)*dims
    std::vector<std::size_t> owner_point; // k*n
    std::vector<std::size_t> owner_node;  // k*n
    std::vector<std::vector<std::size_t>> node_members;  // per node, row indices
    std::vector<bool> isolated;           // per node

    std::size_t rows() const { return n * k; }
};

// For each point the k nearest SOM nodes (ties to the lowest node index).
Assignment knn_assign(const PointCloud& cloud, const SomGrid& som, std::size_t k);

// For each node its k_prime nearest nodes including itself.
std::vector<std::size_t> node_knn(const SomGrid& som, std::size_t k_prime);

// Channel-wise max over the member rows of each group; empty groups get
// the fill vector and argmax sentinel -1.
struct GroupMax {
    Tensor out;                 // G x C
    std::vector<long> argmax;   // G*C source row indices, -1 for fill
};
GroupMax group_reduce_max(const Tensor& rows, const std::vector<std::vector<std::size_t>>& groups,
                          const std::vector<double>& fill);

}  // namespace sonet
