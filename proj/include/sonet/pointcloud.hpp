#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sonet/tensor.hpp"

namespace sonet {

// A cloud of N points in D dimensions (D = 2 or 3), coordinates in
// normalized space, with optional unit normals and per-point part labels.
struct PointCloud {
    std::size_t n = 0;
    std::size_t dims = 0;
    std::vector<double> points;              // n*dims, row-major
    std::vector<double> normals;             // empty or n*dims
    std::vector<int> labels;                 // empty or n
    int class_id = -1;                       // optional category

    PointCloud() = default;
    PointCloud(std::size_t n_, std::size_t d_) : n(n_), dims(d_), points(n_ * d_, 0.0) {}

    bool has_normals() const { return !normals.empty(); }
    bool has_labels() const { return !labels.empty(); }

    double* point(std::size_t i) { return points.data() + i * dims; }
    const double* point(std::size_t i) const { return points.data() + i * dims; }
    double* normal(std::size_t i) { return normals.data() + i * dims; }
    const double* normal(std::size_t i) const { return normals.data() + i * dims; }

    void validate() const;
};

// Shift by the centroid, then divide by the max absolute coordinate so the
// cloud is zero-mean and tightly inside [-1,1]^D. Normals are unchanged.
// Throws on a degenerate cloud (all points identical).
PointCloud normalize_unit_cube(const PointCloud& cloud);

struct Dataset {
    std::vector<PointCloud> clouds;
    std::vector<std::string> class_names;

    std::size_t size() const { return clouds.size(); }
};

}  // namespace sonet
