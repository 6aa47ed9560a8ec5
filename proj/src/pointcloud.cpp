#include "sonet/pointcloud.hpp"

#include <cmath>

namespace sonet {

void PointCloud::validate() const {
    if (n < 1) throw Error("point cloud: empty");
    if (dims != 2 && dims != 3) throw Error("point cloud: dims must be 2 or 3");
    if (points.size() != n * dims) throw Error("point cloud: coordinate array size mismatch");
    for (double v : points)
        if (!std::isfinite(v)) throw Error("point cloud: non-finite coordinate");
    if (!normals.empty()) {
        if (normals.size() != n * dims) throw Error("point cloud: normal array size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t d = 0; d < dims; ++d) s += normal(i)[d] * normal(i)[d];
            if (std::abs(std::sqrt(s) - 1.0) > 1e-4) throw Error("point cloud: normal not unit length");
        }
    }
    if (!labels.empty() && labels.size() != n) throw Error("point cloud: label array size mismatch");
}

PointCloud normalize_unit_cube(const PointCloud& cloud) {
    cloud.validate();
    PointCloud out = cloud;
    std::vector<double> centroid(cloud.dims, 0.0);
    for (std::size_t i = 0; i < cloud.n; ++i)
        for (std::size_t d = 0; d < cloud.dims; ++d) centroid[d] += cloud.point(i)[d];
    for (std::size_t d = 0; d < cloud.dims; ++d) centroid[d] /= static_cast<double>(cloud.n);

    double max_abs = 0.0;
    for (std::size_t i = 0; i < cloud.n; ++i)
        for (std::size_t d = 0; d < cloud.dims; ++d) {
            out.point(i)[d] = cloud.point(i)[d] - centroid[d];
            max_abs = std::max(max_abs, std::abs(out.point(i)[d]));
        }
    if (max_abs == 0.0) throw Error("normalize_unit_cube: degenerate cloud (zero spread)");
    for (double& v : out.points) v /= max_abs;
    return out;
}

}  // namespace sonet
