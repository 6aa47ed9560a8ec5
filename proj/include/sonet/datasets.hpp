#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sonet/io.hpp"
#include "sonet/pointcloud.hpp"
#include "sonet/som.hpp"

namespace sonet {

struct AugmentParams {
    double point_noise_sigma = 0.01;
    double som_noise_sigma = 0.04;
    double scale_low = 0.8;
    double scale_high = 1.2;
    std::uint64_t seed = 0;
};

// Jitter point coordinates, normals and SOM nodes with independent Gaussian
// noise, then apply one shared scale factor from U(scale_low, scale_high).
// Normals are re-normalized to unit length after the noise.
std::pair<PointCloud, SomGrid> augment(const PointCloud& cloud, const SomGrid& som,
                                       const AugmentParams& params);

// Convert a 28x28 grayscale image (row-major, 0..255) to a 2-D cloud of
// exactly target_n points drawn from the non-zero pixels, jittered with
// N(0, sigma^2). Pixel (row,col) maps to (2*col/27 - 1, 1 - 2*row/27).
PointCloud image_to_points(const std::vector<std::uint8_t>& image, std::size_t rows,
                           std::size_t cols, std::size_t target_n, double sigma,
                           std::uint64_t seed);

enum class ShapeKind { Sphere, Cube, Cylinder, Torus };
ShapeKind shape_kind_from_name(const std::string& name);
std::string shape_kind_name(ShapeKind kind);
std::size_t shape_part_count(ShapeKind kind);

// Surface-sample one shape: unit-cube-normalized points with analytic
// normals and, optionally, per-point part labels from an analytic partition.
PointCloud sample_shape(ShapeKind kind, std::size_t n_points, bool with_parts,
                        std::uint64_t seed);

// Desk-scale synthetic dataset: n_per_class clouds per shape kind,
// class_id set per kind in the given order.
Dataset synth_shapes(const std::vector<ShapeKind>& class_set, std::size_t n_per_class,
                     std::size_t points_per_cloud, bool with_parts, std::uint64_t seed);

// Area-weighted uniform sampling of a triangle mesh; per-point normal is
// the face normal.
PointCloud sample_mesh(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

// IDX (MNIST-style) image/label files.
struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;  // count*rows*cols
    const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * rows * cols; }
};
IdxImages read_idx_images(const std::string& path);
std::vector<std::uint8_t> read_idx_labels(const std::string& path);

// Digit-cloud dataset from IDX files (first `limit` images; 0 = all).
Dataset digits_dataset(const std::string& images_path, const std::string& labels_path,
                       std::size_t target_n, double sigma, std::uint64_t seed,
                       std::size_t limit = 0);

}  // namespace sonet
