#include "sonet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sonet/random.hpp"

namespace sonet {

std::pair<PointCloud, SomGrid> augment(const PointCloud& cloud, const SomGrid& som,
                                       const AugmentParams& params) {
    cloud.validate();
    if (params.point_noise_sigma < 0 || params.som_noise_sigma < 0)
        throw Error("augment: noise sigmas must be >= 0");
    if (!(params.scale_low > 0) || params.scale_low > params.scale_high)
        throw Error("augment: require 0 < scale_low <= scale_high");

    RandomStream rng(params.seed);
    PointCloud out_cloud = cloud;
    SomGrid out_som = som;

    for (auto& v : out_cloud.points) v += rng.normal(0.0, params.point_noise_sigma);
    if (out_cloud.has_normals()) {
        for (auto& v : out_cloud.normals) v += rng.normal(0.0, params.point_noise_sigma);
        for (std::size_t i = 0; i < out_cloud.n; ++i) {
            double s = 0;
            for (std::size_t d = 0; d < out_cloud.dims; ++d)
                s += out_cloud.normal(i)[d] * out_cloud.normal(i)[d];
            const double len = std::sqrt(s);
            if (len > 0)
                for (std::size_t d = 0; d < out_cloud.dims; ++d) out_cloud.normal(i)[d] /= len;
        }
    }
    for (auto& v : out_som.nodes) v += rng.normal(0.0, params.som_noise_sigma);

    // one scale factor shared by points and nodes; normals are directions
    // and are not scaled
    const double scale = rng.uniform(params.scale_low, params.scale_high);
    for (auto& v : out_cloud.points) v *= scale;
    for (auto& v : out_som.nodes) v *= scale;
    return {std::move(out_cloud), std::move(out_som)};
}

PointCloud image_to_points(const std::vector<std::uint8_t>& image, std::size_t rows,
                           std::size_t cols, std::size_t target_n, double sigma,
                           std::uint64_t seed) {
    if (image.size() != rows * cols) throw Error("image_to_points: image size mismatch");
    if (target_n < 1) throw Error("image_to_points: target_n must be >= 1");
    std::vector<std::pair<std::size_t, std::size_t>> nz;  // (row, col)
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (image[r * cols + c] != 0) nz.emplace_back(r, c);
    if (nz.empty()) throw Error("image_to_points: all-zero image (empty source)");

    RandomStream rng(seed);
    std::vector<std::size_t> chosen;
    chosen.reserve(target_n);
    if (nz.size() >= target_n) {
        // partial Fisher-Yates: subset without replacement
        std::vector<std::size_t> idx(nz.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < target_n; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
            std::swap(idx[i], idx[j]);
            chosen.push_back(idx[i]);
        }
    } else {
        for (std::size_t i = 0; i < nz.size(); ++i) chosen.push_back(i);
        while (chosen.size() < target_n)
            chosen.push_back(static_cast<std::size_t>(rng.index(nz.size())));
    }

    PointCloud out(target_n, 2);
    const double rs = static_cast<double>(rows - 1);
    const double cs = static_cast<double>(cols - 1);
    for (std::size_t i = 0; i < target_n; ++i) {
        const auto [r, c] = nz[chosen[i]];
        out.point(i)[0] = 2.0 * static_cast<double>(c) / cs - 1.0;
        out.point(i)[1] = 1.0 - 2.0 * static_cast<double>(r) / rs;
        out.point(i)[0] += rng.normal(0.0, sigma);
        out.point(i)[1] += rng.normal(0.0, sigma);
    }
    return out;
}

ShapeKind shape_kind_from_name(const std::string& name) {
    if (name == "sphere") return ShapeKind::Sphere;
    if (name == "cube") return ShapeKind::Cube;
    if (name == "cylinder") return ShapeKind::Cylinder;
    if (name == "torus") return ShapeKind::Torus;
    throw Error("unknown shape kind: " + name);
}

std::string shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Cube: return "cube";
        case ShapeKind::Cylinder: return "cylinder";
        case ShapeKind::Torus: return "torus";
    }
    throw Error("unknown shape kind");
}

std::size_t shape_part_count(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Sphere: return 2;    // hemispheres
        case ShapeKind::Cube: return 6;      // faces
        case ShapeKind::Cylinder: return 3;  // side, top cap, bottom cap
        case ShapeKind::Torus: return 2;     // outer, inner
    }
    throw Error("unknown shape kind");
}

namespace {

void sample_sphere(RandomStream& rng, bool with_parts, PointCloud& out, std::size_t i) {
    double v[3], s = 0;
    do {
        s = 0;
        for (int d = 0; d < 3; ++d) {
            v[d] = rng.normal();
            s += v[d] * v[d];
        }
    } while (s < 1e-12);
    const double len = std::sqrt(s);
    for (int d = 0; d < 3; ++d) {
        out.point(i)[d] = v[d] / len;
        out.normal(i)[d] = v[d] / len;
    }
    if (with_parts) out.labels[i] = out.point(i)[2] >= 0 ? 0 : 1;
}

void sample_cube(RandomStream& rng, bool with_parts, PointCloud& out, std::size_t i) {
    const std::size_t face = static_cast<std::size_t>(rng.index(6));
    const std::size_t axis = face / 2;
    const double sign = (face % 2 == 0) ? 1.0 : -1.0;
    double p[3] = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    p[axis] = sign;
    double nrm[3] = {0, 0, 0};
    nrm[axis] = sign;
    for (int d = 0; d < 3; ++d) {
        out.point(i)[d] = p[d];
        out.normal(i)[d] = nrm[d];
    }
    if (with_parts) out.labels[i] = static_cast<int>(face);
}

void sample_cylinder(RandomStream& rng, bool with_parts, PointCloud& out, std::size_t i) {
    // radius 1, z in [-1,1]; areas: side 4*pi, each cap pi
    const double u = rng.uniform() * 6.0;  // area / pi
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    if (u < 4.0) {  // side
        out.point(i)[0] = std::cos(theta);
        out.point(i)[1] = std::sin(theta);
        out.point(i)[2] = rng.uniform(-1.0, 1.0);
        out.normal(i)[0] = std::cos(theta);
        out.normal(i)[1] = std::sin(theta);
        out.normal(i)[2] = 0.0;
        if (with_parts) out.labels[i] = 0;
    } else {
        const bool top = u < 5.0;
        const double r = std::sqrt(rng.uniform());
        out.point(i)[0] = r * std::cos(theta);
        out.point(i)[1] = r * std::sin(theta);
        out.point(i)[2] = top ? 1.0 : -1.0;
        out.normal(i)[0] = 0.0;
        out.normal(i)[1] = 0.0;
        out.normal(i)[2] = top ? 1.0 : -1.0;
        if (with_parts) out.labels[i] = top ? 1 : 2;
    }
}

void sample_torus(RandomStream& rng, bool with_parts, PointCloud& out, std::size_t i) {
    const double R = 1.0, r = 0.4;
    const double u = rng.uniform(0.0, 2.0 * M_PI);
    // area element is proportional to R + r*cos(v); rejection sample v
    double v;
    do {
        v = rng.uniform(0.0, 2.0 * M_PI);
    } while (rng.uniform() * (R + r) > R + r * std::cos(v));
    out.point(i)[0] = (R + r * std::cos(v)) * std::cos(u);
    out.point(i)[1] = (R + r * std::cos(v)) * std::sin(u);
    out.point(i)[2] = r * std::sin(v);
    out.normal(i)[0] = std::cos(v) * std::cos(u);
    out.normal(i)[1] = std::cos(v) * std::sin(u);
    out.normal(i)[2] = std::sin(v);
    if (with_parts) out.labels[i] = std::cos(v) >= 0 ? 0 : 1;
}

}  // namespace

PointCloud sample_shape(ShapeKind kind, std::size_t n_points, bool with_parts,
                        std::uint64_t seed) {
    PointCloud cloud(n_points, 3);
    cloud.normals.assign(n_points * 3, 0.0);
    if (with_parts) cloud.labels.assign(n_points, 0);
    RandomStream rng(seed);
    for (std::size_t i = 0; i < n_points; ++i) {
        switch (kind) {
            case ShapeKind::Sphere: sample_sphere(rng, with_parts, cloud, i); break;
            case ShapeKind::Cube: sample_cube(rng, with_parts, cloud, i); break;
            case ShapeKind::Cylinder: sample_cylinder(rng, with_parts, cloud, i); break;
            case ShapeKind::Torus: sample_torus(rng, with_parts, cloud, i); break;
        }
    }
    PointCloud normalized = normalize_unit_cube(cloud);
    return normalized;
}

Dataset synth_shapes(const std::vector<ShapeKind>& class_set, std::size_t n_per_class,
                     std::size_t points_per_cloud, bool with_parts, std::uint64_t seed) {
    if (points_per_cloud < 64) throw Error("synth_shapes: points_per_cloud must be >= 64");
    Dataset ds;
    RandomStream rng(seed);
    for (std::size_t c = 0; c < class_set.size(); ++c) {
        ds.class_names.push_back(shape_kind_name(class_set[c]));
        for (std::size_t i = 0; i < n_per_class; ++i) {
            PointCloud cloud = sample_shape(class_set[c], points_per_cloud, with_parts, rng.raw());
            cloud.class_id = static_cast<int>(c);
            ds.clouds.push_back(std::move(cloud));
        }
    }
    return ds;
}

PointCloud sample_mesh(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
    if (mesh.num_faces() == 0) throw Error("sample_mesh: mesh has no faces");
    const std::size_t F = mesh.num_faces();
    std::vector<double> cum(F);
    std::vector<double> face_normals(F * 3);
    double total = 0;
    for (std::size_t f = 0; f < F; ++f) {
        const double* a = mesh.vertices.data() + mesh.faces[f * 3 + 0] * 3;
        const double* b = mesh.vertices.data() + mesh.faces[f * 3 + 1] * 3;
        const double* c = mesh.vertices.data() + mesh.faces[f * 3 + 2] * 3;
        double e1[3], e2[3], cr[3];
        for (int d = 0; d < 3; ++d) {
            e1[d] = b[d] - a[d];
            e2[d] = c[d] - a[d];
        }
        cr[0] = e1[1] * e2[2] - e1[2] * e2[1];
        cr[1] = e1[2] * e2[0] - e1[0] * e2[2];
        cr[2] = e1[0] * e2[1] - e1[1] * e2[0];
        const double len = std::sqrt(cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]);
        total += 0.5 * len;
        cum[f] = total;
        if (len > 0)
            for (int d = 0; d < 3; ++d) face_normals[f * 3 + d] = cr[d] / len;
    }
    if (total <= 0) throw Error("sample_mesh: zero total area");

    PointCloud out(n, 3);
    out.normals.assign(n * 3, 0.0);
    RandomStream rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double target = rng.uniform() * total;
        const std::size_t f = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), target) - cum.begin());
        const double* a = mesh.vertices.data() + mesh.faces[f * 3 + 0] * 3;
        const double* b = mesh.vertices.data() + mesh.faces[f * 3 + 1] * 3;
        const double* c = mesh.vertices.data() + mesh.faces[f * 3 + 2] * 3;
        // uniform barycentric
        const double su = std::sqrt(rng.uniform());
        const double v = rng.uniform();
        const double wa = 1.0 - su, wb = su * (1.0 - v), wc = su * v;
        for (int d = 0; d < 3; ++d) {
            out.point(i)[d] = wa * a[d] + wb * b[d] + wc * c[d];
            out.normal(i)[d] = face_normals[f * 3 + d];
        }
    }
    return out;
}

namespace {

std::uint32_t read_be_u32(std::istream& s, const std::string& path) {
    unsigned char b[4];
    if (!s.read(reinterpret_cast<char*>(b), 4)) throw Error("idx: truncated file " + path);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

IdxImages read_idx_images(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open file for reading: " + path);
    if (read_be_u32(f, path) != 0x00000803u) throw Error("idx: bad image magic in " + path);
    IdxImages out;
    out.count = read_be_u32(f, path);
    out.rows = read_be_u32(f, path);
    out.cols = read_be_u32(f, path);
    out.pixels.resize(out.count * out.rows * out.cols);
    if (!f.read(reinterpret_cast<char*>(out.pixels.data()),
                static_cast<std::streamsize>(out.pixels.size())))
        throw Error("idx: truncated pixel data in " + path);
    return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open file for reading: " + path);
    if (read_be_u32(f, path) != 0x00000801u) throw Error("idx: bad label magic in " + path);
    const std::uint32_t count = read_be_u32(f, path);
    std::vector<std::uint8_t> labels(count);
    if (!f.read(reinterpret_cast<char*>(labels.data()), count))
        throw Error("idx: truncated label data in " + path);
    return labels;
}

Dataset digits_dataset(const std::string& images_path, const std::string& labels_path,
                       std::size_t target_n, double sigma, std::uint64_t seed,
                       std::size_t limit) {
    IdxImages images = read_idx_images(images_path);
    auto labels = read_idx_labels(labels_path);
    if (labels.size() != images.count) throw Error("digits: image/label count mismatch");
    std::size_t count = images.count;
    if (limit > 0) count = std::min(count, limit);
    Dataset ds;
    for (int d = 0; d < 10; ++d) ds.class_names.push_back(std::to_string(d));
    RandomStream rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<std::uint8_t> img(images.image(i), images.image(i) + images.rows * images.cols);
        PointCloud cloud = image_to_points(img, images.rows, images.cols, target_n, sigma, rng.raw());
        cloud.class_id = static_cast<int>(labels[i]);
        ds.clouds.push_back(std::move(cloud));
    }
    return ds;
}

}  // namespace sonet
