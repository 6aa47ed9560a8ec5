#include "sonet/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sonet {

namespace {

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream f(path, mode);
    if (!f) throw Error("cannot open file for reading: " + path);
    return f;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream f(path, mode);
    if (!f) throw Error("cannot open file for writing: " + path);
    return f;
}

void put_u32(std::ostream& s, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    s.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& s, const char* what) {
    unsigned char b[4];
    if (!s.read(reinterpret_cast<char*>(b), 4)) throw Error(std::string("truncated file reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& s, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(s, bits);
}

float get_f32(std::istream& s, const char* what) {
    std::uint32_t bits = get_u32(s, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_xyz(const std::string& path, const PointCloud& cloud) {
    auto f = open_out(path);
    f << std::setprecision(7);
    for (std::size_t i = 0; i < cloud.n; ++i) {
        for (std::size_t d = 0; d < cloud.dims; ++d) {
            if (d) f << ' ';
            f << cloud.point(i)[d];
        }
        if (cloud.has_normals())
            for (std::size_t d = 0; d < cloud.dims; ++d) f << ' ' << cloud.normal(i)[d];
        f << '\n';
    }
}

PointCloud read_xyz(const std::string& path) {
    auto f = open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t width = 0;
    while (std::getline(f, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (row.empty()) continue;
        if (width == 0) width = row.size();
        if (row.size() != width) throw Error("xyz: inconsistent column count in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error("xyz: no points in " + path);
    std::size_t dims;
    bool with_normals;
    switch (width) {
        case 2: dims = 2; with_normals = false; break;
        case 3: dims = 3; with_normals = false; break;
        case 4: dims = 2; with_normals = true; break;
        case 6: dims = 3; with_normals = true; break;
        default: throw Error("xyz: unsupported column count " + std::to_string(width));
    }
    PointCloud out(rows.size(), dims);
    if (with_normals) out.normals.assign(rows.size() * dims, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t d = 0; d < dims; ++d) out.point(i)[d] = rows[i][d];
        if (with_normals)
            for (std::size_t d = 0; d < dims; ++d) out.normal(i)[d] = rows[i][dims + d];
    }
    return out;
}

void write_pcb(const std::string& path, const PointCloud& cloud) {
    auto f = open_out(path, std::ios::binary);
    f.write("PCB1", 4);
    put_u32(f, static_cast<std::uint32_t>(cloud.n));
    put_u32(f, static_cast<std::uint32_t>(cloud.dims));
    unsigned char flags = (cloud.has_normals() ? 1 : 0) | (cloud.has_labels() ? 2 : 0);
    f.write(reinterpret_cast<char*>(&flags), 1);
    for (double v : cloud.points) put_f32(f, static_cast<float>(v));
    for (double v : cloud.normals) put_f32(f, static_cast<float>(v));
    for (int v : cloud.labels) put_u32(f, static_cast<std::uint32_t>(v));
}

PointCloud read_pcb(const std::string& path) {
    auto f = open_in(path, std::ios::binary);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "PCB1", 4) != 0)
        throw Error("pcb: bad magic in " + path);
    std::uint32_t n = get_u32(f, "point count");
    std::uint32_t dims = get_u32(f, "dims");
    if (dims != 2 && dims != 3) throw Error("pcb: dimension mismatch (D must be 2 or 3) in " + path);
    unsigned char flags;
    if (!f.read(reinterpret_cast<char*>(&flags), 1)) throw Error("pcb: truncated header in " + path);
    PointCloud out(n, dims);
    for (auto& v : out.points) v = get_f32(f, "coordinates");
    if (flags & 1) {
        out.normals.resize(static_cast<std::size_t>(n) * dims);
        for (auto& v : out.normals) v = get_f32(f, "normals");
    }
    if (flags & 2) {
        out.labels.resize(n);
        for (auto& v : out.labels) v = static_cast<int>(get_u32(f, "labels"));
    }
    return out;
}

TriMesh read_off(const std::string& path) {
    auto f = open_in(path);
    std::string tok;
    f >> tok;
    if (tok != "OFF") throw Error("off: bad magic in " + path);
    std::size_t nv, nf, ne;
    if (!(f >> nv >> nf >> ne)) throw Error("off: truncated header in " + path);
    TriMesh mesh;
    mesh.vertices.resize(nv * 3);
    for (auto& v : mesh.vertices)
        if (!(f >> v)) throw Error("off: truncated vertex list in " + path);
    mesh.faces.reserve(nf * 3);
    for (std::size_t i = 0; i < nf; ++i) {
        std::size_t cnt;
        if (!(f >> cnt)) throw Error("off: truncated face list in " + path);
        if (cnt != 3) throw Error("off: only triangle faces supported");
        for (std::size_t j = 0; j < 3; ++j) {
            std::size_t idx;
            if (!(f >> idx)) throw Error("off: truncated face list in " + path);
            if (idx >= nv) throw Error("off: vertex index out of range");
            mesh.faces.push_back(idx);
        }
    }
    return mesh;
}

std::vector<int> read_label_file(const std::string& path) {
    auto f = open_in(path);
    std::vector<int> labels;
    std::string line;
    while (std::getline(f, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        int v;
        while (ls >> v) labels.push_back(v);
    }
    return labels;
}

void write_label_file(const std::string& path, const std::vector<int>& labels) {
    auto f = open_out(path);
    for (int v : labels) f << v << '\n';
}

}  // namespace sonet
