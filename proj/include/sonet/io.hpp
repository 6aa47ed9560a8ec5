#pragma once

#include <string>
#include <vector>

#include "sonet/pointcloud.hpp"

namespace sonet {

// ".xyz" text format: one point per line, D (or 2*D, with normals)
// whitespace-separated decimals; '#' lines are comments.
void write_xyz(const std::string& path, const PointCloud& cloud);
PointCloud read_xyz(const std::string& path);

// ".pcb" binary format: magic "PCB1", u32 N, u32 D, u8 flags
// (bit0 normals, bit1 labels), float32 LE coordinates row-major,
// optional float32 normals, optional int32 labels.
void write_pcb(const std::string& path, const PointCloud& cloud);
PointCloud read_pcb(const std::string& path);

// Minimal OFF triangle-mesh reader, for mesh sampling only.
struct TriMesh {
    std::vector<double> vertices;      // V*3
    std::vector<std::size_t> faces;    // F*3 vertex indices
    std::size_t num_vertices() const { return vertices.size() / 3; }
    std::size_t num_faces() const { return faces.size() / 3; }
};
TriMesh read_off(const std::string& path);

// Classification label sidecar: one integer per cloud, '#' comments allowed.
std::vector<int> read_label_file(const std::string& path);
void write_label_file(const std::string& path, const std::vector<int>& labels);

}  // namespace sonet
