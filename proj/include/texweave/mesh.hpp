#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>

namespace texweave {

using Matrix3Xi = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Triangle mesh with a single UV parameterization. Each face corner carries
/// separate (position, uv, normal) indices, as in Wavefront OBJ.
struct Mesh {
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> positions;
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> normals;
    Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> uvs;
    Matrix3Xi position_faces;
    Matrix3Xi uv_faces;
    Matrix3Xi normal_faces;

    Eigen::Index num_faces() const { return position_faces.rows(); }
    Eigen::Index num_vertices() const { return positions.rows(); }

    Eigen::Vector3d centroid() const;
    /// Radius of the smallest centroid-centered sphere containing every vertex.
    double bounding_radius() const;
};

struct UVChartReport {
    long long overlap_texel_count = 0;
    double coverage_fraction = 0.0;
    int probe_resolution = 0;
};

/// Throws ParseError, MissingUV or EmptyMesh. Polygons are fan-triangulated;
/// absent normals are recomputed with compute_normals.
Mesh load_obj(const std::filesystem::path& path);
Mesh parse_obj(std::istream& in);

void save_obj(const Mesh& mesh, const std::filesystem::path& path);
void write_obj(const Mesh& mesh, std::ostream& out);

/// Replaces the normals with area-weighted vertex normals indexed like the
/// positions. Throws DegenerateFace when a referenced vertex accumulates a
/// zero normal.
Mesh compute_normals(const Mesh& mesh);

/// Rasterizes every face in UV space at probe_resolution^2 texel centers
/// (top-left fill rule) and counts texels covered more than once.
UVChartReport validate_uv_atlas(const Mesh& mesh, int probe_resolution);

/// Throws Error when a mesh invariant is broken (index range, UV range, unit normals).
void check_mesh(const Mesh& mesh);

} // namespace texweave
