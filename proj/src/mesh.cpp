#include "texweave/mesh.hpp"

#include <Eigen/Geometry>

#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "texweave/error.hpp"

namespace texweave {

Eigen::Vector3d Mesh::centroid() const {
    if (positions.rows() == 0) return Eigen::Vector3d::Zero();
    return positions.colwise().mean().transpose();
}

double Mesh::bounding_radius() const {
    if (positions.rows() == 0) return 0.0;
    const Eigen::RowVector3d c = centroid().transpose();
    return (positions.rowwise() - c).rowwise().norm().maxCoeff();
}

namespace {

struct Corner {
    int position = -1;
    int uv = -1;
    int normal = -1;
};

int resolve_index(std::string_view token, std::size_t count, int line) {
    int value = 0;
    const auto* end = token.data() + token.size();
    const auto [ptr, ec] = std::from_chars(token.data(), end, value);
    if (ec != std::errc() || ptr != end || value == 0)
        throw ParseError("bad index '" + std::string(token) + "'", line);
    // Negative indices count back from the most recent element.
    const long long resolved = value > 0 ? value - 1 : static_cast<long long>(count) + value;
    if (resolved < 0 || resolved >= static_cast<long long>(count))
        throw ParseError("index " + std::string(token) + " out of range", line);
    return static_cast<int>(resolved);
}

Corner parse_corner(const std::string& token, std::size_t nv, std::size_t nt, std::size_t nn, int line) {
    Corner corner;
    std::array<std::string_view, 3> parts{};
    std::string_view rest(token);
    int count = 0;
    while (count < 3) {
        const auto slash = rest.find('/');
        parts[static_cast<std::size_t>(count++)] = rest.substr(0, slash);
        if (slash == std::string_view::npos) break;
        rest.remove_prefix(slash + 1);
    }
    if (parts[0].empty()) throw ParseError("face corner without a vertex index", line);
    corner.position = resolve_index(parts[0], nv, line);
    if (count > 1 && !parts[1].empty()) corner.uv = resolve_index(parts[1], nt, line);
    if (count > 2 && !parts[2].empty()) corner.normal = resolve_index(parts[2], nn, line);
    return corner;
}

template <int N>
Eigen::Matrix<double, N, 1> parse_reals(std::istringstream& in, int required, int line) {
    Eigen::Matrix<double, N, 1> out = Eigen::Matrix<double, N, 1>::Zero();
    for (int i = 0; i < N; ++i) {
        if (!(in >> out[i])) {
            if (i < required) throw ParseError("expected " + std::to_string(required) + " numbers", line);
            break;
        }
    }
    return out;
}

} // namespace

Mesh parse_obj(std::istream& in) {
    std::vector<Eigen::Vector3d> positions, normals;
    std::vector<Eigen::Vector2d> uvs;
    std::vector<std::array<Corner, 3>> triangles;
    bool all_have_normals = true;

    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
        std::istringstream ls(raw);
        std::string tag;
        if (!(ls >> tag)) continue;

        if (tag == "v") {
            positions.push_back(parse_reals<3>(ls, 3, line));
        } else if (tag == "vt") {
            const Eigen::Vector2d uv = parse_reals<2>(ls, 2, line);
            if ((uv.array() < 0.0).any() || (uv.array() > 1.0).any())
                throw ParseError("texture coordinate outside [0,1]^2", line);
            uvs.push_back(uv);
        } else if (tag == "vn") {
            const Eigen::Vector3d n = parse_reals<3>(ls, 3, line);
            if (n.norm() == 0.0) throw ParseError("zero-length normal", line);
            normals.push_back(n.normalized());
        } else if (tag == "f") {
            std::vector<Corner> polygon;
            std::string token;
            while (ls >> token)
                polygon.push_back(parse_corner(token, positions.size(), uvs.size(), normals.size(), line));
            if (polygon.size() < 3) throw ParseError("face with fewer than 3 corners", line);
            for (const auto& c : polygon) {
                if (c.uv < 0) throw MissingUV(line);
                if (c.normal < 0) all_have_normals = false;
            }
            for (std::size_t k = 1; k + 1 < polygon.size(); ++k)
                triangles.push_back({polygon[0], polygon[k], polygon[k + 1]});
        }
        // o, g, s, usemtl, mtllib and other records are ignored.
    }

    if (triangles.empty()) throw EmptyMesh();

    Mesh mesh;
    const auto nf = static_cast<Eigen::Index>(triangles.size());
    mesh.positions.resize(static_cast<Eigen::Index>(positions.size()), 3);
    for (std::size_t i = 0; i < positions.size(); ++i)
        mesh.positions.row(static_cast<Eigen::Index>(i)) = positions[i].transpose();
    mesh.uvs.resize(static_cast<Eigen::Index>(uvs.size()), 2);
    for (std::size_t i = 0; i < uvs.size(); ++i) mesh.uvs.row(static_cast<Eigen::Index>(i)) = uvs[i].transpose();
    mesh.position_faces.resize(nf, 3);
    mesh.uv_faces.resize(nf, 3);
    mesh.normal_faces.resize(nf, 3);
    for (Eigen::Index f = 0; f < nf; ++f) {
        for (int k = 0; k < 3; ++k) {
            const auto& c = triangles[static_cast<std::size_t>(f)][static_cast<std::size_t>(k)];
            mesh.position_faces(f, k) = c.position;
            mesh.uv_faces(f, k) = c.uv;
            mesh.normal_faces(f, k) = c.normal;
        }
    }

    if (!all_have_normals) return compute_normals(mesh);

    mesh.normals.resize(static_cast<Eigen::Index>(normals.size()), 3);
    for (std::size_t i = 0; i < normals.size(); ++i)
        mesh.normals.row(static_cast<Eigen::Index>(i)) = normals[i].transpose();
    return mesh;
}

Mesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    return parse_obj(in);
}

void write_obj(const Mesh& mesh, std::ostream& out) {
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < mesh.positions.rows(); ++i)
        out << "v " << mesh.positions(i, 0) << ' ' << mesh.positions(i, 1) << ' ' << mesh.positions(i, 2) << '\n';
    for (Eigen::Index i = 0; i < mesh.uvs.rows(); ++i) out << "vt " << mesh.uvs(i, 0) << ' ' << mesh.uvs(i, 1) << '\n';
    for (Eigen::Index i = 0; i < mesh.normals.rows(); ++i)
        out << "vn " << mesh.normals(i, 0) << ' ' << mesh.normals(i, 1) << ' ' << mesh.normals(i, 2) << '\n';
    for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
        out << 'f';
        for (int k = 0; k < 3; ++k)
            out << ' ' << mesh.position_faces(f, k) + 1 << '/' << mesh.uv_faces(f, k) + 1 << '/'
                << mesh.normal_faces(f, k) + 1;
        out << '\n';
    }
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_obj(mesh, out);
}

Mesh compute_normals(const Mesh& mesh) {
    Mesh out = mesh;
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> acc =
        Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>::Zero(mesh.num_vertices(), 3);
    std::vector<bool> referenced(static_cast<std::size_t>(mesh.num_vertices()), false);
    for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
        const Eigen::Vector3d a = mesh.positions.row(mesh.position_faces(f, 0));
        const Eigen::Vector3d b = mesh.positions.row(mesh.position_faces(f, 1));
        const Eigen::Vector3d c = mesh.positions.row(mesh.position_faces(f, 2));
        // |cross| is twice the area, so the raw cross product is already area-weighted.
        const Eigen::Vector3d n = (b - a).cross(c - a);
        for (int k = 0; k < 3; ++k) {
            acc.row(mesh.position_faces(f, k)) += n.transpose();
            referenced[static_cast<std::size_t>(mesh.position_faces(f, k))] = true;
        }
    }
    out.normals.resize(mesh.num_vertices(), 3);
    for (Eigen::Index v = 0; v < mesh.num_vertices(); ++v) {
        const double len = acc.row(v).norm();
        if (len == 0.0) {
            if (referenced[static_cast<std::size_t>(v)]) throw DegenerateFace(static_cast<int>(v));
            out.normals.row(v) << 0.0, 0.0, 1.0; // unreferenced vertex
            continue;
        }
        out.normals.row(v) = acc.row(v) / len;
    }
    out.normal_faces = mesh.position_faces;
    return out;
}

namespace {

double edge(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Top-left rule for counter-clockwise triangles in a y-up frame: an edge owns
// its boundary points when it runs leftward (top edge) or downward (left edge).
bool owns_boundary(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    const Eigen::Vector2d d = b - a;
    return (d.y() == 0.0 && d.x() < 0.0) || d.y() < 0.0;
}

} // namespace

UVChartReport validate_uv_atlas(const Mesh& mesh, int probe_resolution) {
    if (probe_resolution < 16) throw Error("probe resolution must be at least 16");
    const int n = probe_resolution;
    Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> hits =
        Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(n, n);

    for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
        Eigen::Vector2d a = mesh.uvs.row(mesh.uv_faces(f, 0)).transpose();
        Eigen::Vector2d b = mesh.uvs.row(mesh.uv_faces(f, 1)).transpose();
        Eigen::Vector2d c = mesh.uvs.row(mesh.uv_faces(f, 2)).transpose();
        const double area = edge(a, b, c);
        if (area == 0.0) continue;
        if (area < 0.0) std::swap(b, c);

        const Eigen::Vector2d lo = a.cwiseMin(b).cwiseMin(c);
        const Eigen::Vector2d hi = a.cwiseMax(b).cwiseMax(c);
        const int i0 = std::max(0, static_cast<int>(std::floor(lo.x() * n - 0.5)));
        const int i1 = std::min(n - 1, static_cast<int>(std::ceil(hi.x() * n - 0.5)));
        const int j0 = std::max(0, static_cast<int>(std::floor(lo.y() * n - 0.5)));
        const int j1 = std::min(n - 1, static_cast<int>(std::ceil(hi.y() * n - 0.5)));
        const bool own_ab = owns_boundary(a, b), own_bc = owns_boundary(b, c), own_ca = owns_boundary(c, a);
        for (int j = j0; j <= j1; ++j) {
            for (int i = i0; i <= i1; ++i) {
                const Eigen::Vector2d p((i + 0.5) / n, (j + 0.5) / n);
                const double w0 = edge(b, c, p), w1 = edge(c, a, p), w2 = edge(a, b, p);
                const bool inside = (w0 > 0 || (w0 == 0 && own_bc)) && (w1 > 0 || (w1 == 0 && own_ca)) &&
                                    (w2 > 0 || (w2 == 0 && own_ab));
                if (inside) ++hits(j, i);
            }
        }
    }

    UVChartReport report;
    report.probe_resolution = n;
    report.overlap_texel_count = (hits > 1).count();
    report.coverage_fraction = static_cast<double>((hits > 0).count()) / (static_cast<double>(n) * n);
    return report;
}

void check_mesh(const Mesh& mesh) {
    if (mesh.num_faces() == 0) throw EmptyMesh();
    auto in_range = [](const Matrix3Xi& idx, Eigen::Index count) {
        return idx.size() == 0 || (idx.minCoeff() >= 0 && idx.maxCoeff() < count);
    };
    if (!in_range(mesh.position_faces, mesh.positions.rows()) || !in_range(mesh.uv_faces, mesh.uvs.rows()) ||
        !in_range(mesh.normal_faces, mesh.normals.rows()))
        throw Error("face index out of range");
    if (mesh.uvs.rows() > 0 && (mesh.uvs.minCoeff() < 0.0 || mesh.uvs.maxCoeff() > 1.0))
        throw Error("texture coordinate outside [0,1]^2");
    for (Eigen::Index i = 0; i < mesh.normals.rows(); ++i)
        if (std::abs(mesh.normals.row(i).norm() - 1.0) > 1e-5) throw Error("normal " + std::to_string(i) + " is not unit length");
}

} // namespace texweave
