#include "texweave/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "texweave/parallel.hpp"

namespace texweave {

Mask GBuffer::mask() const {
    Mask m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = at(r, c).face >= 0;
    return m;
}

Plane<float> GBuffer::depth() const {
    Plane<float> d(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) d(r, c) = at(r, c).face >= 0 ? at(r, c).depth : 0.0f;
    return d;
}

Eigen::Index GBuffer::covered_count() const {
    return std::count_if(fragments.begin(), fragments.end(), [](const Fragment& f) { return f.face >= 0; });
}

namespace {

constexpr double kNearDepth = 1e-6;

struct ScreenTriangle {
    int face;
    std::array<Eigen::Vector2d, 3> p; // ndc, y up
    Eigen::Vector3d inv_depth;
    double area;
    int col0, col1, row0, row1;
    std::array<bool, 3> owns; // edge k runs from vertex k+1 to k+2
};

// Edge function with canonical endpoint order so that the two triangles
// sharing an edge see exactly opposite values.
double edge(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
    const bool swap = std::tie(a.x(), a.y()) > std::tie(b.x(), b.y());
    const Eigen::Vector2d& s = swap ? b : a;
    const Eigen::Vector2d& t = swap ? a : b;
    const double w = (t.x() - s.x()) * (p.y() - s.y()) - (t.y() - s.y()) * (p.x() - s.x());
    return swap ? -w : w;
}

bool owns_boundary(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    const Eigen::Vector2d d = b - a;
    return (d.y() == 0.0 && d.x() < 0.0) || d.y() < 0.0;
}

} // namespace

GBuffer rasterize(const Mesh& mesh, const Viewpoint& vp, unsigned workers) {
    vp.validate();
    const int n = vp.image_size;
    GBuffer gb;
    gb.rows = n;
    gb.cols = n;
    gb.eye = vp.eye();
    gb.fragments.assign(static_cast<std::size_t>(n) * n, Fragment{});

    const Eigen::Matrix3d rot = vp.rotation();
    const Eigen::Vector3d eye = vp.eye();
    const double focal = 1.0 / std::tan(vp.fov_y / 2);

    const Eigen::Index nv = mesh.num_vertices();
    Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> ndc(nv, 2);
    Eigen::VectorXd depth(nv);
    for (Eigen::Index v = 0; v < nv; ++v) {
        Eigen::Vector3d cam = rot * (mesh.positions.row(v).transpose() - eye);
        depth[v] = -cam.z();
        if (depth[v] > kNearDepth)
            ndc.row(v) = (focal * cam.head<2>() / depth[v]).transpose();
        else
            ndc.row(v).setZero();
    }

    std::vector<ScreenTriangle> tris;
    tris.reserve(static_cast<std::size_t>(mesh.num_faces()));
    for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
        ScreenTriangle t;
        t.face = static_cast<int>(f);
        bool visible = true;
        for (int k = 0; k < 3; ++k) {
            const int v = mesh.position_faces(f, k);
            if (depth[v] <= kNearDepth) visible = false;
            t.p[static_cast<std::size_t>(k)] = ndc.row(v).transpose();
            t.inv_depth[k] = 1.0 / depth[v];
        }
        if (!visible) continue;
        t.area = edge(t.p[0], t.p[1], t.p[2]);
        if (!(t.area > 0.0)) continue; // back-facing or degenerate
        Eigen::Vector2d lo = t.p[0].cwiseMin(t.p[1]).cwiseMin(t.p[2]);
        Eigen::Vector2d hi = t.p[0].cwiseMax(t.p[1]).cwiseMax(t.p[2]);
        // ndc x -> column (x + 1) / 2 * n - 0.5; ndc y -> row (1 - y) / 2 * n - 0.5
        t.col0 = std::max(0, static_cast<int>(std::floor((lo.x() + 1) / 2 * n - 0.5)));
        t.col1 = std::min(n - 1, static_cast<int>(std::ceil((hi.x() + 1) / 2 * n - 0.5)));
        t.row0 = std::max(0, static_cast<int>(std::floor((1 - hi.y()) / 2 * n - 0.5)));
        t.row1 = std::min(n - 1, static_cast<int>(std::ceil((1 - lo.y()) / 2 * n - 0.5)));
        if (t.col0 > t.col1 || t.row0 > t.row1) continue;
        for (int k = 0; k < 3; ++k)
            t.owns[static_cast<std::size_t>(k)] =
                owns_boundary(t.p[static_cast<std::size_t>((k + 1) % 3)], t.p[static_cast<std::size_t>((k + 2) % 3)]);
        tris.push_back(t);
    }

    // Bands of rows. Each pixel keeps the (depth, face) minimum, which does not
    // depend on the order triangles are visited.
    std::vector<double> zbuf(static_cast<std::size_t>(n) * n, std::numeric_limits<double>::infinity());
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t r0, std::size_t r1) {
        for (const auto& t : tris) {
            const int rb = std::max(t.row0, static_cast<int>(r0));
            const int re = std::min(t.row1, static_cast<int>(r1) - 1);
            for (int r = rb; r <= re; ++r) {
                const double y = 1.0 - (r + 0.5) / n * 2.0;
                for (int c = t.col0; c <= t.col1; ++c) {
                    const Eigen::Vector2d p((c + 0.5) / n * 2.0 - 1.0, y);
                    Eigen::Vector3d w;
                    bool inside = true;
                    for (int k = 0; k < 3 && inside; ++k) {
                        w[k] = edge(t.p[static_cast<std::size_t>((k + 1) % 3)], t.p[static_cast<std::size_t>((k + 2) % 3)], p);
                        inside = w[k] > 0.0 || (w[k] == 0.0 && t.owns[static_cast<std::size_t>(k)]);
                    }
                    if (!inside) continue;
                    const Eigen::Vector3d screen = w / t.area;
                    const double inv_z = screen.dot(t.inv_depth);
                    const double z = 1.0 / inv_z;
                    const std::size_t idx = static_cast<std::size_t>(r) * n + c;
                    Fragment& frag = gb.fragments[idx];
                    if (z < zbuf[idx] || (z == zbuf[idx] && t.face < frag.face)) {
                        zbuf[idx] = z;
                        const Eigen::Vector3d bary = screen.cwiseProduct(t.inv_depth) * z;
                        frag.face = t.face;
                        frag.barycentric = bary.cast<float>();
                        frag.depth = static_cast<float>(z);
                    }
                }
            }
        }
    });

    // Attribute interpolation for the winning faces.
    parallel_for(gb.fragments.size(), workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Fragment& frag = gb.fragments[i];
            if (frag.face < 0) continue;
            const Eigen::Vector3d bary = frag.barycentric.cast<double>();
            Eigen::Vector2d uv = Eigen::Vector2d::Zero();
            Eigen::Vector3d nrm = Eigen::Vector3d::Zero(), pos = Eigen::Vector3d::Zero();
            for (int k = 0; k < 3; ++k) {
                uv += bary[k] * mesh.uvs.row(mesh.uv_faces(frag.face, k)).transpose();
                nrm += bary[k] * mesh.normals.row(mesh.normal_faces(frag.face, k)).transpose();
                pos += bary[k] * mesh.positions.row(mesh.position_faces(frag.face, k)).transpose();
            }
            const double len = nrm.norm();
            frag.uv = uv.cwiseMax(0.0).cwiseMin(1.0).cast<float>();
            frag.normal = (len > 0 ? Eigen::Vector3d(nrm / len) : Eigen::Vector3d::UnitZ()).cast<float>();
            frag.position = pos.cast<float>();
        }
    });
    return gb;
}

BilinearFootprint bilinear_footprint(const Eigen::Vector2d& uv, int rows, int cols) {
    const double x = uv.x() * cols - 0.5;
    const double y = (1.0 - uv.y()) * rows - 0.5;
    const double x0 = std::floor(x), y0 = std::floor(y);
    const double fx = x - x0, fy = y - y0;
    const auto ix0 = static_cast<Eigen::Index>(x0), iy0 = static_cast<Eigen::Index>(y0);
    auto clamp_col = [cols](Eigen::Index i) { return std::clamp<Eigen::Index>(i, 0, cols - 1); };
    auto clamp_row = [rows](Eigen::Index i) { return std::clamp<Eigen::Index>(i, 0, rows - 1); };
    const Eigen::Index c0 = clamp_col(ix0), c1 = clamp_col(ix0 + 1);
    const Eigen::Index r0 = clamp_row(iy0), r1 = clamp_row(iy0 + 1);

    BilinearFootprint fp;
    fp.texels = {r0 * cols + c0, r0 * cols + c1, r1 * cols + c0, r1 * cols + c1};
    fp.weights << (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy;
    return fp;
}

ScatterPlan::ScatterPlan(std::span<const BilinearFootprint> footprints, Eigen::Index texel_count) {
    // Counting sort of (slot, corner) entries by texel; stable, so entries for a
    // texel stay in slot order.
    std::vector<std::size_t> counts(static_cast<std::size_t>(texel_count) + 1, 0);
    for (const auto& fp : footprints)
        for (int k = 0; k < 4; ++k)
            if (fp.weights[k] != 0.0) ++counts[static_cast<std::size_t>(fp.texels[static_cast<std::size_t>(k)]) + 1];

    for (Eigen::Index t = 0; t < texel_count; ++t)
        if (counts[static_cast<std::size_t>(t) + 1] > 0) texels_.push_back(t);

    std::vector<std::size_t> start(static_cast<std::size_t>(texel_count) + 1, 0);
    for (std::size_t t = 1; t < start.size(); ++t) start[t] = start[t - 1] + counts[t];
    const std::size_t total = start.back();

    entries_.resize(total);
    std::vector<std::size_t> cursor(start.begin(), start.end() - 1);
    for (std::size_t s = 0; s < footprints.size(); ++s) {
        const auto& fp = footprints[s];
        for (int k = 0; k < 4; ++k) {
            if (fp.weights[k] == 0.0) continue;
            const auto t = static_cast<std::size_t>(fp.texels[static_cast<std::size_t>(k)]);
            entries_[cursor[t]++] = Entry{static_cast<Eigen::Index>(s), fp.weights[k]};
        }
    }

    offsets_.reserve(texels_.size() + 1);
    for (const auto t : texels_) offsets_.push_back(start[static_cast<std::size_t>(t)]);
    offsets_.push_back(total);
}

Eigen::Matrix<double, 3, Eigen::Dynamic> ScatterPlan::gather(const Eigen::Matrix<double, 3, Eigen::Dynamic>& slot_grad,
                                                             unsigned workers) const {
    Eigen::Matrix<double, 3, Eigen::Dynamic> out(3, static_cast<Eigen::Index>(texels_.size()));
    parallel_for(texels_.size(), workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Eigen::Vector3d g = Eigen::Vector3d::Zero();
            for (const auto& entry : entries(i)) g += entry.weight * slot_grad.col(entry.slot);
            out.col(static_cast<Eigen::Index>(i)) = g;
        }
    });
    return out;
}

void ScatterPlan::accumulate(const Eigen::Matrix<double, 3, Eigen::Dynamic>& slot_grad, Image<double>& out,
                             unsigned workers) const {
    const auto sums = gather(slot_grad, workers);
    for (std::size_t i = 0; i < texels_.size(); ++i)
        for (int c = 0; c < 3; ++c) out.at(c, texels_[i]) += sums(c, static_cast<Eigen::Index>(i));
}

Image<double> backward_to_texture(const GBuffer& gbuffer, const Image<double>& image_grad, int atlas_rows,
                                  int atlas_cols, unsigned workers) {
    if (image_grad.channels() != 3)
        throw ShapeMismatch("image gradient must have 3 channels, got " + std::to_string(image_grad.channels()));
    require_same_shape(gbuffer.rows, gbuffer.cols, image_grad.rows(), image_grad.cols(), "image gradient");

    std::vector<BilinearFootprint> footprints;
    std::vector<Eigen::Index> pixels;
    for (std::size_t i = 0; i < gbuffer.fragments.size(); ++i) {
        const Fragment& f = gbuffer.fragments[i];
        if (f.face < 0) continue;
        footprints.push_back(bilinear_footprint(f.uv.cast<double>(), atlas_rows, atlas_cols));
        pixels.push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::Matrix<double, 3, Eigen::Dynamic> slot_grad(3, static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t s = 0; s < pixels.size(); ++s)
        for (int c = 0; c < 3; ++c) slot_grad(c, static_cast<Eigen::Index>(s)) = image_grad.at(c, pixels[s]);

    Image<double> out(3, atlas_rows, atlas_cols);
    ScatterPlan(footprints, static_cast<Eigen::Index>(atlas_rows) * atlas_cols).accumulate(slot_grad, out, workers);
    return out;
}

} // namespace texweave
