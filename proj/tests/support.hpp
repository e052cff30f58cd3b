#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseQR>
#include <Eigen/OrderingMethods>

#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>

#include "texweave/mesh.hpp"
#include "texweave/multidiffusion.hpp"
#include "texweave/rasterizer.hpp"

namespace texweave::testing {

inline std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(TEXWEAVE_TEST_DATA) / name; }

inline const Mesh& cube() {
    static const Mesh mesh = load_obj(data_path("cube.obj"));
    return mesh;
}

/// Fresh, empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::current_path() / "scratch" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Solves the weighted least-squares reconciliation problem directly: one
/// residual row sqrt(w_i) (x_p - phi_i(p)) per window cell, plus a pinning row
/// for every cell no window weighs, solved by sparse QR per channel.
template <typename Scalar>
Image<double> md_least_squares(const LatentGrid<Scalar>& current, std::span<const DenoiseProposal<Scalar>> proposals,
                               bool quadratic = true) {
    const int n = current.size();
    const Eigen::Index cells = static_cast<Eigen::Index>(n) * n;
    Image<double> out(current.channels(), n, n);
    for (int c = 0; c < current.channels(); ++c) {
        std::vector<Eigen::Triplet<double>> triplets;
        std::vector<double> rhs;
        std::vector<char> weighed(static_cast<std::size_t>(cells), 0);
        Eigen::Index row = 0;
        for (const auto& p : proposals) {
            const double w = quadratic ? p.window.weight * p.window.weight : p.window.weight;
            if (w <= 0.0) continue;
            const double s = std::sqrt(w);
            for (int r = 0; r < p.window.size; ++r)
                for (int q = 0; q < p.window.size; ++q) {
                    const Eigen::Index cell = static_cast<Eigen::Index>(p.window.row + r) * n + p.window.col + q;
                    triplets.emplace_back(row++, cell, s);
                    rhs.push_back(s * static_cast<double>(p.values(c, r, q)));
                    weighed[static_cast<std::size_t>(cell)] = 1;
                }
        }
        for (Eigen::Index cell = 0; cell < cells; ++cell)
            if (!weighed[static_cast<std::size_t>(cell)]) {
                triplets.emplace_back(row++, cell, 1.0);
                rhs.push_back(static_cast<double>(current.values.at(c, cell)));
            }
        Eigen::SparseMatrix<double> a(row, cells);
        a.setFromTriplets(triplets.begin(), triplets.end());
        a.makeCompressed();
        Eigen::SparseQR<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> qr(a);
        const Eigen::VectorXd x = qr.solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size())));
        for (Eigen::Index cell = 0; cell < cells; ++cell) out.at(c, cell) = x[cell];
    }
    return out;
}

/// Pixel-ordered sequential scatter of per-pixel texture gradients.
inline Image<double> naive_backward(const GBuffer& gb, const Image<double>& image_grad, int rows, int cols) {
    Image<double> out(3, rows, cols);
    for (int r = 0; r < gb.rows; ++r)
        for (int c = 0; c < gb.cols; ++c) {
            const Fragment& f = gb.at(r, c);
            if (f.face < 0) continue;
            const auto fp = bilinear_footprint(f.uv.cast<double>(), rows, cols);
            for (int k = 0; k < 4; ++k)
                for (int ch = 0; ch < 3; ++ch) out.at(ch, fp.texels[k]) += fp.weights[k] * image_grad(ch, r, c);
        }
    return out;
}

inline Image<double> random_image(int channels, int rows, int cols, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image<double> img(channels, rows, cols);
    for (int c = 0; c < channels; ++c)
        for (Eigen::Index i = 0; i < img.plane(c).size(); ++i) img.at(c, i) = u(rng);
    return img;
}

} // namespace texweave::testing

namespace texweave::testing {

/// Jittered-stratified estimate of int D(h) (n.h) dw over the hemisphere.
/// D is isotropic, so the azimuthal integral is 2 pi and samples are spent
/// on theta, where sin(theta) is applied as the Jacobian.
template <typename Ndf>
double projected_ndf_integral(Ndf&& ndf, int samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    const double dtheta = (std::numbers::pi / 2) / samples;
    double sum = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double theta = (i + jitter(rng)) * dtheta;
        sum += ndf(std::cos(theta)) * std::cos(theta) * std::sin(theta);
    }
    return 2 * std::numbers::pi * sum * dtheta;
}

/// Gram matrix of a 9-function basis over the unit sphere, estimated with
/// jittered strata uniform in (z, phi), which is area-uniform.
template <typename Basis>
Eigen::Matrix<double, 9, 9> sphere_gram(Basis&& basis, int strata, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    Eigen::Matrix<double, 9, 9> g = Eigen::Matrix<double, 9, 9>::Zero();
    for (int i = 0; i < strata; ++i)
        for (int j = 0; j < strata; ++j) {
            const double z = -1.0 + 2.0 * (i + jitter(rng)) / strata;
            const double phi = 2 * std::numbers::pi * (j + jitter(rng)) / strata;
            const double s = std::sqrt(std::max(0.0, 1 - z * z));
            const Eigen::Matrix<double, 9, 1> y = basis(Eigen::Vector3d(s * std::cos(phi), s * std::sin(phi), z));
            g.noalias() += y * y.transpose();
        }
    return g * (4 * std::numbers::pi / (static_cast<double>(strata) * strata));
}

} // namespace texweave::testing

#include <sstream>

#include "texweave/projector.hpp"

namespace texweave::testing {

/// Four texels, one data pixel: a unit quad whose uvs span the square between
/// the texel centers of a 2x2 atlas, seen face-on so that it covers a small
/// patch of pixels. Only the center pixel (uv = (1/2, 1/2), all four weights
/// 1/4) carries a target; every covered pixel enters the gradient penalty.
/// Shading is ambient with a unit factor so the render is the bilinear sample.
struct FourTexelProblem {
    ProjectionView view;
    ShadingConfig shading;
    Eigen::Vector3d target_value;

    static FourTexelProblem make(const Eigen::Vector3d& value = Eigen::Vector3d(0.3, 0.55, 0.8)) {
        std::istringstream obj(
            "v -0.5 -0.5 0\nv 0.5 -0.5 0\nv 0.5 0.5 0\nv -0.5 0.5 0\n"
            "vt 0.25 0.25\nvt 0.75 0.25\nvt 0.75 0.75\nvt 0.25 0.75\n"
            "f 1/1 2/2 3/3 4/4\n");
        const Mesh quad = parse_obj(obj);
        Viewpoint vp;
        vp.radius = 2.0;
        vp.image_size = 15;
        FourTexelProblem p;
        p.target_value = value;
        p.view.gbuffer = rasterize(quad, vp, 1);
        p.view.target = Image<double>(3, 15, 15);
        p.view.target_mask = Mask::Constant(15, 15, false);
        p.view.target_mask(7, 7) = true;
        for (int c = 0; c < 3; ++c) p.view.target(c, 7, 7) = value[c];
        p.shading.model = ShadingModel::SphericalHarmonics;
        p.shading.sh = SHLighting::ambient(2.0 * std::sqrt(std::numbers::pi));
        return p;
    }
};

} // namespace texweave::testing
