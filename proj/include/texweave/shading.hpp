#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <numbers>

#include "texweave/image.hpp"
#include "texweave/rasterizer.hpp"
#include "texweave/texture_atlas.hpp"

namespace texweave {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

struct BRDFParams {
    double k_d = 1.0;
    Eigen::Vector3d f0 = Eigen::Vector3d::Constant(0.04);
    double roughness = 0.5; // in (0, 1]; alpha = roughness^2
};

struct LightSource {
    Eigen::Vector3d direction = Eigen::Vector3d(0.0, 0.0, 1.0); // surface -> light, unit
    Eigen::Vector3d intensity = Eigen::Vector3d::Ones();
};

/// Nine real SH coefficients ordered (0,0),(1,-1),(1,0),(1,1),(2,-2),(2,-1),(2,0),(2,1),(2,2).
struct SHLighting {
    Eigen::Matrix<double, 9, 1> coefficients = Eigen::Matrix<double, 9, 1>::Zero();

    /// Constant environment with only the (0,0) band set.
    static SHLighting ambient(double w00) {
        SHLighting sh;
        sh.coefficients[0] = w00;
        return sh;
    }
};

inline constexpr double kDefaultAmbientW00 = 3.0;
inline constexpr double kSpecularDenominatorFloor = 1e-4;

// --- BRDF terms -------------------------------------------------------------

template <typename Scalar>
Scalar phong_diffuse(Scalar k_d, const Vec3<Scalar>& l, const Vec3<Scalar>& n) {
    return k_d * std::max(l.dot(n), Scalar(0));
}

/// GGX / Trowbridge-Reitz normal distribution with alpha = roughness^2.
template <typename Scalar>
Scalar ggx_ndf(Scalar n_dot_h, Scalar roughness) {
    const Scalar a = roughness * roughness;
    const Scalar a2 = a * a;
    const Scalar d = n_dot_h * n_dot_h * (a2 - Scalar(1)) + Scalar(1);
    return a2 / (std::numbers::pi_v<Scalar> * d * d);
}

template <typename Scalar>
Vec3<Scalar> fresnel_schlick(Scalar v_dot_h, const Vec3<Scalar>& f0) {
    const Scalar t = std::pow(Scalar(1) - v_dot_h, Scalar(5));
    return f0 + (Vec3<Scalar>::Ones() - f0) * t;
}

/// Smith masking term for one direction.
template <typename Scalar>
Scalar smith_g1(Scalar n_dot_x, Scalar roughness) {
    const Scalar a = roughness * roughness;
    const Scalar a2 = a * a;
    return Scalar(2) * n_dot_x / (n_dot_x + std::sqrt(a2 + (Scalar(1) - a2) * n_dot_x * n_dot_x));
}

template <typename Scalar>
Scalar smith_ggx(Scalar n_dot_l, Scalar n_dot_v, Scalar roughness) {
    return smith_g1(n_dot_l, roughness) * smith_g1(n_dot_v, roughness);
}

/// D F G / (4 (n.l)(n.v)); zero unless both n.l and n.v are positive.
template <typename Scalar>
Vec3<Scalar> cook_torrance_specular(const BRDFParams& params, const Vec3<Scalar>& l, const Vec3<Scalar>& v,
                                    const Vec3<Scalar>& n) {
    const Scalar nl = n.dot(l), nv = n.dot(v);
    if (!(nl > Scalar(0)) || !(nv > Scalar(0))) return Vec3<Scalar>::Zero();
    const Vec3<Scalar> h = (l + v).normalized();
    const auto rough = static_cast<Scalar>(params.roughness);
    const Scalar nh = std::clamp(n.dot(h), Scalar(0), Scalar(1));
    const Scalar vh = std::clamp(v.dot(h), Scalar(0), Scalar(1));
    const Scalar d = ggx_ndf(nh, rough);
    const Vec3<Scalar> f = fresnel_schlick(vh, Vec3<Scalar>(params.f0.template cast<Scalar>()));
    const Scalar g = smith_ggx(std::min(nl, Scalar(1)), std::min(nv, Scalar(1)), rough);
    const Scalar denom = std::max(Scalar(4) * nl * nv, static_cast<Scalar>(kSpecularDenominatorFloor));
    return f * (d * g / denom);
}

// --- Spherical harmonics ----------------------------------------------------

/// Real SH basis, bands 0..2, standard orthonormal normalization.
template <typename Scalar>
Eigen::Matrix<Scalar, 9, 1> sh_basis(const Vec3<Scalar>& n) {
    using std::numbers::pi_v;
    const Scalar c0 = Scalar(0.5) / std::sqrt(pi_v<Scalar>);
    const Scalar c1 = std::sqrt(Scalar(3) / (Scalar(4) * pi_v<Scalar>));
    const Scalar c2 = std::sqrt(Scalar(15) / (Scalar(4) * pi_v<Scalar>));
    const Scalar c3 = std::sqrt(Scalar(5) / (Scalar(16) * pi_v<Scalar>));
    const Scalar c4 = std::sqrt(Scalar(15) / (Scalar(16) * pi_v<Scalar>));
    const Scalar x = n.x(), y = n.y(), z = n.z();
    Eigen::Matrix<Scalar, 9, 1> y9;
    y9 << c0, c1 * y, c1 * z, c1 * x, c2 * x * y, c2 * y * z, c3 * (Scalar(3) * z * z - Scalar(1)), c2 * x * z,
        c4 * (x * x - y * y);
    return y9;
}

/// Shading factor sum_lm w_lm Y_lm(n), clamped at 0.
template <typename Scalar>
Scalar sh_shading(const SHLighting& lighting, const Vec3<Scalar>& n) {
    return std::max(Scalar(0), static_cast<Scalar>(lighting.coefficients.dot(sh_basis<double>(n.template cast<double>()))));
}

// --- Image-space rendering --------------------------------------------------

enum class ShadingModel { CookTorrance, SphericalHarmonics };

struct ShadingConfig {
    ShadingModel model = ShadingModel::SphericalHarmonics;
    BRDFParams brdf;
    LightSource light;
    bool specular = true; // Cook-Torrance only
    SHLighting sh = SHLighting::ambient(kDefaultAmbientW00);
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

/// Every supported model renders as texture * scale + offset per pixel; the
/// offset does not depend on the atlas.
struct ShadingTerms {
    Eigen::Vector3d scale = Eigen::Vector3d::Zero();
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
};

ShadingTerms shade_fragment(const ShadingConfig& cfg, const Fragment& frag, const Eigen::Vector3d& eye);

/// Texture * k_d * max(l.n, 0) * intensity + specular * intensity over the
/// mask, background elsewhere.
Image<double> render_cook_torrance(const GBuffer& gbuffer, const Atlas& atlas, const BRDFParams& params,
                                   const LightSource& light, bool specular = true,
                                   const Eigen::Vector3d& background = Eigen::Vector3d::Zero());

/// Texture * max(sum w Y(n), 0) over the mask, background elsewhere.
Image<double> render_sh(const GBuffer& gbuffer, const Atlas& atlas, const SHLighting& lighting,
                        const Eigen::Vector3d& background = Eigen::Vector3d::Zero());

Image<double> render(const GBuffer& gbuffer, const Atlas& atlas, const ShadingConfig& cfg);

} // namespace texweave
