#include "texweave/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <random>

namespace texweave {

void Viewpoint::validate() const {
    constexpr double half_pi = std::numbers::pi / 2;
    if (!(radius > 0.0)) throw Error("viewpoint radius must be positive");
    if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw Error("fov_y must lie in (0, pi)");
    if (elevation < -half_pi - 1e-12 || elevation > half_pi + 1e-12) throw Error("elevation must lie in [-pi/2, pi/2]");
    if (image_size <= 0) throw Error("image size must be positive");
}

Eigen::Vector3d Viewpoint::eye() const {
    const double ce = std::cos(elevation);
    return target + radius * Eigen::Vector3d(ce * std::sin(azimuth), std::sin(elevation), ce * std::cos(azimuth));
}

Eigen::Matrix3d Viewpoint::rotation() const {
    const Eigen::Vector3d back = (eye() - target).normalized();
    Eigen::Vector3d up = Eigen::Vector3d::UnitY();
    // Looking straight up or down: +y is parallel to the view axis.
    if (std::abs(back.dot(up)) > 1.0 - 1e-9) up = Eigen::Vector3d::UnitX();
    const Eigen::Vector3d right = up.cross(back).normalized();
    const Eigen::Vector3d true_up = back.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = true_up.transpose();
    r.row(2) = back.transpose();
    return r;
}

std::vector<Viewpoint> schedule_viewpoints(double radius, double fov_y, int image_size,
                                           const Eigen::Vector3d& target) {
    std::vector<Viewpoint> views;
    views.reserve(kScheduledViews);
    Viewpoint base;
    base.radius = radius;
    base.fov_y = fov_y;
    base.image_size = image_size;
    base.target = target;
    base.validate();
    for (int k = 0; k < kRingViews; ++k) {
        Viewpoint vp = base;
        vp.azimuth = k * (2.0 * std::numbers::pi / kRingViews);
        views.push_back(vp);
    }
    Viewpoint top = base, bottom = base;
    top.elevation = std::numbers::pi / 2;
    bottom.elevation = -std::numbers::pi / 2;
    views.push_back(top);
    views.push_back(bottom);
    return views;
}

Viewpoint random_viewpoint(std::uint64_t seed, double radius, double fov_y, int image_size,
                           const Eigen::Vector3d& target) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> az(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> el(-std::numbers::pi / 6, std::numbers::pi / 3);
    Viewpoint vp;
    vp.azimuth = az(rng);
    vp.elevation = el(rng);
    vp.radius = radius;
    vp.fov_y = fov_y;
    vp.image_size = image_size;
    vp.target = target;
    vp.validate();
    return vp;
}

Eigen::Vector3d to_camera(const Viewpoint& vp, const Eigen::Vector3d& point) {
    Eigen::Vector3d cam = vp.rotation() * (point - vp.eye());
    cam.z() = -cam.z();
    return cam;
}

Projection view_project(const Viewpoint& vp, const Eigen::Vector3d& point) {
    const Eigen::Vector3d cam = to_camera(vp, point);
    Projection p;
    p.depth = cam.z();
    p.in_front = cam.z() > 0.0;
    if (!p.in_front) return p;
    const double focal = 1.0 / std::tan(vp.fov_y / 2); // square images: aspect 1
    p.ndc = focal * cam.head<2>() / cam.z();
    return p;
}

DepthMap normalize_depth(const Plane<float>& raw, const Mask& mask) {
    require_same_shape(static_cast<int>(raw.rows()), static_cast<int>(raw.cols()), static_cast<int>(mask.rows()),
                       static_cast<int>(mask.cols()), "depth mask");
    if (!mask.any()) throw EmptyMask();
    const auto masked = raw.array();
    const float lo = mask.select(masked, std::numeric_limits<float>::infinity()).minCoeff();
    const float hi = mask.select(masked, -std::numeric_limits<float>::infinity()).maxCoeff();

    DepthMap out;
    out.mask = mask;
    if (hi == lo) {
        out.values = mask.select(Plane<float>::Constant(raw.rows(), raw.cols(), 0.5f).array(), 0.0f).matrix();
        return out;
    }
    const float scale = 1.0f / (hi - lo);
    out.values = mask.select((hi - masked) * scale, 0.0f).matrix();
    return out;
}

} // namespace texweave
