#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numbers>
#include <vector>

#include "texweave/image.hpp"

namespace texweave {

/// Perspective camera orbiting a target point. Azimuth 0 looks down -z from
/// the +z side; positive elevation raises the camera toward +y.
struct Viewpoint {
    double azimuth = 0.0;
    double elevation = 0.0;
    double radius = 1.0;
    double fov_y = 70.0 * std::numbers::pi / 180.0;
    int image_size = 512;
    Eigen::Vector3d target = Eigen::Vector3d::Zero();

    /// Throws Error when radius, fov_y, elevation or image_size is out of range.
    void validate() const;

    Eigen::Vector3d eye() const;
    /// Rows are the camera right, up and backward axes in world space.
    Eigen::Matrix3d rotation() const;
};

inline constexpr int kRingViews = 8;
inline constexpr int kScheduledViews = kRingViews + 2;
inline constexpr double kDefaultRadiusScale = 1.8;

/// Eight ring views at elevation 0 with azimuth k * pi/4, then top and bottom.
std::vector<Viewpoint> schedule_viewpoints(double radius, double fov_y, int image_size,
                                           const Eigen::Vector3d& target = Eigen::Vector3d::Zero());

/// Seeded single random view: uniform azimuth, elevation uniform in [-pi/6, pi/3].
Viewpoint random_viewpoint(std::uint64_t seed, double radius, double fov_y, int image_size,
                           const Eigen::Vector3d& target = Eigen::Vector3d::Zero());

struct Projection {
    Eigen::Vector2d ndc = Eigen::Vector2d::Zero();
    double depth = 0.0;       // distance along the viewing axis
    bool in_front = false;    // false when depth <= 0; callers cull such points
};

Projection view_project(const Viewpoint& vp, const Eigen::Vector3d& point);

/// Camera-space position (x right, y up, z = depth along the view axis).
Eigen::Vector3d to_camera(const Viewpoint& vp, const Eigen::Vector3d& point);

struct DepthMap {
    Plane<float> values;
    Mask mask;
};

/// Affine map of masked depths: nearest -> 1, farthest -> 0, 0 outside the
/// mask; a constant masked depth maps to 0.5. Throws EmptyMask.
DepthMap normalize_depth(const Plane<float>& raw, const Mask& mask);

} // namespace texweave
