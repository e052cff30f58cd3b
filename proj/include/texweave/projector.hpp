#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "texweave/camera.hpp"
#include "texweave/mesh.hpp"
#include "texweave/rasterizer.hpp"
#include "texweave/shading.hpp"
#include "texweave/texture_atlas.hpp"

namespace texweave {

inline constexpr double kDefaultLambda = 0.01;
inline constexpr int kDefaultRenderSize = 2400;
inline constexpr double kDefaultFinalStepFraction = 0.1;

struct ProjectionConfig {
    double lambda = kDefaultLambda; // gradient-penalty weight
    int steps = 400;                // optimizer steps per view
    double step_size = 1e-2;
    int render_size = kDefaultRenderSize;
    // Adaptive-moment optimizer constants.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Cosine decay of the step size from step_size to step_size * final_step_fraction
    // over each view's steps. 1 keeps it constant.
    double final_step_fraction = kDefaultFinalStepFraction;
    unsigned workers = 0;

    void validate() const;
};

// --- Image-space loss terms -------------------------------------------------

struct LossTerm {
    double value = 0.0;
    Image<double> image_grad; // d value / d render, zero outside the mask
};

/// Masked squared error averaged over masked pixels:
/// sum_{mask} |render - target|^2 / #mask. Pixels where target_mask is false
/// (when given) carry no data term but still count as masked.
/// Throws ShapeMismatch.
LossTerm projection_loss(const Image<double>& render, const Mask& mask, const Image<double>& target,
                         const Mask* target_mask = nullptr);

/// sum over masked pixels and channels of |R(x+1) - R(x)| + |R(y+1) - R(y)|,
/// forward differences whose both ends lie in the mask. Subgradient 0 at ties.
LossTerm gradient_penalty(const Image<double>& render, const Mask& mask);

// --- Optimization -----------------------------------------------------------

/// One view's data: geometry, the image to match and optionally which of
/// its pixels carry target data (empty = all of them).
struct ProjectionView {
    GBuffer gbuffer;
    Image<double> target;
    Mask target_mask;
};

/// Per-view objective (sum_{mask} |R - I|^2 + lambda * penalty) / #mask with an
/// exact, deterministic gradient with respect to the atlas texels.
class ViewObjective {
public:
    ViewObjective(const ProjectionView& view, const ShadingConfig& shading, int atlas_rows, int atlas_cols,
                  double lambda, unsigned workers = 0);

    struct Value {
        double total = 0.0;
        double data = 0.0;    // un-normalized squared error
        double penalty = 0.0; // un-normalized gradient penalty
    };

    /// When grad is non-null it receives one column per touched_texels() entry.
    Value evaluate(const Image<double>& atlas_values, Eigen::Matrix<double, 3, Eigen::Dynamic>* grad = nullptr) const;

    /// Texels with a nonzero bilinear weight from some masked pixel.
    const std::vector<Eigen::Index>& touched_texels() const { return plan_.texels(); }
    /// Per touched_texels() entry: reached by a pixel that carries target data.
    /// Only these texels are optimized and marked as touched.
    const std::vector<char>& free_texels() const { return free_; }
    Eigen::Index masked_pixels() const { return static_cast<Eigen::Index>(pixels_.size()); }

private:
    std::vector<Eigen::Index> pixels_; // flat index of each masked pixel (slot)
    std::vector<BilinearFootprint> footprints_;
    Eigen::Matrix<double, 3, Eigen::Dynamic> scale_, offset_, target_;
    std::vector<char> has_target_;
    // Neighbor slots, -1 when outside the mask or the image.
    std::vector<Eigen::Index> right_, down_, left_, up_;
    ScatterPlan plan_;
    std::vector<char> free_;
    double lambda_;
    unsigned workers_;
};

struct OptimizationReport {
    std::vector<std::vector<double>> loss_curves; // per view, loss before each step
};

/// Views are optimized one after another in order, each starting from the
/// atlas left by the previous one. Texels no target pixel of a view reaches
/// keep their values during that view; all values stay in [0, 1]. Throws NoViews.
Atlas optimize_texture(Atlas atlas, std::span<const ProjectionView> views, const ProjectionConfig& cfg,
                       const ShadingConfig& shading, OptimizationReport* report = nullptr);

struct ViewTarget {
    Viewpoint viewpoint;
    Image<double> target; // render_size x render_size
    Mask target_mask;
};

/// Rasterizes each viewpoint at cfg.render_size and optimizes. Throws
/// ShapeMismatch when a target is not render_size^2.
Atlas optimize_texture(Atlas atlas, const Mesh& mesh, std::span<const ViewTarget> views, const ProjectionConfig& cfg,
                       const ShadingConfig& shading, OptimizationReport* report = nullptr);

/// Peak signal-to-noise ratio (peak 1) over texels where mask is set.
double psnr(const Image<double>& a, const Image<double>& b, const Mask& mask);

} // namespace texweave
