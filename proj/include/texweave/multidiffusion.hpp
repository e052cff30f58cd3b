#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

#include "texweave/camera.hpp"
#include "texweave/denoiser.hpp"
#include "texweave/image.hpp"

namespace texweave {

inline constexpr int kWindowSize = 64;
inline constexpr int kDefaultStride = 16;
inline constexpr int kDefaultMdOutputSize = 1024;
inline constexpr int kLatentDownscale = 8;
inline constexpr int kLatentChannels = 4;

template <typename Scalar>
struct LatentGrid {
    Image<Scalar> values; // C x L x L
    int timestep = 0;

    int size() const { return values.rows(); }
    int channels() const { return values.channels(); }
};

struct Window {
    int row = 0;
    int col = 0;
    int size = kWindowSize;
    double weight = 0.0;

    bool contains(int r, int c) const { return r >= row && r < row + size && c >= col && c < col + size; }
};

/// Per-axis window origins: multiples of stride, plus L - size when the last
/// multiple leaves cells uncovered. Throws WindowTooLarge.
std::vector<int> window_origins(int grid, int size, int stride);

/// Cartesian product of window_origins, row-major. Weights start at 0.
std::vector<Window> tile_windows(int grid, int size = kWindowSize, int stride = kDefaultStride);

/// Fraction of the window's cells set in the object mask.
double region_weight(const Window& window, const Mask& object_mask);

/// Windows sharing at least one cell with the update mask, order preserved.
std::vector<Window> filter_windows(std::span<const Window> windows, const Mask& update_mask);

template <typename Scalar>
struct DenoiseProposal {
    Window window;
    Image<Scalar> values; // C x size x size
};

enum class WeightMode {
    Quadratic, // cell = sum W^2 phi / sum W^2, the minimizer of the weighted squared loss
    Linear,    // cell = sum W phi / sum W
};

template <typename Scalar>
struct MdStepResult {
    LatentGrid<Scalar> latent;
    bool empty_proposals = false; // latent returned unchanged
};

namespace detail {
inline double weight_factor(double w, WeightMode mode) { return mode == WeightMode::Quadratic ? w * w : w; }

template <typename Scalar>
void check_proposal(const LatentGrid<Scalar>& current, const DenoiseProposal<Scalar>& p) {
    const Window& w = p.window;
    if (w.row < 0 || w.col < 0 || w.row + w.size > current.size() || w.col + w.size > current.size())
        throw WindowTooLarge(current.size(), w.size);
    if (p.values.channels() != current.channels() || p.values.rows() != w.size || p.values.cols() != w.size)
        throw ShapeMismatch("proposal shape does not match its window");
}
} // namespace detail

/// Closed-form minimizer of sum_i |W_i * (F_i(J) - phi_i)|^2: every covered
/// cell becomes the weight-averaged proposal; cells with no weight keep
/// their current value. Accumulation follows proposal order.
template <typename Scalar>
MdStepResult<Scalar> md_step(const LatentGrid<Scalar>& current, std::span<const DenoiseProposal<Scalar>> proposals,
                             WeightMode mode = WeightMode::Quadratic) {
    MdStepResult<Scalar> out{current, proposals.empty()};
    if (proposals.empty()) return out;

    const int n = current.size();
    Image<Scalar> numerator(current.channels(), n, n);
    Plane<Scalar> denominator = Plane<Scalar>::Zero(n, n);
    Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> contributors =
        Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(n, n);
    for (const auto& p : proposals) {
        detail::check_proposal(current, p);
        const auto w = static_cast<Scalar>(detail::weight_factor(p.window.weight, mode));
        if (w == Scalar(0)) continue;
        const int s = p.window.size;
        denominator.block(p.window.row, p.window.col, s, s).array() += w;
        contributors.block(p.window.row, p.window.col, s, s) += 1;
        for (int c = 0; c < current.channels(); ++c)
            numerator.plane(c).block(p.window.row, p.window.col, s, s) += w * p.values.plane(c);
    }
    const auto covered = (denominator.array() > Scalar(0));
    for (int c = 0; c < current.channels(); ++c)
        out.latent.values.plane(c).array() =
            covered.select(numerator.plane(c).array() / denominator.array().max(Scalar(1e-30)),
                           current.values.plane(c).array());
    // A cell under a single window takes its proposal as is.
    for (const auto& p : proposals) {
        if (detail::weight_factor(p.window.weight, mode) == 0.0) continue;
        const int s = p.window.size;
        const auto sole = contributors.block(p.window.row, p.window.col, s, s) == 1;
        for (int c = 0; c < current.channels(); ++c) {
            auto block = out.latent.values.plane(c).block(p.window.row, p.window.col, s, s).array();
            block = sole.select(p.values.plane(c).array(), block);
        }
    }
    return out;
}

/// The reconciliation objective sum_i W_i^2 |F_i(J) - phi_i|^2 (or W_i for
/// the linear mode).
template <typename Scalar>
double md_loss(const LatentGrid<Scalar>& latent, std::span<const DenoiseProposal<Scalar>> proposals,
               WeightMode mode = WeightMode::Quadratic) {
    double total = 0.0;
    for (const auto& p : proposals) {
        detail::check_proposal(latent, p);
        const double w = detail::weight_factor(p.window.weight, mode);
        for (int c = 0; c < latent.channels(); ++c)
            total += w * (latent.values.plane(c).block(p.window.row, p.window.col, p.window.size, p.window.size) -
                          p.values.plane(c))
                             .template cast<double>()
                             .squaredNorm();
    }
    return total;
}

struct MdConfig {
    int window_size = kWindowSize;
    int stride = kDefaultStride;
    WeightMode weights = WeightMode::Quadratic;
    unsigned max_in_flight = 4;
    std::string session_id = "texweave";
};

struct MdRunStats {
    std::vector<int> windows_per_step; // retained, nonzero-weight windows
};

/// Iterates tile -> filter -> weight -> query -> md_step over consecutive
/// schedule entries (strictly decreasing, ending at 0). The denoiser sees
/// each window's latent crop and depth crop; depth.mask is the object mask
/// used for the weights. Queries run concurrently, reduction order is fixed.
/// Throws DenoiserFailure naming the window and timestep.
LatentGrid<float> run_md_denoising(LatentGrid<float> init, Denoiser& denoiser, const DepthMap& depth,
                                   const std::string& prompt_handle, const Mask& update_mask,
                                   std::span<const int> schedule, const MdConfig& cfg = {},
                                   MdRunStats* stats = nullptr);

/// Standard normal latent, seeded.
LatentGrid<float> random_latent(int channels, int size, int timestep, std::uint64_t seed);

} // namespace texweave
