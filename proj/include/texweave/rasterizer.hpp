#pragma once

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

#include "texweave/camera.hpp"
#include "texweave/image.hpp"
#include "texweave/mesh.hpp"
#include "texweave/texture_atlas.hpp"

namespace texweave {

/// One G-buffer record. face < 0 means the pixel is not covered.
struct Fragment {
    int face = -1;
    Eigen::Vector3f barycentric = Eigen::Vector3f::Zero(); // perspective-correct
    Eigen::Vector2f uv = Eigen::Vector2f::Zero();
    Eigen::Vector3f normal = Eigen::Vector3f::Zero();      // interpolated, renormalized
    Eigen::Vector3f position = Eigen::Vector3f::Zero();    // world space
    float depth = 0.0f;                                    // camera-space depth
};

struct GBuffer {
    int rows = 0;
    int cols = 0;
    Eigen::Vector3d eye = Eigen::Vector3d::Zero();
    std::vector<Fragment> fragments; // row-major

    const Fragment& at(int r, int c) const { return fragments[static_cast<std::size_t>(r) * cols + c]; }
    Mask mask() const;
    /// Camera depth where covered, 0 elsewhere.
    Plane<float> depth() const;
    Eigen::Index covered_count() const;
};

/// Z-buffered, back-face-culled rasterization with one sample at each pixel
/// center. Output is identical for any worker count.
GBuffer rasterize(const Mesh& mesh, const Viewpoint& vp, unsigned workers = 0);

/// Four texels and bilinear weights (nonnegative, summing to 1) for a uv
/// lookup with clamp-to-edge addressing. Indices are row * cols + col.
struct BilinearFootprint {
    std::array<Eigen::Index, 4> texels{};
    Eigen::Vector4d weights = Eigen::Vector4d::Zero();
};

BilinearFootprint bilinear_footprint(const Eigen::Vector2d& uv, int rows, int cols);

template <typename Scalar>
struct TextureSample {
    Eigen::Matrix<Scalar, 3, 1> value;
    BilinearFootprint footprint;
};

template <typename Scalar>
TextureSample<Scalar> sample_texture(const TextureAtlas<Scalar>& atlas, const Eigen::Vector2d& uv) {
    TextureSample<Scalar> s;
    s.footprint = bilinear_footprint(uv, atlas.rows(), atlas.cols());
    for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int k = 0; k < 4; ++k) v += s.footprint.weights[k] * static_cast<double>(atlas.values.at(c, s.footprint.texels[static_cast<std::size_t>(k)]));
        s.value[c] = static_cast<Scalar>(v);
    }
    return s;
}

/// Transposed view of a list of footprints: for every texel with a nonzero
/// weight, the (pixel slot, weight) entries that reference it, in slot order.
/// Accumulating through this plan reproduces a sequential scatter in pixel
/// order bit-for-bit, while every texel can be reduced independently.
class ScatterPlan {
public:
    ScatterPlan() = default;
    ScatterPlan(std::span<const BilinearFootprint> footprints, Eigen::Index texel_count);

    struct Entry {
        Eigen::Index slot;
        double weight;
    };

    /// Texels with at least one nonzero weight, ascending.
    const std::vector<Eigen::Index>& texels() const { return texels_; }
    std::span<const Entry> entries(std::size_t i) const {
        return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }

    /// Column i holds the weighted sum of slot_grad columns for texels()[i].
    /// slot_grad is 3 x slots, one column per footprint.
    Eigen::Matrix<double, 3, Eigen::Dynamic> gather(const Eigen::Matrix<double, 3, Eigen::Dynamic>& slot_grad,
                                                    unsigned workers = 0) const;

    /// out(c, texel) += gathered sums.
    void accumulate(const Eigen::Matrix<double, 3, Eigen::Dynamic>& slot_grad, Image<double>& out,
                    unsigned workers = 0) const;

private:
    std::vector<Eigen::Index> texels_;
    std::vector<std::size_t> offsets_;
    std::vector<Entry> entries_;
};

/// Gradient of a loss with respect to the atlas, given its gradient with
/// respect to the sampled texture value at each covered pixel. Geometry is
/// held constant. Throws ShapeMismatch when image_grad and gbuffer disagree.
Image<double> backward_to_texture(const GBuffer& gbuffer, const Image<double>& image_grad, int atlas_rows,
                                  int atlas_cols, unsigned workers = 0);

} // namespace texweave
