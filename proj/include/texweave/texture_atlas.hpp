#pragma once

#include "texweave/image.hpp"

namespace texweave {

inline constexpr int kDefaultAtlasSize = 2048;

/// RGB texture atlas being optimized, plus the texels that ever received a
/// gradient. Texel (row, col) has its center at
/// u = (col + 0.5) / W, v = 1 - (row + 0.5) / H (row 0 is the top of the image).
template <typename Scalar>
struct TextureAtlas {
    Image<Scalar> values;
    Mask touched;

    TextureAtlas() = default;
    TextureAtlas(int rows, int cols, Scalar fill = Scalar(0))
        : values(3, rows, cols, fill), touched(Mask::Constant(rows, cols, false)) {}
    explicit TextureAtlas(Image<Scalar> image)
        : values(std::move(image)), touched(Mask::Constant(values.rows(), values.cols(), false)) {}

    int rows() const noexcept { return values.rows(); }
    int cols() const noexcept { return values.cols(); }
    Eigen::Index texel_count() const noexcept { return static_cast<Eigen::Index>(rows()) * cols(); }
};

using Atlas = TextureAtlas<double>;

} // namespace texweave
