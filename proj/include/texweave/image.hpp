#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "texweave/error.hpp"

namespace texweave {

template <typename Scalar>
using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Planar multi-channel image: one row-major Eigen plane per channel.
/// Also used for latent grids (C x L x L) and texture atlases (3 x H x W).
template <typename Scalar>
class Image {
public:
    using PlaneType = Plane<Scalar>;

    Image() = default;
    Image(int channels, int rows, int cols, Scalar fill = Scalar(0))
        : planes_(static_cast<std::size_t>(channels), PlaneType::Constant(rows, cols, fill)) {}

    int channels() const noexcept { return static_cast<int>(planes_.size()); }
    int rows() const noexcept { return planes_.empty() ? 0 : static_cast<int>(planes_.front().rows()); }
    int cols() const noexcept { return planes_.empty() ? 0 : static_cast<int>(planes_.front().cols()); }
    bool empty() const noexcept { return planes_.empty() || planes_.front().size() == 0; }

    PlaneType& plane(int c) { return planes_[static_cast<std::size_t>(c)]; }
    const PlaneType& plane(int c) const { return planes_[static_cast<std::size_t>(c)]; }

    Scalar& operator()(int c, int r, int col) { return planes_[static_cast<std::size_t>(c)](r, col); }
    Scalar operator()(int c, int r, int col) const { return planes_[static_cast<std::size_t>(c)](r, col); }

    // Flat access by (channel, row * cols + col).
    Scalar& at(int c, Eigen::Index i) { return planes_[static_cast<std::size_t>(c)].data()[i]; }
    Scalar at(int c, Eigen::Index i) const { return planes_[static_cast<std::size_t>(c)].data()[i]; }

    void fill(Scalar value) {
        for (auto& p : planes_) p.setConstant(value);
    }

    bool same_shape(const Image& other) const {
        return channels() == other.channels() && rows() == other.rows() && cols() == other.cols();
    }

    Image crop(int row, int col, int rows, int cols) const {
        Image out;
        out.planes_.reserve(planes_.size());
        for (const auto& p : planes_) out.planes_.emplace_back(p.block(row, col, rows, cols));
        return out;
    }

    template <typename Other>
    Image<Other> cast() const {
        Image<Other> out(channels(), rows(), cols());
        for (int c = 0; c < channels(); ++c) out.plane(c) = plane(c).template cast<Other>();
        return out;
    }

    bool operator==(const Image& other) const {
        if (!same_shape(other)) return false;
        for (int c = 0; c < channels(); ++c)
            if (plane(c) != other.plane(c)) return false;
        return true;
    }

private:
    std::vector<PlaneType> planes_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

inline void require_same_shape(int rows_a, int cols_a, int rows_b, int cols_b, const char* what) {
    if (rows_a != rows_b || cols_a != cols_b)
        throw ShapeMismatch(std::string(what) + ": expected " + std::to_string(rows_a) + "x" +
                            std::to_string(cols_a) + ", got " + std::to_string(rows_b) + "x" +
                            std::to_string(cols_b));
}

/// Bilinear resample of every channel to (rows, cols), pixel-center aligned
/// with clamp-to-edge addressing.
template <typename Scalar>
Image<Scalar> resize_bilinear(const Image<Scalar>& src, int rows, int cols) {
    Image<Scalar> out(src.channels(), rows, cols);
    const double sy = static_cast<double>(src.rows()) / rows;
    const double sx = static_cast<double>(src.cols()) / cols;
    for (int r = 0; r < rows; ++r) {
        const double y = (r + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(y));
        const double fy = y - y0;
        const int r0 = std::clamp(y0, 0, src.rows() - 1);
        const int r1 = std::clamp(y0 + 1, 0, src.rows() - 1);
        for (int c = 0; c < cols; ++c) {
            const double x = (c + 0.5) * sx - 0.5;
            const int x0 = static_cast<int>(std::floor(x));
            const double fx = x - x0;
            const int c0 = std::clamp(x0, 0, src.cols() - 1);
            const int c1 = std::clamp(x0 + 1, 0, src.cols() - 1);
            for (int ch = 0; ch < src.channels(); ++ch) {
                const auto& p = src.plane(ch);
                const double top = (1 - fx) * p(r0, c0) + fx * p(r0, c1);
                const double bottom = (1 - fx) * p(r1, c0) + fx * p(r1, c1);
                out(ch, r, c) = static_cast<Scalar>((1 - fy) * top + fy * bottom);
            }
        }
    }
    return out;
}

/// Area-style downsample of a mask: a target cell is the mean of the source
/// pixels whose centers fall inside it.
inline Eigen::ArrayXXd cell_fraction(const Mask& src, int rows, int cols) {
    Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(rows, cols);
    Eigen::ArrayXXd count = Eigen::ArrayXXd::Zero(rows, cols);
    for (Eigen::Index r = 0; r < src.rows(); ++r) {
        const auto tr = static_cast<Eigen::Index>((r * rows) / src.rows());
        for (Eigen::Index c = 0; c < src.cols(); ++c) {
            const auto tc = static_cast<Eigen::Index>((c * cols) / src.cols());
            sum(tr, tc) += src(r, c) ? 1.0 : 0.0;
            count(tr, tc) += 1.0;
        }
    }
    return (count > 0).select(sum / count.max(1.0), 0.0);
}

} // namespace texweave
