#pragma once

#include <filesystem>

#include "texweave/image.hpp"
#include "texweave/multidiffusion.hpp"
#include "texweave/texture_atlas.hpp"

namespace texweave {

/// 8-bit PNG, gray for one channel and RGB for three. Values are clamped to
/// [0, 1] and rounded to the nearest code.
void write_png(const std::filesystem::path& path, const Image<double>& image);
void write_png(const std::filesystem::path& path, const Mask& mask);

/// Gray images load as one channel, RGB(A) as three; alpha is dropped.
Image<double> read_png(const std::filesystem::path& path);

/// Portable float map (1 or 3 channels), little-endian, bit-exact for float.
void write_pfm(const std::filesystem::path& path, const Image<float>& image);
Image<float> read_pfm(const std::filesystem::path& path);

inline void write_pfm(const std::filesystem::path& path, const Plane<float>& plane) {
    Image<float> img(1, static_cast<int>(plane.rows()), static_cast<int>(plane.cols()));
    img.plane(0) = plane;
    write_pfm(path, img);
}

/// Latent blob: <stem>.f32 holds the (C, L, L) float32 values, <stem>.json
/// the channels, size and timestep.
void write_latent(const std::filesystem::path& stem, const LatentGrid<float>& latent);
LatentGrid<float> read_latent(const std::filesystem::path& stem);

/// Atlas checkpoint as float image; touched texels are not stored.
void save_atlas(const std::filesystem::path& path, const Atlas& atlas);
Atlas load_atlas(const std::filesystem::path& path);

} // namespace texweave
