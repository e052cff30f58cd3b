#include "texweave/image_io.hpp"

#include <png.h>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "texweave/error.hpp"

namespace texweave {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
    if (!f) throw Error("cannot open " + path.string());
    return f;
}

void write_png_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes, int rows, int cols,
                     int channels) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < rows; ++r)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(r) * cols * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

unsigned char to_byte(double v) {
    if (!(v > 0.0)) return 0; // also maps NaN to 0
    return static_cast<unsigned char>(std::lround(std::min(v, 1.0) * 255.0));
}

bool little_endian() { return std::endian::native == std::endian::little; }

std::uint32_t byteswap32(std::uint32_t x) {
    return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

} // namespace

void write_png(const std::filesystem::path& path, const Image<double>& image) {
    const int ch = image.channels();
    if (ch != 1 && ch != 3) throw ShapeMismatch("PNG export needs 1 or 3 channels, got " + std::to_string(ch));
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.rows()) * image.cols() * ch);
    std::size_t k = 0;
    for (int r = 0; r < image.rows(); ++r)
        for (int c = 0; c < image.cols(); ++c)
            for (int p = 0; p < ch; ++p) bytes[k++] = to_byte(image(p, r, c));
    write_png_bytes(path, bytes, image.rows(), image.cols(), ch);
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<unsigned char> bytes(static_cast<std::size_t>(mask.size()));
    for (Eigen::Index i = 0; i < mask.size(); ++i) bytes[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
    write_png_bytes(path, bytes, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), 1);
}

Image<double> read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    const auto file = path.string();
    if (!png_image_begin_read_from_file(&img, file.c_str())) throw Error("cannot read PNG " + file + ": " + img.message);
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int ch = gray ? 1 : 3;
    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error("cannot decode PNG " + file + ": " + img.message);
    }
    const int rows = static_cast<int>(img.height), cols = static_cast<int>(img.width);
    Image<double> out(ch, rows, cols);
    std::size_t k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            for (int p = 0; p < ch; ++p) out(p, r, c) = bytes[k++] / 255.0;
    return out;
}

// PFM stores scanlines bottom to top.
void write_pfm(const std::filesystem::path& path, const Image<float>& image) {
    const int ch = image.channels();
    if (ch != 1 && ch != 3) throw ShapeMismatch("PFM export needs 1 or 3 channels, got " + std::to_string(ch));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string());
    out << (ch == 3 ? "PF" : "Pf") << '\n' << image.cols() << ' ' << image.rows() << '\n'
        << (little_endian() ? "-1.0" : "1.0") << '\n';
    std::vector<float> line(static_cast<std::size_t>(image.cols()) * ch);
    for (int r = image.rows() - 1; r >= 0; --r) {
        std::size_t k = 0;
        for (int c = 0; c < image.cols(); ++c)
            for (int p = 0; p < ch; ++p) line[k++] = image(p, r, c);
        out.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(line.size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing " + path.string());
}

Image<float> read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string magic;
    int cols = 0, rows = 0;
    double scale = 0.0;
    in >> magic >> cols >> rows >> scale;
    in.get();
    if (!in || (magic != "PF" && magic != "Pf") || cols <= 0 || rows <= 0 || scale == 0.0)
        throw ParseError("bad PFM header in " + path.string(), 0);
    const int ch = magic == "PF" ? 3 : 1;
    const bool swap = (scale < 0.0) != little_endian();
    Image<float> out(ch, rows, cols);
    std::vector<float> line(static_cast<std::size_t>(cols) * ch);
    for (int r = rows - 1; r >= 0; --r) {
        in.read(reinterpret_cast<char*>(line.data()), static_cast<std::streamsize>(line.size() * sizeof(float)));
        if (!in) throw ParseError("truncated PFM " + path.string(), 0);
        std::size_t k = 0;
        for (int c = 0; c < cols; ++c)
            for (int p = 0; p < ch; ++p) {
                float v = line[k++];
                if (swap) v = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(v)));
                out(p, r, c) = v;
            }
    }
    return out;
}

void write_latent(const std::filesystem::path& stem, const LatentGrid<float>& latent) {
    auto blob = stem;
    blob += ".f32";
    std::ofstream out(blob, std::ios::binary);
    if (!out) throw Error("cannot open " + blob.string());
    for (int c = 0; c < latent.channels(); ++c)
        out.write(reinterpret_cast<const char*>(latent.values.plane(c).data()),
                  static_cast<std::streamsize>(latent.values.plane(c).size() * sizeof(float)));
    auto meta = stem;
    meta += ".json";
    std::ofstream m(meta);
    m << nlohmann::json{{"channels", latent.channels()}, {"size", latent.size()}, {"timestep", latent.timestep},
                        {"dtype", "float32"}, {"layout", "CHW"}}
             .dump(2)
      << '\n';
    if (!out || !m) throw Error("failed writing latent " + stem.string());
}

LatentGrid<float> read_latent(const std::filesystem::path& stem) {
    auto meta = stem;
    meta += ".json";
    std::ifstream m(meta);
    if (!m) throw Error("cannot open " + meta.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta.string() + ": " + e.what(), 0);
    }
    const int ch = j.at("channels").get<int>(), size = j.at("size").get<int>();
    LatentGrid<float> latent{Image<float>(ch, size, size), j.value("timestep", 0)};
    auto blob = stem;
    blob += ".f32";
    std::ifstream in(blob, std::ios::binary);
    for (int c = 0; c < ch; ++c)
        in.read(reinterpret_cast<char*>(latent.values.plane(c).data()),
                static_cast<std::streamsize>(latent.values.plane(c).size() * sizeof(float)));
    if (!in) throw ShapeMismatch("latent blob " + blob.string() + " is shorter than its header says");
    return latent;
}

void save_atlas(const std::filesystem::path& path, const Atlas& atlas) { write_pfm(path, atlas.values.cast<float>()); }

Atlas load_atlas(const std::filesystem::path& path) {
    auto img = read_pfm(path);
    if (img.channels() != 3) throw ShapeMismatch("atlas checkpoint must have 3 channels");
    return Atlas(img.cast<double>());
}

} // namespace texweave
