#pragma once

// 8-bit grayscale image I/O: PGM (read/write) and PNG (read).

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "pdnet/imaging.hpp"

namespace pdnet::io {

namespace fs = std::filesystem;

namespace detail {

inline void skip_pgm_space(std::istream& in) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

inline std::size_t read_pgm_int(std::istream& in, const fs::path& path) {
    skip_pgm_space(in);
    long long v = -1;
    if (!(in >> v) || v < 0) throw IoError("malformed PGM header in " + path.string());
    return static_cast<std::size_t>(v);
}

}  // namespace detail

inline ImageTensor read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5" && magic != "P2") throw IoError(path.string() + " is not a PGM file");
    const auto width = detail::read_pgm_int(in, path);
    const auto height = detail::read_pgm_int(in, path);
    const auto maxval = detail::read_pgm_int(in, path);
    if (width == 0 || height == 0 || maxval == 0 || maxval > 255)
        throw IoError(path.string() + ": only 8-bit PGM images are supported");
    ImageTensor img;
    img.pixels = Matrix(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        std::vector<unsigned char> buf(width * height);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError(path.string() + ": truncated pixel data");
        for (std::size_t i = 0; i < buf.size(); ++i) img.pixels.data()[i] = buf[i];
    } else {
        for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
            int v = 0;
            if (!(in >> v)) throw IoError(path.string() + ": truncated pixel data");
            img.pixels.data()[i] = v;
        }
    }
    if (maxval != 255) img.pixels *= 255.0 / static_cast<double>(maxval);
    return img;
}

/// Rounds to the nearest integer and clips to [0, 255].
inline std::vector<unsigned char> quantize(const ImageTensor& img) {
    std::vector<unsigned char> out(static_cast<std::size_t>(img.pixels.size()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<unsigned char>(std::clamp(std::lround(img.pixels.data()[i]), 0L, 255L));
    return out;
}

inline void write_pgm(const fs::path& path, const ImageTensor& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << img.pixels.cols() << ' ' << img.pixels.rows() << "\n255\n";
    const auto bytes = quantize(img);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

/// Reads any PNG; color images are converted to luma (libpng rgb_to_gray, ITU-R BT.709).
inline ImageTensor read_png(const fs::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file) throw IoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<unsigned char> data;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const auto rowbytes = png_get_rowbytes(png, info);
    data.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = data.data() + r * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    ImageTensor img;
    img.pixels = Matrix(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
    const std::size_t channels = rowbytes / width;
    for (png_uint_32 r = 0; r < height; ++r)
        for (png_uint_32 c = 0; c < width; ++c) img.pixels(r, c) = data[r * rowbytes + c * channels];
    return img;
}

inline bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".pgm" || ext == ".png";
}

inline ImageTensor read_image(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm") return read_pgm(path);
    if (ext == ".png") return read_png(path);
    throw IoError("unsupported image format: " + path.string());
}

/// Image files of a directory, sorted by name. With a list file, only the names it
/// lists (one per line, relative to dir, '#' comments allowed), in its order.
inline std::vector<fs::path> list_images(const fs::path& dir, const fs::path& list_file = {}) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    if (!list_file.empty()) {
        std::ifstream in(list_file);
        if (!in) throw IoError("cannot open list file " + list_file.string());
        std::string line;
        while (std::getline(in, line)) {
            line.erase(0, line.find_first_not_of(" \t\r"));
            line.erase(line.find_last_not_of(" \t\r") + 1);
            if (line.empty() || line[0] == '#') continue;
            const auto p = dir / line;
            if (!fs::exists(p)) throw IoError("listed image missing: " + p.string());
            out.push_back(p);
        }
        return out;
    }
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace pdnet::io
