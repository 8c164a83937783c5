#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mae {

// Thin libpng wrappers for the two on-disk raster formats: planar RGB images
// and palette-indexed masks (index = attribute id, 0 = none).

namespace png_detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path);
    return f;
}

}  // namespace png_detail

// data: planar 3*H*W (RGB planes)
inline void write_png_rgb(const std::string& path, const std::uint8_t* data, int h, int w) {
    auto f = png_detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            row[3 * x + 0] = data[0 * plane + static_cast<std::size_t>(y) * w + x];
            row[3 * x + 1] = data[1 * plane + static_cast<std::size_t>(y) * w + x];
            row[3 * x + 2] = data[2 * plane + static_cast<std::size_t>(y) * w + x];
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

inline std::vector<std::uint8_t> read_png_rgb(const std::string& path, int& h, int& w) {
    auto f = png_detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB ||
        png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected png format (want 8-bit RGB): " + path);
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(3) * h * w);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            out[0 * plane + static_cast<std::size_t>(y) * w + x] = row[3 * x + 0];
            out[1 * plane + static_cast<std::size_t>(y) * w + x] = row[3 * x + 1];
            out[2 * plane + static_cast<std::size_t>(y) * w + x] = row[3 * x + 2];
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// Indexed PNG, one byte per pixel; palette is a fixed ramp so viewers show
// distinct attribute colors.
inline void write_png_indexed(const std::string& path, const std::uint8_t* data, int h, int w,
                              int num_indices) {
    auto f = png_detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> palette(std::max(num_indices, 2));
    static const png_color ramp[] = {{0, 0, 0},     {230, 60, 60},  {60, 200, 60},
                                     {60, 90, 230}, {230, 200, 50}, {200, 60, 220},
                                     {70, 210, 210}, {255, 255, 255}};
    for (std::size_t i = 0; i < palette.size(); ++i)
        palette[i] = ramp[i % (sizeof(ramp) / sizeof(ramp[0]))];
    png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

inline std::vector<std::uint8_t> read_png_indexed(const std::string& path, int& h, int& w) {
    auto f = png_detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_PALETTE ||
        png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected png format (want 8-bit palette): " + path);
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        png_read_row(png, out.data() + static_cast<std::size_t>(y) * w, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace mae
