#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "tintin/image.hpp"

// 8-bit PNG I/O (RGB for images, grayscale for edge maps). Writes go through a
// temp file and an atomic rename. Fixed libpng settings keep outputs
// byte-identical across reruns on the same platform.

namespace tintin {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline uint8_t to_byte(double v) {
    double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

inline void write_png_impl(const std::string& path, const std::vector<uint8_t>& rows, int h, int w,
                           int color_type, int channels) {
    std::string tmp = path + ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw std::runtime_error("png: cannot open " + tmp);
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png_create_info_struct(png);
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("png: write failed for " + tmp);
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_set_compression_level(png, 6);
        png_write_info(png, info);
        std::vector<png_bytep> ptrs(h);
        for (int y = 0; y < h; ++y)
            ptrs[y] = const_cast<png_bytep>(&rows[static_cast<size_t>(y) * w * channels]);
        png_write_image(png, ptrs.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("png: rename failed for " + path);
}

}  // namespace detail

inline void write_png(const std::string& path, const RgbImage& img) {
    std::vector<uint8_t> rows(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) rows[i] = detail::to_byte(img.pixels[i]);
    detail::write_png_impl(path, rows, img.height, img.width, PNG_COLOR_TYPE_RGB, 3);
}

inline void write_png(const std::string& path, const EdgeMap& e) {
    std::vector<uint8_t> rows(e.values.size());
    for (size_t i = 0; i < e.values.size(); ++i) rows[i] = detail::to_byte(e.values[i]);
    detail::write_png_impl(path, rows, e.height, e.width, PNG_COLOR_TYPE_GRAY, 1);
}

inline RgbImage read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: read failed for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    int w = static_cast<int>(png_get_image_width(png, info));
    int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<uint8_t> rows(static_cast<size_t>(h) * w * 3);
    std::vector<png_bytep> ptrs(h);
    for (int y = 0; y < h; ++y) ptrs[y] = &rows[static_cast<size_t>(y) * w * 3];
    png_read_image(png, ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);
    RgbImage img(h, w);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = rows[i] / 255.0;
    return img;
}

}  // namespace tintin
