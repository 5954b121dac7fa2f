#ifndef DRDM_IMAGE_IO_HPP
#define DRDM_IMAGE_IO_HPP

#include <cstdio>
#include <memory>
#include <png.h>
#include <string>
#include <vector>

#include "drdm/tensor.hpp"

namespace drdm {

namespace png_detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace png_detail

// image: [3,H,W] interleaved on disk, planar in memory
inline void write_png_rgb(const std::string& path, const Tensor<std::uint8_t>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw invalid_input("write_png_rgb: need [3,H,W]");
    const int H = image.dim(1), W = image.dim(2);
    png_detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) row[x * 3 + c] = image.at(c, y, x);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void write_png_gray(const std::string& path, const Tensor<std::uint8_t>& image) {
    if (image.rank() != 2) throw invalid_input("write_png_gray: need [H,W]");
    const int H = image.dim(0), W = image.dim(1);
    png_detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(W));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) row[x] = image.at(y, x);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// reads 8-bit PNG; gray -> [H,W], anything with color -> [3,H,W]
inline Tensor<std::uint8_t> read_png(const std::string& path) {
    png_detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw io_error("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int channels = static_cast<int>(png_get_channels(png, info));
    std::vector<std::vector<png_byte>> rows(H, std::vector<png_byte>(
                                                   png_get_rowbytes(png, info)));
    std::vector<png_bytep> row_ptrs(H);
    for (int y = 0; y < H; ++y) row_ptrs[y] = rows[y].data();
    png_read_image(png, row_ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels == 1) {
        Tensor<std::uint8_t> out({H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.at(y, x) = rows[y][x];
        return out;
    }
    Tensor<std::uint8_t> out({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = rows[y][x * channels + c];
    return out;
}

}  // namespace drdm

#endif  // DRDM_IMAGE_IO_HPP
