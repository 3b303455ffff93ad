#pragma once

#include <cstdio>
#include <csetjmp>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include <jerror.h>
#include <jpeglib.h>

#include "biometry/errors.hpp"
#include "biometry/image.hpp"

namespace biometry {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace detail

/// Read an 8-bit grayscale PNG. Color or 16-bit inputs are converted.
inline ImageU8 read_png_gray(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG for reading: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<png_bytep> row_ptrs;
    ImageU8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_expand(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray(png, PNG_ERROR_ACTION_NONE, -1.0, -1.0);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    img = ImageU8(w, h);
    row_ptrs.resize(h);
    for (int y = 0; y < h; ++y)
        row_ptrs[y] = reinterpret_cast<png_bytep>(&img.at(0, y));
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// Write an 8-bit grayscale PNG.
inline void write_png_gray(const std::string& path, const ImageU8& img) {
    if (img.empty()) throw DomainError("write_png_gray: empty image");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open PNG for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height(); ++y)
        png_write_row(png, reinterpret_cast<png_const_bytep>(&img.at(0, y)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace detail {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

} // namespace detail

/// Read a JPEG as 8-bit grayscale (libjpeg does the color conversion).
inline ImageU8 read_jpeg_gray(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open JPEG for reading: " + path);

    jpeg_decompress_struct cinfo;
    detail::JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = detail::jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("failed to decode JPEG: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_GRAYSCALE;
    jpeg_start_decompress(&cinfo);

    ImageU8 img(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = reinterpret_cast<JSAMPROW>(&img.at(0, static_cast<int>(cinfo.output_scanline)));
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

/// Grayscale image reader dispatching on the file's magic bytes.
inline ImageU8 read_image_gray(const std::string& path) {
    unsigned char magic[2] = {0, 0};
    {
        detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
        if (!fp) throw IoError("cannot open image: " + path);
        if (std::fread(magic, 1, 2, fp.get()) != 2)
            throw IoError("cannot read image header: " + path);
    }
    if (magic[0] == 0x89 && magic[1] == 'P') return read_png_gray(path);
    if (magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_gray(path);
    throw IoError("unsupported image format (expected PNG or JPEG): " + path);
}

} // namespace biometry
