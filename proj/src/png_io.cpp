#include "amodal/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "amodal/errors.hpp"

namespace amodal {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png_rgb8(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb) {
    if (rgb.size() != static_cast<size_t>(3) * w * h)
        throw DataError("write_png_rgb8: buffer size mismatch");
    FilePtr f(fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int i = 0; i < h; ++i)
        png_write_row(png, const_cast<png_bytep>(&rgb[static_cast<size_t>(3) * w * i]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png_rgb8(const std::string& path, int* w, int* h, std::vector<uint8_t>* rgb) {
    FilePtr f(fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    // normalize everything to 8-bit RGB
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    *w = static_cast<int>(png_get_image_width(png, info));
    *h = static_cast<int>(png_get_image_height(png, info));
    rgb->assign(static_cast<size_t>(3) * *w * *h, 0);
    for (int i = 0; i < *h; ++i) png_read_row(png, &(*rgb)[static_cast<size_t>(3) * *w * i], nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

std::vector<uint8_t> image_to_bytes(const Image& img) {
    std::vector<uint8_t> out(img.rgb.size());
    for (size_t k = 0; k < img.rgb.size(); ++k) {
        double q = std::lround(img.rgb[k] * 255.0);
        out[k] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, q)));
    }
    return out;
}

Image bytes_to_image(int h, int w, const std::vector<uint8_t>& rgb) {
    Image img(h, w);
    for (size_t k = 0; k < img.rgb.size(); ++k) img.rgb[k] = rgb[k] / 255.0;
    return img;
}

}  // namespace amodal
