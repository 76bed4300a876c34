#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amodal/grid.hpp"

namespace amodal {

// Lossless 8-bit RGB PNG, row-major interleaved bytes.
void write_png_rgb8(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb);
void read_png_rgb8(const std::string& path, int* w, int* h, std::vector<uint8_t>* rgb);

std::vector<uint8_t> image_to_bytes(const Image& img);
Image bytes_to_image(int h, int w, const std::vector<uint8_t>& rgb);

}  // namespace amodal
