#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codo/common.hpp"
#include "codo/geometry.hpp"

namespace codo {

// Interleaved 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // size = width * height * 3

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h),
        pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  int short_side() const { return width < height ? width : height; }

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a(&width, sizeof width);
    h = fnv1a(&height, sizeof height, h);
    return fnv1a(pixels.data(), pixels.size(), h);
  }
};

// Integer pixel crop; box is truncated to the containing pixel rectangle.
Image crop(const Image& src, const BoundingBox& box);

// Bilinear resize to the exact target size (both >= 1).
Image resize_bilinear(const Image& src, int new_w, int new_h);

// Copy patch onto dst with its top-left corner at (x, y); the patch must
// fit entirely inside dst.
void paste(Image& dst, const Image& patch, int x, int y);

Image hflip(const Image& src);

// Binary PPM (P6) round trip. Errors map to DataFormatError.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

}  // namespace codo
