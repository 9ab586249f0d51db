#include "codo/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace codo {

Image crop(const Image& src, const BoundingBox& box) {
  if (!box.valid()) throw std::invalid_argument("crop: degenerate box");
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y0)));
  const int x1 = std::min(src.width, static_cast<int>(std::ceil(box.x1)));
  const int y1 = std::min(src.height, static_cast<int>(std::ceil(box.y1)));
  if (x1 <= x0 || y1 <= y0)
    throw std::invalid_argument("crop: box outside image");
  Image out(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y) {
    const auto* s = &src.pixels[(static_cast<std::size_t>(y) * src.width + x0) * 3];
    auto* d = &out.pixels[static_cast<std::size_t>(y - y0) * out.width * 3];
    std::copy(s, s + static_cast<std::size_t>(out.width) * 3, d);
  }
  return out;
}

Image resize_bilinear(const Image& src, int new_w, int new_h) {
  if (src.empty()) throw std::invalid_argument("resize: empty source");
  if (new_w < 1 || new_h < 1)
    throw std::invalid_argument("resize: non-positive target");
  Image out(new_w, new_h);
  const double sx = static_cast<double>(src.width) / new_w;
  const double sy = static_cast<double>(src.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    // pixel-center mapping
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < new_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.at(x0, y0, c);
        const double v10 = src.at(x1, y0, c);
        const double v01 = src.at(x0, y1, c);
        const double v11 = src.at(x1, y1, c);
        const double v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v10) +
                         wy * ((1.0 - wx) * v01 + wx * v11);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

void paste(Image& dst, const Image& patch, int x, int y) {
  if (x < 0 || y < 0 || x + patch.width > dst.width || y + patch.height > dst.height)
    throw std::invalid_argument("paste: patch does not fit");
  for (int py = 0; py < patch.height; ++py) {
    const auto* s = &patch.pixels[static_cast<std::size_t>(py) * patch.width * 3];
    auto* d = &dst.pixels[(static_cast<std::size_t>(y + py) * dst.width + x) * 3];
    std::copy(s, s + static_cast<std::size_t>(patch.width) * 3, d);
  }
}

Image hflip(const Image& src) {
  Image out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = src.at(src.width - 1 - x, y, c);
  return out;
}

void write_ppm(const Image& img, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataFormatError("cannot open for write: " + path);
  std::fprintf(f, "P6\n%d %d\n255\n", img.width, img.height);
  const std::size_t n = img.pixels.size();
  if (std::fwrite(img.pixels.data(), 1, n, f) != n) {
    std::fclose(f);
    throw DataFormatError("short write: " + path);
  }
  std::fclose(f);
}

Image read_ppm(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataFormatError("cannot open: " + path);
  char magic[3] = {0, 0, 0};
  int w = 0, h = 0, maxval = 0;
  if (std::fscanf(f, "%2s %d %d %d", magic, &w, &h, &maxval) != 4 ||
      magic[0] != 'P' || magic[1] != '6' || w <= 0 || h <= 0 || maxval != 255) {
    std::fclose(f);
    throw DataFormatError("not a P6 ppm: " + path);
  }
  std::fgetc(f);  // single whitespace after header
  Image img(w, h);
  const std::size_t n = img.pixels.size();
  if (std::fread(img.pixels.data(), 1, n, f) != n) {
    std::fclose(f);
    throw DataFormatError("truncated ppm: " + path);
  }
  std::fclose(f);
  return img;
}

}  // namespace codo
