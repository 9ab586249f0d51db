#include "codo/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "codo/common.hpp"

namespace codo::augment {
namespace {

constexpr int kPasteAttempts = 10;
constexpr int kViewRetries = 5;

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

double luma(const Image& img, std::size_t px) {
  return 0.299 * img.pixels[px * 3] + 0.587 * img.pixels[px * 3 + 1] +
         0.114 * img.pixels[px * 3 + 2];
}

void adjust_brightness(Image& img, double f) {
  for (auto& p : img.pixels) p = clamp_u8(p * f);
}

void adjust_contrast(Image& img, double f) {
  double mean = 0.0;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) mean += luma(img, i);
  mean /= static_cast<double>(n);
  for (auto& p : img.pixels) p = clamp_u8(mean + f * (p - mean));
}

void adjust_saturation(Image& img, double f) {
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = luma(img, i);
    for (int c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] = clamp_u8(l + f * (img.pixels[i * 3 + c] - l));
  }
}

// Hue rotation as a luma-preserving linear transform in RGB space.
void adjust_hue(Image& img, double turns) {
  const double angle = turns * 2.0 * 3.14159265358979323846;
  const double c = std::cos(angle), s = std::sin(angle);
  const double m[9] = {
      0.299 + 0.701 * c + 0.168 * s, 0.587 - 0.587 * c + 0.330 * s,
      0.114 - 0.114 * c - 0.497 * s, 0.299 - 0.299 * c - 0.328 * s,
      0.587 + 0.413 * c + 0.035 * s, 0.114 - 0.114 * c + 0.292 * s,
      0.299 - 0.300 * c + 1.250 * s, 0.587 - 0.588 * c - 1.050 * s,
      0.114 + 0.886 * c - 0.203 * s};
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[i * 3], g = img.pixels[i * 3 + 1],
                 b = img.pixels[i * 3 + 2];
    img.pixels[i * 3] = clamp_u8(m[0] * r + m[1] * g + m[2] * b);
    img.pixels[i * 3 + 1] = clamp_u8(m[3] * r + m[4] * g + m[5] * b);
    img.pixels[i * 3 + 2] = clamp_u8(m[6] * r + m[7] * g + m[8] * b);
  }
}

void to_grayscale(Image& img) {
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t l = clamp_u8(luma(img, i));
    img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = l;
  }
}

void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  const int w = img.width, h = img.height;
  std::vector<double> tmp(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 img.at(std::clamp(x + i, 0, w - 1), y, c);
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[(static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x) *
                         3 +
                     c];
        img.at(x, y, c) = clamp_u8(acc);
      }
}

View make_view(const Image& crop, const std::vector<BackgroundPool>& pools,
               const PasteConfig& paste_cfg, const JitterConfig& jitter_cfg,
               const PhotoConfig& photo_cfg, Rng& rng) {
  for (int attempt = 0;; ++attempt) {
    const auto& pool = pools[rng.uniform_int(pools.size())];
    const Image& bg = pool.images[rng.uniform_int(pool.images.size())];
    try {
      auto [img, box] = cpj(crop, bg, paste_cfg, jitter_cfg, rng);
      bool flipped = false;
      Image aug = photometric_augment(img, photo_cfg, rng, &flipped);
      if (flipped) box = mirror_box(box, aug.width);
      return {std::move(aug), box, pool.pool_id};
    } catch (const SkipSampleError&) {
      if (attempt + 1 >= kViewRetries) throw;
    }
  }
}

}  // namespace

void PasteConfig::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0))
    throw std::invalid_argument("scale_range must lie within (0, 1]");
  if (!(aspect_min > 0.0 && aspect_min <= aspect_max))
    throw std::invalid_argument("aspect_jitter_range must be positive");
}

std::pair<Image, BoundingBox> cpj(const Image& proposal_crop, const Image& background,
                                  const PasteConfig& paste_cfg,
                                  const JitterConfig& jitter_cfg, Rng& rng) {
  paste_cfg.validate();
  if (proposal_crop.empty() || background.empty())
    throw std::invalid_argument("cpj: empty crop or background");

  const double short_side = background.short_side();
  const double crop_aspect =
      static_cast<double>(proposal_crop.width) / proposal_crop.height;
  int w_px = 0, h_px = 0;
  bool placed = false;
  for (int attempt = 0; attempt < kPasteAttempts; ++attempt) {
    const double scale = rng.uniform(paste_cfg.scale_min, paste_cfg.scale_max);
    const double aspect =
        crop_aspect * rng.uniform(paste_cfg.aspect_min, paste_cfg.aspect_max);
    double w, h;
    if (aspect >= 1.0) {
      h = scale * short_side;
      w = h * aspect;
    } else {
      w = scale * short_side;
      h = w / aspect;
    }
    w_px = std::max(1, static_cast<int>(std::lround(w)));
    h_px = std::max(1, static_cast<int>(std::lround(h)));
    if (w_px <= background.width && h_px <= background.height) {
      placed = true;
      break;
    }
  }
  if (!placed)
    throw SkipSampleError("background too small to host the paste");

  const int x0 = static_cast<int>(
      rng.uniform_int(static_cast<std::uint64_t>(background.width - w_px) + 1));
  const int y0 = static_cast<int>(
      rng.uniform_int(static_cast<std::uint64_t>(background.height - h_px) + 1));

  Image out = background;
  paste(out, resize_bilinear(proposal_crop, w_px, h_px), x0, y0);
  const BoundingBox rect{static_cast<double>(x0), static_cast<double>(y0),
                         static_cast<double>(x0 + w_px),
                         static_cast<double>(y0 + h_px)};
  const BoundingBox jittered =
      jitter_box(rect, jitter_cfg, background.width, background.height, rng);
  return {std::move(out), jittered};
}

Image photometric_augment(const Image& image, const PhotoConfig& cfg, Rng& rng,
                          bool* flipped) {
  Image out = image;
  if (rng.uniform() < cfg.p_color_jitter) {
    adjust_brightness(out, rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness));
    adjust_contrast(out, rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast));
    adjust_saturation(out, rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation));
    adjust_hue(out, rng.uniform(-cfg.hue, cfg.hue));
  }
  if (rng.uniform() < cfg.p_grayscale) to_grayscale(out);
  if (rng.uniform() < cfg.p_blur) gaussian_blur(out, rng.uniform(0.1, 2.0));
  bool flip = rng.uniform() < cfg.p_hflip;
  if (flip) out = hflip(out);
  if (flipped) *flipped = flip;
  return out;
}

BoundingBox mirror_box(const BoundingBox& box, int image_width) {
  return {image_width - box.x1, box.y0, image_width - box.x0, box.y1};
}

ViewSet build_viewset(const proposals::Proposal& proposal, const Image& source_image,
                      const std::vector<BackgroundPool>& pools, int n_keys,
                      const PasteConfig& paste_cfg, const JitterConfig& jitter_cfg,
                      const PhotoConfig& photo_cfg, Rng& rng) {
  return build_viewset_split(proposal, source_image, pools, pools, n_keys, paste_cfg,
                             jitter_cfg, photo_cfg, rng);
}

ViewSet build_viewset_split(const proposals::Proposal& proposal,
                            const Image& source_image,
                            const std::vector<BackgroundPool>& query_pools,
                            const std::vector<BackgroundPool>& key_pools, int n_keys,
                            const PasteConfig& paste_cfg,
                            const JitterConfig& jitter_cfg,
                            const PhotoConfig& photo_cfg, Rng& rng) {
  if (n_keys != 1 && n_keys != 3)
    throw std::invalid_argument("n_keys must be 1 or 3");
  if (query_pools.empty() || key_pools.empty())
    throw std::invalid_argument("at least one background pool is required");
  for (const auto* pools : {&query_pools, &key_pools})
    for (const auto& pool : *pools)
      if (pool.images.empty())
        throw std::invalid_argument("background pool '" + pool.pool_id + "' is empty");

  const Image fg = crop(source_image, proposal.box);
  ViewSet vs;
  vs.foreground_id = proposal.source_image_id;
  vs.crop_checksum = fg.checksum();
  vs.query = make_view(fg, query_pools, paste_cfg, jitter_cfg, photo_cfg, rng);
  vs.keys.reserve(static_cast<std::size_t>(n_keys));
  for (int i = 0; i < n_keys; ++i)
    vs.keys.push_back(make_view(fg, key_pools, paste_cfg, jitter_cfg, photo_cfg, rng));
  return vs;
}

}  // namespace codo::augment
