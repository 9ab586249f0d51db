#include "codo/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace codo {

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid())
    throw std::invalid_argument("iou: degenerate box");
  const double ix0 = std::max(a.x0, b.x0);
  const double iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1);
  const double iy1 = std::min(a.y1, b.y1);
  const double iw = std::max(0.0, ix1 - ix0);
  const double ih = std::max(0.0, iy1 - iy0);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

BoundingBox clamp_box(const BoundingBox& box, double width, double height) {
  if (width <= 0.0 || height <= 0.0)
    throw std::invalid_argument("clamp_box: non-positive image size");
  if (!box.valid()) throw std::invalid_argument("clamp_box: degenerate box");
  BoundingBox out;
  out.x0 = std::clamp(box.x0, 0.0, width);
  out.y0 = std::clamp(box.y0, 0.0, height);
  out.x1 = std::clamp(box.x1, 0.0, width);
  out.y1 = std::clamp(box.y1, 0.0, height);
  if (!out.valid())
    throw std::invalid_argument("clamp_box: box outside image");
  return out;
}

BoundingBox jitter_box(const BoundingBox& box, const JitterConfig& cfg,
                       double bound_w, double bound_h, Rng& rng) {
  const double w = box.width();
  const double h = box.height();
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const double dx = rng.uniform(-cfg.max_center_shift, cfg.max_center_shift) * w;
    const double dy = rng.uniform(-cfg.max_center_shift, cfg.max_center_shift) * h;
    const double s = rng.uniform(1.0 - cfg.max_scale_delta, 1.0 + cfg.max_scale_delta);
    const double ncx = box.cx() + dx;
    const double ncy = box.cy() + dy;
    BoundingBox cand{ncx - 0.5 * s * w, ncy - 0.5 * s * h,
                     ncx + 0.5 * s * w, ncy + 0.5 * s * h};
    cand.x0 = std::clamp(cand.x0, 0.0, bound_w);
    cand.y0 = std::clamp(cand.y0, 0.0, bound_h);
    cand.x1 = std::clamp(cand.x1, 0.0, bound_w);
    cand.y1 = std::clamp(cand.y1, 0.0, bound_h);
    if (!cand.valid()) continue;
    if (iou(cand, box) > cfg.iou_min) return cand;
  }
  return box;
}

}  // namespace codo
