#pragma once

#include "codo/rng.hpp"

namespace codo {

// Axis-aligned box in continuous pixel coordinates, half-open
// [x0,x1) x [y0,y1). Width and height must be strictly positive.
struct BoundingBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  double aspect() const { return width() / height(); }
  bool valid() const { return x1 > x0 && y1 > y0; }

  bool operator==(const BoundingBox& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

struct JitterConfig {
  double iou_min = 0.6;
  double max_center_shift = 0.2;  // fraction of box width/height per axis
  double max_scale_delta = 0.2;   // scale drawn from [1-d, 1+d]
  int max_attempts = 20;
};

// Intersection over union. Throws std::invalid_argument on degenerate boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

// Clamp a box into [0,width] x [0,height]. Throws std::invalid_argument if
// the box lies entirely outside the image or clamping leaves zero area.
BoundingBox clamp_box(const BoundingBox& box, double width, double height);

// Rejection-sampled perturbation: shift the center by uniform
// +-max_center_shift*(w,h), scale both sides by one uniform factor in
// [1-d, 1+d], clamp into bounds, accept when iou(candidate, box) > iou_min.
// Returns the input box unchanged once max_attempts candidates failed.
BoundingBox jitter_box(const BoundingBox& box, const JitterConfig& cfg,
                       double bound_w, double bound_h, Rng& rng);

}  // namespace codo
