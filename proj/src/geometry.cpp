#include "wsod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wsod {

BoundingBox::BoundingBox(double x0, double y0, double x1, double y1)
    : x_min(x0), y_min(y0), x_max(x1), y_max(y1) {
  if (!std::isfinite(x0) || !std::isfinite(y0) || !std::isfinite(x1) ||
      !std::isfinite(y1)) {
    throw std::invalid_argument("bounding box has non-finite coordinates");
  }
  if (!(x0 < x1) || !(y0 < y1)) {
    throw std::invalid_argument(
        "bounding box must have strictly positive extent: [" +
        std::to_string(x0) + ", " + std::to_string(y0) + ", " +
        std::to_string(x1) + ", " + std::to_string(y1) + "]");
  }
}

double area(const BoundingBox& b) { return b.width() * b.height(); }

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w =
      std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h =
      std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = area(a) + area(b) - inter;
  return inter / uni;
}

bool contains(const BoundingBox& outer, const BoundingBox& inner) {
  return inner.x_min >= outer.x_min && inner.y_min >= outer.y_min &&
         inner.x_max <= outer.x_max && inner.y_max <= outer.y_max;
}

}  // namespace wsod
