#pragma once

namespace wsod {

// Axis-aligned rectangle in continuous image coordinates. Degenerate boxes
// (zero width or height, non-finite corners) are rejected at construction so
// downstream area ratios never divide by zero.
struct BoundingBox {
  double x_min;
  double y_min;
  double x_max;
  double y_max;

  BoundingBox(double x0, double y0, double x1, double y1);

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  bool operator==(const BoundingBox&) const = default;
};

double area(const BoundingBox& b);

double intersection_area(const BoundingBox& a, const BoundingBox& b);

// Intersection over union in [0, 1]. Used both as the NMS overlap test and as
// the window affinity K(b_i, b_j) in subset optimization. Areas are geometric;
// there is no pixel-inclusive +1 convention.
double iou(const BoundingBox& a, const BoundingBox& b);

// True when inner lies entirely within outer (boundaries may touch).
bool contains(const BoundingBox& outer, const BoundingBox& inner);

}  // namespace wsod
