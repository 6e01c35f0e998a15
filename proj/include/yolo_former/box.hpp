#pragma once

#include <algorithm>

namespace yf {

/// Axis-aligned box in pixel coordinates (corners, not centers).
struct Box {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (xmin + xmax); }
  double cy() const { return 0.5 * (ymin + ymax); }

  bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double h = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

/// Intersection over union in [0, 1]; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct LabeledBox {
  Box box;
  int class_id = 0;

  bool operator==(const LabeledBox&) const = default;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0;  // objectness * class probability
};

}  // namespace yf
