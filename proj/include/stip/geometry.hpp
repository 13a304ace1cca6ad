#pragma once

#include <algorithm>

namespace stip {

// Axis-aligned box in normalized image coordinates, corner form.
struct BBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const {
    return x1 < x2 && y1 < y2 && x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0;
  }
  bool contains(double px, double py) const {
    return px >= x1 && px <= x2 && py >= y1 && py <= y2;
  }
  bool operator==(const BBox&) const = default;
};

// Overlap (set-intersection) area, 0 when disjoint.
double intersection_area(const BBox& a, const BBox& b);

// Intersection over set-union area.
double iou(const BBox& a, const BBox& b);

// Tightest box enclosing both inputs.
BBox union_box(const BBox& a, const BBox& b);

// The geometric quantities entering the 8-d spatial feature. `union_area`
// is the area of the enclosing (union) box, distinct from IoU's set union.
struct BoxStats {
  double area_h = 0.0;
  double area_o = 0.0;
  double intersection = 0.0;
  double union_area = 0.0;
  BBox union_bbox;
};
BoxStats box_stats(const BBox& h, const BBox& o);

}  // namespace stip
