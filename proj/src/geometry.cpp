#include "stip/geometry.hpp"

namespace stip {

double intersection_area(const BBox& a, const BBox& b) {
  double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BBox& a, const BBox& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

BBox union_box(const BBox& a, const BBox& b) {
  return BBox{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
              std::max(a.y2, b.y2)};
}

BoxStats box_stats(const BBox& h, const BBox& o) {
  BoxStats s;
  s.area_h = h.area();
  s.area_o = o.area();
  s.intersection = intersection_area(h, o);
  s.union_bbox = union_box(h, o);
  s.union_area = s.union_bbox.area();
  return s;
}

}  // namespace stip
