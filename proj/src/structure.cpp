#include "stip/structure.hpp"

#include <cmath>
#include <stdexcept>

namespace stip {

std::array<int, 5> LayoutMap::label_counts() const {
  std::array<int, 5> counts{};
  for (int v : grid) ++counts[v];
  return counts;
}

std::array<double, 8> spatial_feature(const BBox& h, const BBox& o) {
  double dx = h.cx() - o.cx();
  double dy = h.cy() - o.cy();
  double dis = std::sqrt(dx * dx + dy * dy);
  double angle = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
  BoxStats s = box_stats(h, o);
  return {dx, dy, dis, angle, s.area_h, s.area_o, s.intersection, s.union_area};
}

DependencyLabel dependency_label(const PairIds& p1, const PairIds& p2) {
  if (p1.human == p1.object || p2.human == p2.object)
    throw std::invalid_argument("dependency_label: pair with identical human and object");
  if (p1.human == p2.human && p1.object == p2.object) return DependencyLabel::kSamePair;
  if (p1.human == p2.human) return DependencyLabel::kSameHuman;
  if (p1.object == p2.object) return DependencyLabel::kSameObject;
  if (p1.human == p2.object) return DependencyLabel::kSeriesOpposing;
  if (p1.object == p2.human) return DependencyLabel::kSeries;
  return DependencyLabel::kDisjunctive;
}

std::vector<std::vector<DependencyLabel>> dependency_matrix(
    const std::vector<PairIds>& proposals) {
  const std::size_t k = proposals.size();
  std::vector<std::vector<DependencyLabel>> m(k, std::vector<DependencyLabel>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      m[i][j] = dependency_label(proposals[i], proposals[j]);
  return m;
}

LayoutMap layout_map(const BBox& h, const BBox& o, int grid_h, int grid_w) {
  if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("layout_map: empty grid");
  LayoutMap m;
  m.h = grid_h;
  m.w = grid_w;
  m.grid.resize(grid_h * grid_w);
  BBox ub = union_box(h, o);
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      double py = (r + 0.5) / grid_h;
      double px = (c + 0.5) / grid_w;
      bool in_h = h.contains(px, py);
      bool in_o = o.contains(px, py);
      int label = kLayoutBackground;
      if (in_h && in_o) label = kLayoutIntersection;
      else if (in_h) label = kLayoutHuman;
      else if (in_o) label = kLayoutObject;
      else if (ub.contains(px, py)) label = kLayoutUnion;
      m.grid[r * grid_w + c] = label;
    }
  }
  return m;
}

ad::Tensor position_encoding(int grid_h, int grid_w, int d) {
  if (d % 4 != 0) throw std::invalid_argument("position_encoding: d must be divisible by 4");
  ad::Tensor pe = ad::Tensor::zeros({grid_h * grid_w, d});
  const int half = d / 2;       // channels per axis
  const int pairs = half / 2;   // sin/cos pairs per axis
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      int cell = r * grid_w + c;
      for (int k = 0; k < pairs; ++k) {
        double freq = std::pow(10000.0, -2.0 * k / half);
        pe.at(cell, 2 * k) = std::sin(r * freq);
        pe.at(cell, 2 * k + 1) = std::cos(r * freq);
        pe.at(cell, half + 2 * k) = std::sin(c * freq);
        pe.at(cell, half + 2 * k + 1) = std::cos(c * freq);
      }
    }
  }
  return pe;
}

}  // namespace stip
