#pragma once

#include <array>
#include <vector>

#include "stip/geometry.hpp"
#include "stip/tensor.hpp"

namespace stip {

// Directional semantic dependency between two human-object pairs,
// decided by which detected instances they share.
enum class DependencyLabel : int {
  kDisjunctive = 0,
  kSameHuman = 1,
  kSameObject = 2,
  kSeriesOpposing = 3,  // human of the first pair is the object of the second
  kSeries = 4,          // object of the first pair is the human of the second
  kSamePair = 5,
};

struct PairIds {
  int human = -1;
  int object = -1;
};

// Layout labels for one proposal's grid partition.
enum LayoutLabel : int {
  kLayoutBackground = 0,
  kLayoutUnion = 1,
  kLayoutHuman = 2,
  kLayoutObject = 3,
  kLayoutIntersection = 4,
};

struct LayoutMap {
  int h = 0, w = 0;
  std::vector<int> grid;  // h*w labels in {0..4}, row-major

  int at(int row, int col) const { return grid[row * w + col]; }
  std::array<int, 5> label_counts() const;
};

// [dx, dy, dis, angle, A_h, A_o, I, U]; angle is full-quadrant atan2(dy, dx)
// with atan2(0, 0) taken as 0, and U is the enclosing-box area.
std::array<double, 8> spatial_feature(const BBox& h, const BBox& o);

// Dependency of p1 with respect to p2. Overlapping definitions are resolved
// most-specific-first: same-pair, then same-human/same-object, then
// series-opposing/series, then disjunctive.
DependencyLabel dependency_label(const PairIds& p1, const PairIds& p2);

// Entry (i, j) describes pair j relative to query pair i; the diagonal is
// same-pair.
std::vector<std::vector<DependencyLabel>> dependency_matrix(
    const std::vector<PairIds>& proposals);

// Cell-center rasterization of the five-way layout partition.
LayoutMap layout_map(const BBox& h, const BBox& o, int grid_h, int grid_w);

// Fixed 2-d sinusoidal encoding: first d/2 channels encode the row index,
// the rest the column index. d must be divisible by 4.
ad::Tensor position_encoding(int grid_h, int grid_w, int d);

}  // namespace stip
