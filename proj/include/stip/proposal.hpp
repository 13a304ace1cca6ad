#pragma once

#include <random>
#include <set>
#include <vector>

#include "stip/scene.hpp"
#include "stip/tensor.hpp"

namespace stip {

// A candidate human-object pair. `feature` is the fused representation:
// human appearance | object appearance | 8-d spatial | linguistic embedding.
struct CandidatePair {
  int human_idx = -1;
  int object_idx = -1;
  int object_class = 0;
  std::vector<double> feature;
  int gt_interactive = 0;                 // z
  double score = 0.0;                     // predicted interactiveness
  std::set<int> gt_interaction_classes;   // targets for the classifier
};

struct IPNConfig {
  int d_app = 16;
  int d_ling = 300;
  int hidden = 64;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  int feature_width() const { return 2 * d_app + 8 + d_ling; }
};

struct IPNParams {
  ad::Tensor ling_table;  // [num_object_classes x d_ling], learned from scratch
  ad::Mlp2Params head;    // feature_width -> hidden -> 1, sigmoid applied outside

  static IPNParams init(const IPNConfig& cfg, int num_object_classes, std::mt19937_64& rng);
  void collect(std::vector<std::pair<std::string, ad::Tensor*>>& out);
};

// One pair per (human, other instance); humans may appear as objects.
// Features are snapshotted from the current linguistic table.
std::vector<CandidatePair> build_pairs(const Scene& scene, const IPNParams& params,
                                       const IPNConfig& cfg);

// Fused feature tensor for the given pair indices; the linguistic slice is
// differentiable through the embedding table.
ad::Tensor pair_feature_matrix(ad::Tape* tape, const std::vector<CandidatePair>& pairs,
                               const std::vector<int>& indices, const IPNParams& params,
                               const IPNConfig& cfg);

// Scores all pairs through the interactiveness head; fills pair.score and
// returns the [m x 1] score tensor for the loss.
ad::Tensor interactiveness_forward(ad::Tape* tape, std::vector<CandidatePair>& pairs,
                                   const IPNParams& params, const IPNConfig& cfg);

// Sets gt_interactive and gt_interaction_classes. A pair is positive when
// both of its boxes exceed iou_thr against some ground-truth triplet.
void label_pairs(std::vector<CandidatePair>& pairs, const Scene& scene,
                 const std::vector<GtInteraction>& gt, double iou_thr = 0.5);

// Training-subset selection: all positives up to `budget`, then negatives.
// With `hard` the highest-scoring negatives are taken (ties to lower index);
// otherwise negatives are drawn uniformly with `rng`. Negatives are capped at
// max_neg_ratio x positives when any positive exists. Returns pair indices.
std::vector<int> mine_pairs(const std::vector<CandidatePair>& pairs, int budget,
                            double max_neg_ratio, bool hard, std::mt19937_64* rng);

// Interactiveness objective over a sampled subset: focal loss summed over the
// subset, normalized by max(#positives, 1).
ad::Tensor proposal_loss(ad::Tape* tape, const ad::Tensor& scores,
                         const std::vector<CandidatePair>& pairs,
                         const std::vector<int>& sampled, double gamma, double alpha);

// Top-K pair indices by descending score, ties broken by lower index.
// Returns all pairs when fewer than k exist.
std::vector<int> topk_select(const std::vector<CandidatePair>& pairs, int k);

}  // namespace stip
