#include "stip/proposal.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "stip/structure.hpp"

namespace stip {

IPNParams IPNParams::init(const IPNConfig& cfg, int num_object_classes,
                          std::mt19937_64& rng) {
  IPNParams p;
  p.ling_table = ad::Tensor::randn({num_object_classes, cfg.d_ling}, rng, 0.1, true);
  p.head = ad::Mlp2Params::init(cfg.feature_width(), cfg.hidden, 1, rng);
  return p;
}

void IPNParams::collect(std::vector<std::pair<std::string, ad::Tensor*>>& out) {
  out.emplace_back("ipn.ling_table", &ling_table);
  head.collect("ipn.head", out);
}

std::vector<CandidatePair> build_pairs(const Scene& scene, const IPNParams& params,
                                       const IPNConfig& cfg) {
  std::vector<CandidatePair> pairs;
  const int n = static_cast<int>(scene.instances.size());
  for (int h = 0; h < n; ++h) {
    if (!scene.instances[h].is_human) continue;
    for (int o = 0; o < n; ++o) {
      if (o == h) continue;
      const Instance& hi = scene.instances[h];
      const Instance& oi = scene.instances[o];
      if (static_cast<int>(hi.feature.size()) != cfg.d_app ||
          static_cast<int>(oi.feature.size()) != cfg.d_app)
        throw std::invalid_argument("build_pairs: instance feature width != d_app");
      CandidatePair p;
      p.human_idx = h;
      p.object_idx = o;
      p.object_class = oi.class_id;
      p.feature.reserve(cfg.feature_width());
      p.feature.insert(p.feature.end(), hi.feature.begin(), hi.feature.end());
      p.feature.insert(p.feature.end(), oi.feature.begin(), oi.feature.end());
      auto sp = spatial_feature(hi.box, oi.box);
      p.feature.insert(p.feature.end(), sp.begin(), sp.end());
      for (int d = 0; d < cfg.d_ling; ++d)
        p.feature.push_back(params.ling_table.at(oi.class_id, d));
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

ad::Tensor pair_feature_matrix(ad::Tape* tape, const std::vector<CandidatePair>& pairs,
                               const std::vector<int>& indices, const IPNParams& params,
                               const IPNConfig& cfg) {
  if (indices.empty()) throw std::invalid_argument("pair_feature_matrix: empty index list");
  const int m = static_cast<int>(indices.size());
  const int base_w = 2 * cfg.d_app + 8;
  ad::Tensor base = ad::Tensor::zeros({m, base_w});
  std::vector<int> obj_classes(m);
  for (int i = 0; i < m; ++i) {
    const CandidatePair& p = pairs[indices[i]];
    std::copy(p.feature.begin(), p.feature.begin() + base_w, base.data->begin() + i * base_w);
    obj_classes[i] = p.object_class;
  }
  ad::Tensor ling = ad::gather_rows(tape, params.ling_table, obj_classes);
  return ad::concat_cols(tape, base, ling);
}

ad::Tensor interactiveness_forward(ad::Tape* tape, std::vector<CandidatePair>& pairs,
                                   const IPNParams& params, const IPNConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("interactiveness_forward: no pairs");
  std::vector<int> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  ad::Tensor feat = pair_feature_matrix(tape, pairs, all, params, cfg);
  ad::Tensor scores = ad::sigmoid(tape, ad::mlp2(tape, feat, params.head));
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].score = (*scores.data)[i];
  return scores;
}

void label_pairs(std::vector<CandidatePair>& pairs, const Scene& scene,
                 const std::vector<GtInteraction>& gt, double iou_thr) {
  for (CandidatePair& p : pairs) {
    const BBox& hb = scene.instances[p.human_idx].box;
    const BBox& ob = scene.instances[p.object_idx].box;
    p.gt_interactive = 0;
    p.gt_interaction_classes.clear();
    for (const GtInteraction& g : gt) {
      if (iou(hb, g.human_box) > iou_thr && iou(ob, g.object_box) > iou_thr) {
        p.gt_interactive = 1;
        p.gt_interaction_classes.insert(g.interaction_classes.begin(),
                                        g.interaction_classes.end());
      }
    }
  }
}

std::vector<int> mine_pairs(const std::vector<CandidatePair>& pairs, int budget,
                            double max_neg_ratio, bool hard, std::mt19937_64* rng) {
  std::vector<int> positives, negatives;
  for (int i = 0; i < static_cast<int>(pairs.size()); ++i)
    (pairs[i].gt_interactive ? positives : negatives).push_back(i);
  if (static_cast<int>(positives.size()) > budget) positives.resize(budget);

  int neg_budget = budget - static_cast<int>(positives.size());
  if (!positives.empty()) {
    neg_budget = std::min(neg_budget,
                          static_cast<int>(max_neg_ratio * positives.size()));
  }
  neg_budget = std::max(neg_budget, 0);

  if (hard) {
    std::stable_sort(negatives.begin(), negatives.end(), [&](int a, int b) {
      if (pairs[a].score != pairs[b].score) return pairs[a].score > pairs[b].score;
      return a < b;
    });
  } else {
    if (!rng) throw std::invalid_argument("mine_pairs: random sampling needs an rng");
    std::shuffle(negatives.begin(), negatives.end(), *rng);
  }
  if (static_cast<int>(negatives.size()) > neg_budget) negatives.resize(neg_budget);

  std::vector<int> out = positives;
  out.insert(out.end(), negatives.begin(), negatives.end());
  return out;
}

ad::Tensor proposal_loss(ad::Tape* tape, const ad::Tensor& scores,
                         const std::vector<CandidatePair>& pairs,
                         const std::vector<int>& sampled, double gamma, double alpha) {
  if (sampled.empty()) throw std::invalid_argument("proposal_loss: empty sample");
  ad::Tensor picked = ad::gather_rows(tape, scores, sampled);
  ad::Tensor targets = ad::Tensor::zeros({static_cast<int>(sampled.size()), 1});
  int positives = 0;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    (*targets.data)[i] = pairs[sampled[i]].gt_interactive;
    positives += pairs[sampled[i]].gt_interactive;
  }
  ad::Tensor total = ad::focal_loss_sum(tape, picked, targets, gamma, alpha);
  return ad::scale(tape, total, 1.0 / std::max(positives, 1));
}

std::vector<int> topk_select(const std::vector<CandidatePair>& pairs, int k) {
  std::vector<int> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (pairs[a].score != pairs[b].score) return pairs[a].score > pairs[b].score;
    return a < b;
  });
  if (static_cast<int>(idx.size()) > k) idx.resize(k);
  return idx;
}

}  // namespace stip
