#include "stip/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace stip {

namespace {

struct SceneGraphInputs {
  std::vector<std::vector<DependencyLabel>> dep;
  std::vector<LayoutMap> layouts;
  std::vector<const LayoutMap*> layout_ptrs;
};

SceneGraphInputs build_graph_inputs(const Scene& scene,
                                    const std::vector<CandidatePair>& pairs,
                                    const std::vector<int>& proposals) {
  SceneGraphInputs g;
  std::vector<PairIds> ids;
  ids.reserve(proposals.size());
  for (int idx : proposals)
    ids.push_back({pairs[idx].human_idx, pairs[idx].object_idx});
  g.dep = dependency_matrix(ids);
  g.layouts.reserve(proposals.size());
  for (int idx : proposals) {
    const BBox& hb = scene.instances[pairs[idx].human_idx].box;
    const BBox& ob = scene.instances[pairs[idx].object_idx].box;
    g.layouts.push_back(layout_map(hb, ob, scene.grid_h, scene.grid_w));
  }
  for (const LayoutMap& m : g.layouts) g.layout_ptrs.push_back(&m);
  return g;
}

ad::Tensor class_targets(const std::vector<CandidatePair>& pairs,
                         const std::vector<int>& proposals, int num_classes) {
  ad::Tensor t = ad::Tensor::zeros({static_cast<int>(proposals.size()), num_classes});
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (int c : pairs[proposals[i]].gt_interaction_classes)
      if (c >= 0 && c < num_classes) t.at(static_cast<int>(i), c) = 1.0;
  }
  return t;
}

// Area under the all-point interpolated precision-recall curve.
double ap_from_matches(const std::vector<int>& is_tp, int num_gt,
                       std::vector<double>* precision_out,
                       std::vector<double>* recall_out) {
  if (num_gt == 0) return 0.0;
  const int n = static_cast<int>(is_tp.size());
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (int i = 0; i < n; ++i) {
    tp += is_tp[i];
    prec[i] = static_cast<double>(tp) / (i + 1);
    rec[i] = static_cast<double>(tp) / num_gt;
  }
  if (precision_out) *precision_out = prec;
  if (recall_out) *recall_out = rec;
  double ap = 0.0, max_prec = 0.0, next_rec = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    max_prec = std::max(max_prec, prec[i]);
    double prev_rec = i > 0 ? rec[i - 1] : 0.0;
    ap += (rec[i] - prev_rec) * max_prec;
    (void)next_rec;
  }
  return ap;
}

struct SceneLosses {
  double l_proposal = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  bool skipped = true;
};

SceneLosses train_step(ModelBundle& b, const Scene& scene, const TrainConfig& cfg,
                       std::mt19937_64& mine_rng, ad::Tape& tape) {
  SceneLosses out;
  std::vector<CandidatePair> pairs = build_pairs(scene, b.ipn, b.ipn_cfg);
  if (pairs.empty()) return out;

  ad::Tensor scores = interactiveness_forward(&tape, pairs, b.ipn, b.ipn_cfg);
  label_pairs(pairs, scene, scene.gt);
  std::vector<int> sampled = mine_pairs(pairs, cfg.mine_budget, cfg.max_neg_ratio,
                                        cfg.hard_mining, &mine_rng);
  ad::Tensor lp = proposal_loss(&tape, scores, pairs, sampled, b.ipn_cfg.focal_gamma,
                                b.ipn_cfg.focal_alpha);

  std::vector<int> proposals = topk_select(pairs, cfg.topk);
  ad::Tensor feats = pair_feature_matrix(&tape, pairs, proposals, b.ipn, b.ipn_cfg);
  SceneGraphInputs g;
  if (b.flags.use_transformer) g = build_graph_inputs(scene, pairs, proposals);
  ModelOutput mo = model_forward(&tape, feats, g.dep, scene.feature_grid, scene.grid_h,
                                 scene.grid_w, g.layout_ptrs, b.model, b.flags, b.model_cfg);
  ad::Tensor targets = class_targets(pairs, proposals, b.model_cfg.num_classes);
  ad::Tensor lc = classification_loss(&tape, mo.probs, targets, b.model_cfg.focal_gamma,
                                      b.model_cfg.focal_alpha);
  ad::Tensor total = total_loss(&tape, lp, lc, cfg.cls_weight);

  out.l_proposal = lp.scalar();
  out.l_cls = lc.scalar();
  out.l_total = total.scalar();
  out.skipped = false;
  if (!std::isfinite(out.l_total)) {
    std::ostringstream ss;
    ss << "non-finite loss at scene " << scene.scene_id << ": L_proposal=" << out.l_proposal
       << " L_cls=" << out.l_cls << " pairs=" << pairs.size()
       << " proposals=" << proposals.size();
    throw std::runtime_error(ss.str());
  }
  tape.backward(total);
  return out;
}

}  // namespace

ModelBundle ModelBundle::init(const IPNConfig& ipn_cfg, const ModelConfig& model_cfg,
                              const VariantFlags& flags, int num_object_classes,
                              uint64_t seed) {
  flags.validate();
  ModelBundle b;
  b.ipn_cfg = ipn_cfg;
  b.model_cfg = model_cfg;
  b.model_cfg.pair_feature_width = ipn_cfg.feature_width();
  b.flags = flags;
  std::mt19937_64 rng(seed);
  b.ipn = IPNParams::init(ipn_cfg, num_object_classes, rng);
  b.model = ModelParams::init(b.model_cfg, rng);
  return b;
}

std::vector<std::pair<std::string, ad::Tensor*>> ModelBundle::named_params() {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  ipn.collect(out);
  model.collect(out);
  return out;
}

void ModelBundle::save(const std::string& prefix) {
  ad::save_checkpoint(prefix, named_params());
}

void ModelBundle::load(const std::string& prefix) {
  ad::load_checkpoint(prefix, named_params());
}

std::vector<MetricsRow> train(ModelBundle& bundle, const std::vector<Scene>& train_scenes,
                              const std::vector<Scene>& val_scenes, const TrainConfig& cfg) {
  if (train_scenes.empty()) throw std::invalid_argument("train: empty dataset");
  auto named = bundle.named_params();
  std::vector<ad::Tensor*> params;
  for (auto& [name, t] : named) params.push_back(t);
  ad::AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ad::AdamW opt(params, ocfg);

  std::mt19937_64 mine_rng(cfg.seed * 7919ULL + 13ULL);
  std::vector<MetricsRow> log;
  double best_val_map = -1.0;
  std::vector<std::vector<double>> best_snapshot;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum_lp = 0.0, sum_lc = 0.0, sum_lt = 0.0;
    int counted = 0, in_batch = 0;
    opt.zero_grad();
    for (const Scene& scene : train_scenes) {
      ad::Tape tape;
      SceneLosses sl = train_step(bundle, scene, cfg, mine_rng, tape);
      if (sl.skipped) continue;
      sum_lp += sl.l_proposal;
      sum_lc += sl.l_cls;
      sum_lt += sl.l_total;
      ++counted;
      if (++in_batch == cfg.batch) {
        opt.step();
        opt.zero_grad();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      opt.step();
      opt.zero_grad();
    }
    MetricsRow row;
    row.epoch = epoch;
    row.split = "train";
    row.l_proposal = counted ? sum_lp / counted : 0.0;
    row.l_cls = counted ? sum_lc / counted : 0.0;
    row.l_total = counted ? sum_lt / counted : 0.0;
    log.push_back(row);

    if (!val_scenes.empty()) {
      auto preds = predict_all(val_scenes, bundle, cfg.topk, cfg.scoring, cfg.score_floor);
      EvalReport rep = evaluate(preds, val_scenes, bundle.model_cfg.num_classes);
      MetricsRow vrow;
      vrow.epoch = epoch;
      vrow.split = "val";
      vrow.map = rep.map;
      log.push_back(vrow);
      if (rep.map > best_val_map) {
        best_val_map = rep.map;
        best_snapshot.clear();
        for (ad::Tensor* t : params) best_snapshot.push_back(*t->data);
        if (!cfg.checkpoint_prefix.empty()) bundle.save(cfg.checkpoint_prefix);
      }
    }
  }
  // Leave the best-by-validation parameters in place when validation ran.
  if (!best_snapshot.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i]->data = best_snapshot[i];
  } else if (!cfg.checkpoint_prefix.empty()) {
    bundle.save(cfg.checkpoint_prefix);
  }
  if (!cfg.metrics_csv.empty()) write_metrics_csv(cfg.metrics_csv, log, true);
  return log;
}

std::vector<Prediction> predict(const Scene& scene, ModelBundle& bundle, int topk,
                                ScoreStrategy scoring, double score_floor) {
  std::vector<CandidatePair> pairs = build_pairs(scene, bundle.ipn, bundle.ipn_cfg);
  std::vector<Prediction> out;
  if (pairs.empty()) return out;
  interactiveness_forward(nullptr, pairs, bundle.ipn, bundle.ipn_cfg);
  std::vector<int> proposals = topk_select(pairs, topk);
  ad::Tensor feats = pair_feature_matrix(nullptr, pairs, proposals, bundle.ipn, bundle.ipn_cfg);
  SceneGraphInputs g;
  if (bundle.flags.use_transformer) g = build_graph_inputs(scene, pairs, proposals);
  ModelOutput mo = model_forward(nullptr, feats, g.dep, scene.feature_grid, scene.grid_h,
                                 scene.grid_w, g.layout_ptrs, bundle.model, bundle.flags,
                                 bundle.model_cfg);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const CandidatePair& p = pairs[proposals[i]];
    const Instance& hi = scene.instances[p.human_idx];
    const Instance& oi = scene.instances[p.object_idx];
    for (int c = 0; c < bundle.model_cfg.num_classes; ++c) {
      double y = mo.probs.at(static_cast<int>(i), c);
      double s = y;
      switch (scoring) {
        case ScoreStrategy::kProduct: s = p.score * y; break;
        case ScoreStrategy::kClassOnly: s = y; break;
        case ScoreStrategy::kProductDet: s = p.score * y * hi.det_score * oi.det_score; break;
      }
      if (s < score_floor) continue;
      out.push_back({scene.scene_id, hi.box, oi.box, p.object_class, c, s});
    }
  }
  return out;
}

std::vector<Prediction> predict_all(const std::vector<Scene>& scenes, ModelBundle& bundle,
                                    int topk, ScoreStrategy scoring, double score_floor,
                                    int threads) {
  std::vector<std::vector<Prediction>> per_scene(scenes.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i)
      per_scene[i] = predict(scenes[i], bundle, topk, scoring, score_floor);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= scenes.size()) return;
        per_scene[i] = predict(scenes[i], bundle, topk, scoring, score_floor);
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<Prediction> out;
  for (auto& v : per_scene) out.insert(out.end(), v.begin(), v.end());
  return out;
}

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::vector<Scene>& scenes, int num_classes, double iou_thr) {
  EvalReport rep;
  rep.per_class_ap.assign(num_classes, -1.0);
  rep.gt_count.assign(num_classes, 0);
  rep.precision.resize(num_classes);
  rep.recall.resize(num_classes);

  struct GtEntry {
    int scene_id;
    const GtInteraction* gt;
    bool matched;
  };

  double ap_sum = 0.0;
  int classes_with_gt = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<GtEntry> gts;
    for (const Scene& s : scenes)
      for (const GtInteraction& g : s.gt)
        if (g.interaction_classes.count(c)) gts.push_back({s.scene_id, &g, false});
    rep.gt_count[c] = static_cast<int>(gts.size());

    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(predictions.size()); ++i)
      if (predictions[i].interaction_class == c) order.push_back(i);
    // Ties resolve to earlier emission (scene order, then per-scene order).
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return predictions[a].score > predictions[b].score;
    });

    std::vector<int> is_tp;
    is_tp.reserve(order.size());
    for (int pi : order) {
      const Prediction& p = predictions[pi];
      int best = -1;
      double best_iou = iou_thr;
      for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
        if (gts[gi].matched || gts[gi].scene_id != p.scene_id) continue;
        if (gts[gi].gt->object_class != p.object_class) continue;
        double ih = iou(p.human_box, gts[gi].gt->human_box);
        double io = iou(p.object_box, gts[gi].gt->object_box);
        double m = std::min(ih, io);
        if (ih > iou_thr && io > iou_thr && m > best_iou) {
          best_iou = m;
          best = gi;
        }
      }
      if (best >= 0) {
        gts[best].matched = true;
        is_tp.push_back(1);
      } else {
        is_tp.push_back(0);
      }
    }
    if (!gts.empty()) {
      double ap = ap_from_matches(is_tp, static_cast<int>(gts.size()), &rep.precision[c],
                                  &rep.recall[c]);
      rep.per_class_ap[c] = ap;
      ap_sum += ap;
      ++classes_with_gt;
    }
  }
  rep.map = classes_with_gt ? ap_sum / classes_with_gt : 0.0;
  return rep;
}

double interactiveness_ap(ModelBundle& bundle, const std::vector<Scene>& scenes) {
  struct Item {
    double score;
    int label;
  };
  std::vector<Item> items;
  for (const Scene& scene : scenes) {
    std::vector<CandidatePair> pairs = build_pairs(scene, bundle.ipn, bundle.ipn_cfg);
    if (pairs.empty()) continue;
    interactiveness_forward(nullptr, pairs, bundle.ipn, bundle.ipn_cfg);
    label_pairs(pairs, scene, scene.gt);
    for (const CandidatePair& p : pairs) items.push_back({p.score, p.gt_interactive});
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.score > b.score; });
  int num_pos = 0;
  for (const Item& it : items) num_pos += it.label;
  std::vector<int> is_tp;
  is_tp.reserve(items.size());
  for (const Item& it : items) is_tp.push_back(it.label);
  return ap_from_matches(is_tp, num_pos, nullptr, nullptr);
}

namespace {

double run_single(const std::vector<Scene>& train_scenes, const std::vector<Scene>& val_scenes,
                  const std::vector<Scene>& test_scenes, const AblationConfig& cfg,
                  const VariantFlags& flags, bool hard_mining, uint64_t seed) {
  ModelBundle b =
      ModelBundle::init(cfg.ipn_cfg, cfg.model_cfg, flags, cfg.num_object_classes, seed);
  TrainConfig tc = cfg.train_cfg;
  tc.hard_mining = hard_mining;
  tc.seed = seed;
  tc.checkpoint_prefix.clear();
  tc.metrics_csv.clear();
  train(b, train_scenes, val_scenes, tc);
  auto preds = predict_all(test_scenes, b, tc.topk, tc.scoring, tc.score_floor);
  return evaluate(preds, test_scenes, b.model_cfg.num_classes).map;
}

void run_jobs(std::vector<std::function<void()>> jobs, int threads) {
  if (threads <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      jobs[i]();
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<Scene>& train_scenes,
                                      const std::vector<Scene>& val_scenes,
                                      const std::vector<Scene>& test_scenes,
                                      const AblationConfig& cfg) {
  std::vector<AblationRow> rows = {
      {"Base", {false, false, false}, false, {}, 0.0},
      {"+HM", {false, false, false}, true, {}, 0.0},
      {"+HM+TR", {true, false, false}, true, {}, 0.0},
      {"+HM+TR_SS", {true, true, false}, true, {}, 0.0},
      {"+HM+TR_SC", {true, false, true}, true, {}, 0.0},
      {"STIP", {true, true, true}, true, {}, 0.0},
  };
  for (AblationRow& r : rows) r.map_per_seed.assign(cfg.seeds.size(), 0.0);

  std::vector<std::function<void()>> jobs;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      jobs.push_back([&, ri, si]() {
        rows[ri].map_per_seed[si] =
            run_single(train_scenes, val_scenes, test_scenes, cfg, rows[ri].flags,
                       rows[ri].hard_mining, cfg.seeds[si]);
      });
    }
  }
  run_jobs(std::move(jobs), cfg.threads);
  for (AblationRow& r : rows) {
    r.mean_map = std::accumulate(r.map_per_seed.begin(), r.map_per_seed.end(), 0.0) /
                 r.map_per_seed.size();
  }
  return rows;
}

static std::vector<std::pair<int, double>> sweep_impl(
    const std::vector<Scene>& train_scenes, const std::vector<Scene>& val_scenes,
    const std::vector<Scene>& test_scenes, const AblationConfig& cfg,
    const std::vector<int>& values, bool sweep_k) {
  std::vector<std::pair<int, double>> out(values.size());
  std::vector<std::vector<double>> per_seed(values.size(),
                                            std::vector<double>(cfg.seeds.size(), 0.0));
  std::vector<std::function<void()>> jobs;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      jobs.push_back([&, vi, si]() {
        AblationConfig local = cfg;
        if (sweep_k) {
          local.train_cfg.topk = values[vi];
          local.train_cfg.mine_budget = values[vi];
        } else {
          local.model_cfg.num_layers = values[vi];
        }
        // L=0 leaves the layer stack empty; the forward degenerates to the
        // projection + classifier path.
        VariantFlags flags{true, true, true};
        per_seed[vi][si] = run_single(train_scenes, val_scenes, test_scenes, local, flags,
                                      true, cfg.seeds[si]);
      });
    }
  }
  run_jobs(std::move(jobs), cfg.threads);
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    double mean = std::accumulate(per_seed[vi].begin(), per_seed[vi].end(), 0.0) /
                  per_seed[vi].size();
    out[vi] = {values[vi], mean};
  }
  return out;
}

std::vector<std::pair<int, double>> sweep_topk(const std::vector<Scene>& train_scenes,
                                               const std::vector<Scene>& val_scenes,
                                               const std::vector<Scene>& test_scenes,
                                               const AblationConfig& cfg,
                                               const std::vector<int>& values) {
  return sweep_impl(train_scenes, val_scenes, test_scenes, cfg, values, true);
}

std::vector<std::pair<int, double>> sweep_layers(const std::vector<Scene>& train_scenes,
                                                 const std::vector<Scene>& val_scenes,
                                                 const std::vector<Scene>& test_scenes,
                                                 const AblationConfig& cfg,
                                                 const std::vector<int>& values) {
  return sweep_impl(train_scenes, val_scenes, test_scenes, cfg, values, false);
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4);
  ss << std::left << std::setw(12) << "variant";
  if (!rows.empty())
    for (std::size_t s = 0; s < rows[0].map_per_seed.size(); ++s)
      ss << std::right << std::setw(10) << ("seed" + std::to_string(s));
  ss << std::right << std::setw(10) << "mean" << "\n";
  for (const AblationRow& r : rows) {
    ss << std::left << std::setw(12) << r.name;
    for (double m : r.map_per_seed) ss << std::right << std::setw(10) << m;
    ss << std::right << std::setw(10) << r.mean_map << "\n";
  }
  return ss.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       bool append) {
  bool exists = std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics csv: " + path);
  if (!exists || !append) out << "epoch,split,L_proposal,L_cls,L_STIP,mAP\n";
  out << std::setprecision(17);
  for (const MetricsRow& r : rows) {
    out << r.epoch << "," << r.split << "," << r.l_proposal << "," << r.l_cls << ","
        << r.l_total << "," << r.map << "\n";
  }
}

}  // namespace stip
