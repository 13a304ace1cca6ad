#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stip/model.hpp"
#include "stip/proposal.hpp"
#include "stip/scene.hpp"

namespace stip {

// Everything learnable plus the configs needed to run the two phases.
struct ModelBundle {
  IPNConfig ipn_cfg;
  ModelConfig model_cfg;
  VariantFlags flags;
  IPNParams ipn;
  ModelParams model;

  static ModelBundle init(const IPNConfig& ipn_cfg, const ModelConfig& model_cfg,
                          const VariantFlags& flags, int num_object_classes, uint64_t seed);
  std::vector<std::pair<std::string, ad::Tensor*>> named_params();
  void save(const std::string& prefix);
  void load(const std::string& prefix);
};

enum class ScoreStrategy {
  kProduct,     // interactiveness times class probability
  kClassOnly,   // class probability alone
  kProductDet,  // additionally multiply both detection scores (untested vs the
                // original work; kept as a third strategy)
};

struct TrainConfig {
  int epochs = 30;
  int batch = 8;  // scenes per optimizer step, via gradient accumulation
  double lr = 5e-5;
  double weight_decay = 0.01;
  int topk = 32;         // proposals entering the second phase
  int mine_budget = 32;  // pairs sampled for the proposal loss
  double max_neg_ratio = 3.0;
  bool hard_mining = true;
  double cls_weight = 1.0;
  double score_floor = 1e-4;
  ScoreStrategy scoring = ScoreStrategy::kProduct;
  uint64_t seed = 1;
  std::string checkpoint_prefix;  // when set, best-by-validation-mAP is kept here
  std::string metrics_csv;        // when set, appended per epoch
};

struct MetricsRow {
  int epoch = 0;
  std::string split;
  double l_proposal = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  double map = -1.0;  // negative when not evaluated
};

struct Prediction {
  int scene_id = 0;
  BBox human_box;
  BBox object_box;
  int object_class = 0;
  int interaction_class = 0;
  double score = 0.0;
};

struct EvalReport {
  std::vector<double> per_class_ap;  // -1 for classes without ground truth
  std::vector<int> gt_count;
  std::vector<std::vector<double>> precision;  // per class, along the ranking
  std::vector<std::vector<double>> recall;
  double map = 0.0;
};

// One epoch-loop training run. Returns the metrics log; parameters are
// updated in place. Non-finite losses abort with a diagnostic.
std::vector<MetricsRow> train(ModelBundle& bundle, const std::vector<Scene>& train_scenes,
                              const std::vector<Scene>& val_scenes, const TrainConfig& cfg);

std::vector<Prediction> predict(const Scene& scene, ModelBundle& bundle, int topk,
                                ScoreStrategy scoring, double score_floor);

// Fan-out across scenes; results are identical for any thread count.
std::vector<Prediction> predict_all(const std::vector<Scene>& scenes, ModelBundle& bundle,
                                    int topk, ScoreStrategy scoring, double score_floor,
                                    int threads = 1);

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::vector<Scene>& scenes, int num_classes,
                    double iou_thr = 0.5);

// Held-out binary average precision of the interactiveness head itself.
double interactiveness_ap(ModelBundle& bundle, const std::vector<Scene>& scenes);

struct AblationRow {
  std::string name;
  VariantFlags flags;
  bool hard_mining = true;
  std::vector<double> map_per_seed;
  double mean_map = 0.0;
};

struct AblationConfig {
  IPNConfig ipn_cfg;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  int num_object_classes = 6;
  std::vector<uint64_t> seeds = {1, 2, 3};
  int threads = 1;
};

// Trains and evaluates the component-ablation grid (Base, +HM, +TR, +TR with
// structured self/cross, full model) on identical data and seeds.
std::vector<AblationRow> run_ablation(const std::vector<Scene>& train_scenes,
                                      const std::vector<Scene>& val_scenes,
                                      const std::vector<Scene>& test_scenes,
                                      const AblationConfig& cfg);

// Full-model sweeps over the proposal budget K or the layer count L.
std::vector<std::pair<int, double>> sweep_topk(const std::vector<Scene>& train_scenes,
                                               const std::vector<Scene>& val_scenes,
                                               const std::vector<Scene>& test_scenes,
                                               const AblationConfig& cfg,
                                               const std::vector<int>& values);
std::vector<std::pair<int, double>> sweep_layers(const std::vector<Scene>& train_scenes,
                                                 const std::vector<Scene>& val_scenes,
                                                 const std::vector<Scene>& test_scenes,
                                                 const AblationConfig& cfg,
                                                 const std::vector<int>& values);

std::string format_ablation_table(const std::vector<AblationRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       bool append);

}  // namespace stip
