#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "stip/train.hpp"

using namespace stip;
namespace fs = std::filesystem;

namespace {

fs::path tmp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "stip_train_test";
  fs::create_directories(dir);
  return dir / name;
}

IPNConfig tiny_ipn() {
  IPNConfig cfg;
  cfg.d_app = 4;
  cfg.d_ling = 8;
  cfg.hidden = 8;
  return cfg;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.num_layers = 1;
  cfg.d_dep = 4;
  cfg.d_lay = 4;
  cfg.d_grid = 8;
  cfg.num_classes = 10;
  return cfg;
}

GeneratorConfig tiny_gen(int scenes) {
  GeneratorConfig g;
  g.num_scenes = scenes;
  g.d_app = 4;
  g.min_instances = 3;
  g.max_instances = 5;
  return g;
}

Scene gt_only_scene(int id, const std::vector<GtInteraction>& gt) {
  Scene s;
  s.scene_id = id;
  s.gt = gt;
  return s;
}

GtInteraction make_gt(const BBox& h, const BBox& o, int obj_class, std::set<int> classes) {
  GtInteraction g;
  g.human_box = h;
  g.object_box = o;
  g.object_class = obj_class;
  g.interaction_classes = std::move(classes);
  return g;
}

// Independent evaluation oracle: per class, rank predictions by score
// (stable), greedily match against unmatched ground truth of the same scene
// and object class with both IoUs above the threshold, preferring the
// candidate with the larger of min(IoU_h, IoU_o); then integrate the
// interpolated PR curve by scanning recall levels.
double oracle_class_ap(std::vector<Prediction> preds, const std::vector<Scene>& scenes,
                       int cls, double thr = 0.5) {
  std::erase_if(preds, [&](const Prediction& p) { return p.interaction_class != cls; });
  std::stable_sort(preds.begin(), preds.end(),
                   [](const Prediction& a, const Prediction& b) { return a.score > b.score; });
  struct G {
    int scene;
    const GtInteraction* g;
    bool used = false;
  };
  std::vector<G> gts;
  for (const Scene& s : scenes)
    for (const GtInteraction& g : s.gt)
      if (g.interaction_classes.count(cls)) gts.push_back({s.scene_id, &g});
  if (gts.empty()) return -1.0;

  std::vector<int> tp;
  for (const Prediction& p : preds) {
    int pick = -1;
    double pick_q = thr;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (gts[i].used || gts[i].scene != p.scene_id) continue;
      if (gts[i].g->object_class != p.object_class) continue;
      double a = iou(p.human_box, gts[i].g->human_box);
      double b = iou(p.object_box, gts[i].g->object_box);
      if (a > thr && b > thr && std::min(a, b) > pick_q) {
        pick_q = std::min(a, b);
        pick = static_cast<int>(i);
      }
    }
    if (pick >= 0) gts[pick].used = true;
    tp.push_back(pick >= 0 ? 1 : 0);
  }

  // Integrate by stepping over every prediction rank.
  double ap = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (!tp[i]) continue;
    ++hits;
    // Interpolated precision at this recall level: best precision at any
    // rank >= the current one.
    double best = 0.0;
    int h2 = 0;
    for (std::size_t j = 0; j < tp.size(); ++j) {
      h2 += tp[j];
      if (j >= i) best = std::max(best, static_cast<double>(h2) / (j + 1));
    }
    ap += best / static_cast<double>(gts.size());
  }
  return ap;
}

}  // namespace

TEST_CASE("evaluate: perfect predictions give mAP 1, none give 0") {
  BBox h{0.1, 0.1, 0.4, 0.4}, o{0.5, 0.5, 0.8, 0.8};
  std::vector<Scene> scenes{gt_only_scene(0, {make_gt(h, o, 2, {1, 3})})};
  std::vector<Prediction> preds{{0, h, o, 2, 1, 1.0}, {0, h, o, 2, 3, 1.0}};
  auto rep = evaluate(preds, scenes, 5);
  CHECK(rep.map == doctest::Approx(1.0));
  CHECK(rep.per_class_ap[1] == doctest::Approx(1.0));
  CHECK(rep.per_class_ap[3] == doctest::Approx(1.0));
  CHECK(rep.per_class_ap[0] == -1.0);  // no ground truth for this class
  CHECK(rep.gt_count[1] == 1);

  auto empty = evaluate({}, scenes, 5);
  CHECK(empty.map == doctest::Approx(0.0));
  CHECK(empty.per_class_ap[1] == doctest::Approx(0.0));
}

TEST_CASE("evaluate: hand PR case with 3 predictions over 2 ground truths") {
  BBox h0{0.1, 0.1, 0.4, 0.4}, o0{0.5, 0.5, 0.8, 0.8};
  BBox h1{0.2, 0.2, 0.5, 0.5}, o1{0.6, 0.1, 0.9, 0.4};
  std::vector<Scene> scenes{gt_only_scene(0, {make_gt(h0, o0, 1, {0})}),
                            gt_only_scene(1, {make_gt(h1, o1, 1, {0})})};
  BBox far{0.0, 0.6, 0.2, 0.9};
  std::vector<Prediction> preds{
      {0, h0, o0, 1, 0, 0.9},   // true positive
      {0, h0, far, 1, 0, 0.8},  // false positive (object box misses)
      {1, h1, o1, 1, 0, 0.7},   // true positive
  };
  auto rep = evaluate(preds, scenes, 1);
  // prec = [1, 1/2, 2/3], rec = [1/2, 1/2, 1]; all-point AP = 0.5*1 + 0.5*(2/3)
  CHECK(rep.per_class_ap[0] == doctest::Approx(5.0 / 6.0));
  CHECK(rep.precision[0] == std::vector<double>{1.0, 0.5, 2.0 / 3.0});
  CHECK(rep.recall[0] == std::vector<double>{0.5, 0.5, 1.0});
  CHECK(rep.per_class_ap[0] == doctest::Approx(oracle_class_ap(preds, scenes, 0)));
}

TEST_CASE("evaluate: matching respects scene, class, and single-use constraints") {
  BBox h{0.1, 0.1, 0.4, 0.4}, o{0.5, 0.5, 0.8, 0.8};
  std::vector<Scene> scenes{gt_only_scene(0, {make_gt(h, o, 1, {0})}), gt_only_scene(1, {})};
  SUBCASE("prediction in the wrong scene never matches") {
    std::vector<Prediction> preds{{1, h, o, 1, 0, 0.9}};
    CHECK(evaluate(preds, scenes, 1).per_class_ap[0] == doctest::Approx(0.0));
  }
  SUBCASE("object class mismatch never matches") {
    std::vector<Prediction> preds{{0, h, o, 2, 0, 0.9}};
    CHECK(evaluate(preds, scenes, 1).per_class_ap[0] == doctest::Approx(0.0));
  }
  SUBCASE("a ground truth matches at most one prediction") {
    std::vector<Prediction> preds{{0, h, o, 1, 0, 0.9}, {0, h, o, 1, 0, 0.8}};
    auto rep = evaluate(preds, scenes, 1);
    // Second duplicate is a false positive: prec [1, 1/2], rec [1, 1], AP 1.
    CHECK(rep.per_class_ap[0] == doctest::Approx(1.0));
    CHECK(rep.precision[0][1] == doctest::Approx(0.5));
  }
}

TEST_CASE("evaluate matches the independent oracle on random scenes") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto rand_box = [&] {
    double x1 = u(rng) * 0.6, y1 = u(rng) * 0.6;
    return BBox{x1, y1, x1 + 0.1 + 0.3 * u(rng), y1 + 0.1 + 0.3 * u(rng)};
  };
  auto wiggle = [&](const BBox& b, double amt) {
    return BBox{std::max(0.0, b.x1 + amt * (u(rng) - 0.5)),
                std::max(0.0, b.y1 + amt * (u(rng) - 0.5)),
                std::min(1.0, b.x2 + amt * (u(rng) - 0.5)),
                std::min(1.0, b.y2 + amt * (u(rng) - 0.5))};
  };
  const int num_classes = 4;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Scene> scenes;
    std::vector<Prediction> preds;
    int n_scenes = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < n_scenes; ++s) {
      std::vector<GtInteraction> gt;
      int n_gt = static_cast<int>(rng() % 4);
      for (int g = 0; g < n_gt; ++g) {
        std::set<int> classes{static_cast<int>(rng() % num_classes)};
        if (rng() % 2) classes.insert(static_cast<int>(rng() % num_classes));
        gt.push_back(make_gt(rand_box(), rand_box(), static_cast<int>(rng() % 3), classes));
      }
      scenes.push_back(gt_only_scene(s, gt));
      int n_pred = static_cast<int>(rng() % 6);
      for (int p = 0; p < n_pred; ++p) {
        Prediction pr;
        pr.scene_id = s;
        if (!gt.empty() && rng() % 2) {
          const GtInteraction& g = gt[rng() % gt.size()];
          pr.human_box = wiggle(g.human_box, 0.08);
          pr.object_box = wiggle(g.object_box, 0.08);
          pr.object_class = rng() % 4 ? g.object_class : static_cast<int>(rng() % 3);
        } else {
          pr.human_box = rand_box();
          pr.object_box = rand_box();
          pr.object_class = static_cast<int>(rng() % 3);
        }
        pr.interaction_class = static_cast<int>(rng() % num_classes);
        pr.score = u(rng);
        preds.push_back(pr);
      }
    }
    auto rep = evaluate(preds, scenes, num_classes);
    for (int c = 0; c < num_classes; ++c) {
      double want = oracle_class_ap(preds, scenes, c);
      if (want < 0.0)
        CHECK(rep.per_class_ap[c] == -1.0);
      else
        CHECK(rep.per_class_ap[c] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("evaluate is invariant under monotone score transforms") {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BBox h{0.1, 0.1, 0.4, 0.4}, o{0.5, 0.5, 0.8, 0.8};
  std::vector<Scene> scenes{
      gt_only_scene(0, {make_gt(h, o, 1, {0, 1}), make_gt(o, h, 1, {1})})};
  std::vector<Prediction> preds;
  for (int i = 0; i < 30; ++i) {
    Prediction p;
    p.scene_id = 0;
    p.human_box = (i % 2) ? h : o;
    p.object_box = (i % 2) ? o : h;
    p.object_class = (i % 3) ? 1 : 2;
    p.interaction_class = static_cast<int>(rng() % 2);
    p.score = u(rng);
    preds.push_back(p);
  }
  auto base = evaluate(preds, scenes, 2);
  auto transformed = preds;
  for (auto& p : transformed) p.score = 0.05 + 0.9 * std::sqrt(p.score);
  auto rep2 = evaluate(transformed, scenes, 2);
  CHECK(base.map == doctest::Approx(rep2.map).epsilon(1e-12));
  for (int c = 0; c < 2; ++c)
    CHECK(base.per_class_ap[c] == doctest::Approx(rep2.per_class_ap[c]).epsilon(1e-12));
}

TEST_CASE("predict: bounds, score floor, and strategy differences") {
  auto scenes = generate_dataset(tiny_gen(4), 21);
  ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 9);
  auto preds = predict(scenes[0], b, 8, ScoreStrategy::kProduct, 0.0);
  CHECK(static_cast<int>(preds.size()) <= 8 * b.model_cfg.num_classes);
  for (const auto& p : preds) {
    CHECK(p.score > 0.0);
    CHECK(p.score < 1.0);
  }
  auto floored = predict(scenes[0], b, 8, ScoreStrategy::kProduct, 0.5);
  for (const auto& p : floored) CHECK(p.score >= 0.5);
  CHECK(floored.size() <= preds.size());

  // kClassOnly scores are the class probabilities: each product-strategy score
  // must be <= its class-only counterpart (interactiveness is in (0,1)).
  auto class_only = predict(scenes[0], b, 8, ScoreStrategy::kClassOnly, 0.0);
  REQUIRE(class_only.size() == preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i].score < class_only[i].score);
}

TEST_CASE("predict_all is independent of the thread count") {
  auto scenes = generate_dataset(tiny_gen(12), 33);
  ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 5);
  auto p1 = predict_all(scenes, b, 8, ScoreStrategy::kProduct, 1e-4, 1);
  auto p4 = predict_all(scenes, b, 8, ScoreStrategy::kProduct, 1e-4, 4);
  REQUIRE(p1.size() == p4.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].scene_id == p4[i].scene_id);
    CHECK(p1[i].interaction_class == p4[i].interaction_class);
    CHECK(p1[i].score == p4[i].score);
  }
}

TEST_CASE("train: lr=0 leaves every parameter unchanged") {
  auto scenes = generate_dataset(tiny_gen(6), 41);
  ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 3);
  std::vector<std::vector<double>> before;
  for (auto& [name, t] : b.named_params()) before.push_back(*t->data);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0.0;
  cfg.topk = 8;
  cfg.mine_budget = 8;
  train(b, scenes, {}, cfg);
  auto named = b.named_params();
  for (std::size_t i = 0; i < named.size(); ++i) CHECK(*named[i].second->data == before[i]);
}

TEST_CASE("train: loss on a fixed batch decreases over 50 steps") {
  auto scenes = generate_dataset(tiny_gen(1), 47);
  ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch = 1;
  cfg.lr = 5e-5;
  cfg.topk = 8;
  cfg.mine_budget = 8;
  auto log = train(b, scenes, {}, cfg);
  std::vector<double> totals;
  for (const auto& r : log)
    if (r.split == "train") totals.push_back(r.l_total);
  REQUIRE(totals.size() == 50);
  CHECK(totals.back() < totals.front());
}

TEST_CASE("train: identical seeds give identical metrics logs and CSVs") {
  auto scenes = generate_dataset(tiny_gen(8), 51);
  std::vector<Scene> val(scenes.begin() + 6, scenes.end());
  std::vector<Scene> tr(scenes.begin(), scenes.begin() + 6);
  auto run = [&](const std::string& csv) {
    ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 13);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 1e-4;
    cfg.topk = 8;
    cfg.mine_budget = 8;
    cfg.seed = 13;
    cfg.metrics_csv = csv;
    return train(b, tr, val, cfg);
  };
  auto csv1 = tmp_path("m1.csv").string(), csv2 = tmp_path("m2.csv").string();
  fs::remove(csv1);
  fs::remove(csv2);
  auto l1 = run(csv1);
  auto l2 = run(csv2);
  REQUIRE(l1.size() == l2.size());
  for (std::size_t i = 0; i < l1.size(); ++i) {
    CHECK(l1[i].epoch == l2[i].epoch);
    CHECK(l1[i].split == l2[i].split);
    CHECK(l1[i].l_proposal == l2[i].l_proposal);
    CHECK(l1[i].l_cls == l2[i].l_cls);
    CHECK(l1[i].l_total == l2[i].l_total);
    CHECK(l1[i].map == l2[i].map);
  }
  std::ifstream f1(csv1), f2(csv2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.rfind("epoch,split,L_proposal,L_cls,L_STIP,mAP\n", 0) == 0);
}

TEST_CASE("checkpoint save -> load -> eval reproduces mAP exactly") {
  auto scenes = generate_dataset(tiny_gen(10), 61);
  std::vector<Scene> tr(scenes.begin(), scenes.begin() + 7);
  std::vector<Scene> te(scenes.begin() + 7, scenes.end());
  ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 17);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-4;
  cfg.topk = 8;
  cfg.mine_budget = 8;
  cfg.checkpoint_prefix = tmp_path("ckpt").string();
  train(b, tr, te, cfg);
  auto preds = predict_all(te, b, cfg.topk, cfg.scoring, cfg.score_floor);
  double map1 = evaluate(preds, te, b.model_cfg.num_classes).map;

  ModelBundle fresh = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 999);
  fresh.load(cfg.checkpoint_prefix);
  auto preds2 = predict_all(te, fresh, cfg.topk, cfg.scoring, cfg.score_floor);
  double map2 = evaluate(preds2, te, fresh.model_cfg.num_classes).map;
  CHECK(map1 == map2);
  REQUIRE(preds.size() == preds2.size());
  for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i].score == preds2[i].score);
}

TEST_CASE("train rejects an empty dataset") {
  ModelBundle b = ModelBundle::init(tiny_ipn(), tiny_model(), VariantFlags{}, 6, 1);
  CHECK_THROWS_AS(train(b, {}, {}, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("ablation table formatting includes every variant row") {
  std::vector<AblationRow> rows{{"Base", {false, false, false}, false, {0.1, 0.2}, 0.15},
                                {"STIP", {true, true, true}, true, {0.5, 0.6}, 0.55}};
  std::string table = format_ablation_table(rows);
  CHECK(table.find("Base") != std::string::npos);
  CHECK(table.find("STIP") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
  CHECK(table.find("0.5500") != std::string::npos);
}
