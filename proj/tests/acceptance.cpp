// End-to-end acceptance gate. Each numbered criterion prints exactly one
// PASS/FAIL line; the process exits nonzero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "stip/gradcheck.hpp"
#include "stip/train.hpp"

using namespace stip;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

fs::path work_dir() {
  auto dir = fs::temp_directory_path() / "stip_acceptance";
  fs::create_directories(dir);
  return dir;
}

bool report(int num, const std::string& what, bool ok, const std::string& detail = "") {
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << num << ": " << what;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
  return ok;
}

// ---------------------------------------------------------------- criterion 1
bool criterion_gradients() {
  double t0 = now_seconds();
  std::ostringstream sink;
  bool ok = run_gradcheck_suite(sink);
  double dt = now_seconds() - t0;
  if (!ok) std::cout << sink.str();
  std::ostringstream detail;
  detail << "suite " << (ok ? "clean" : "dirty") << ", " << dt << " s";
  return report(1, "gradient suite passes finite-difference checks in < 60 s",
                ok && dt < 60.0, detail.str());
}

// ---------------------------------------------------------------- criterion 2
int dep_oracle(int h1, int o1, int h2, int o2) {
  if (h1 == h2 && o1 == o2) return 5;
  if (h1 == h2) return 1;
  if (o1 == o2) return 2;
  if (h1 == o2) return 3;
  if (o1 == h2) return 4;
  return 0;
}

BBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x1 = u(rng) * 0.7, y1 = u(rng) * 0.7;
  return BBox{x1, y1, x1 + 0.05 + 0.25 * u(rng), y1 + 0.05 + 0.25 * u(rng)};
}

bool criterion_structure() {
  bool ok = true;
  for (int h1 = 0; h1 < 4 && ok; ++h1)
    for (int o1 = 0; o1 < 4 && ok; ++o1)
      for (int h2 = 0; h2 < 4 && ok; ++h2)
        for (int o2 = 0; o2 < 4 && ok; ++o2) {
          if (h1 == o1 || h2 == o2) continue;
          ok = static_cast<int>(dependency_label({h1, o1}, {h2, o2})) ==
               dep_oracle(h1, o1, h2, o2);
        }

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> id(0, 6);
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::vector<PairIds> props;
    int k = 2 + static_cast<int>(rng() % 7);
    for (int i = 0; i < k; ++i) {
      int h = id(rng), o = id(rng);
      while (o == h) o = id(rng);
      props.push_back({h, o});
    }
    auto m = dependency_matrix(props);
    for (int i = 0; i < k && ok; ++i)
      for (int j = 0; j < k && ok; ++j) {
        int a = static_cast<int>(m[i][j]), b = static_cast<int>(m[j][i]);
        // Mutually reversed pairs resolve to series-opposing in both
        // directions under the priority order.
        bool reversed =
            props[i].human == props[j].object && props[i].object == props[j].human;
        ok = (a == 3)   ? (b == (reversed ? 3 : 4))
             : (a == 4) ? (!reversed && b == 3)
                        : (a == b);
      }
  }

  for (int trial = 0; trial < 1000 && ok; ++trial) {
    BBox h = random_box(rng), o = random_box(rng);
    auto m = layout_map(h, o, 16, 16);
    BBox ub = union_box(h, o);
    std::array<int, 5> want{};
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        double py = (r + 0.5) / 16.0, px = (c + 0.5) / 16.0;
        bool ih = h.contains(px, py), io = o.contains(px, py);
        if (ih && io) ++want[4];
        else if (ih) ++want[2];
        else if (io) ++want[3];
        else if (ub.contains(px, py)) ++want[1];
        else ++want[0];
      }
    ok = m.label_counts() == want;
  }
  return report(2, "dependency and layout structures match independent oracles", ok);
}

// ---------------------------------------------------------------- criterion 3
void zero_mlp(ad::Mlp2Params& p) {
  p.w1 = Tensor::zeros(p.w1.shape, true);
  p.b1 = Tensor::zeros(p.b1.shape, true);
  p.w2 = Tensor::zeros(p.w2.shape, true);
  p.b2 = Tensor::zeros(p.b2.shape, true);
}

// Naive single-head attention with per-query key matrices, raw loops.
std::vector<std::vector<double>> naive_attention(
    const Tensor& qp, const std::vector<std::vector<std::vector<double>>>& keys,
    const Tensor& vp) {
  const int m = qp.rows(), d = qp.cols(), n = vp.rows();
  std::vector<std::vector<double>> out(m, std::vector<double>(d, 0.0));
  for (int i = 0; i < m; ++i) {
    std::vector<double> e(n, 0.0);
    for (int j = 0; j < n; ++j) {
      for (int c = 0; c < d; ++c) e[j] += qp.at(i, c) * keys[i][j][c];
      e[j] /= std::sqrt(static_cast<double>(d));
    }
    double mx = *std::max_element(e.begin(), e.end());
    double z = 0.0;
    for (double& x : e) z += (x = std::exp(x - mx));
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < d; ++c) out[i][c] += e[j] / z * vp.at(j, c);
  }
  return out;
}

std::vector<double> naive_mlp2(const std::vector<double>& x, const ad::Mlp2Params& p) {
  std::vector<double> h(p.w1.cols(), 0.0);
  for (int k = 0; k < p.w1.rows(); ++k)
    for (int j = 0; j < p.w1.cols(); ++j) h[j] += x[k] * p.w1.at(k, j);
  for (int j = 0; j < p.w1.cols(); ++j) h[j] = std::max(0.0, h[j] + (*p.b1.data)[j]);
  std::vector<double> o(p.w2.cols(), 0.0);
  for (int k = 0; k < p.w2.rows(); ++k)
    for (int j = 0; j < p.w2.cols(); ++j) o[j] += h[k] * p.w2.at(k, j);
  for (int j = 0; j < p.w2.cols(); ++j) o[j] += (*p.b2.data)[j];
  return o;
}

bool criterion_attention() {
  std::mt19937_64 rng(5);
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_dep = 4;
  cfg.d_lay = 4;
  cfg.d_grid = 6;
  cfg.num_classes = 3;
  cfg.pair_feature_width = 10;
  cfg.num_layers = 1;
  LayerParams lp = LayerParams::init(cfg, rng);
  const int k = 4, d = 8;
  Tensor q = Tensor::randn({k, d}, rng, 1.0);
  std::vector<PairIds> props{{0, 1}, {0, 2}, {3, 2}, {2, 4}};
  auto dep = dependency_matrix(props);

  bool ok = true;

  {  // psi == 0 collapses the structured self-attention to vanilla, bitwise.
    LayerParams lz = lp;
    zero_mlp(lz.psi);
    Tensor a = structure_self_attention(nullptr, q, dep, lz, 1);
    Tensor b = vanilla_attention(nullptr, q, q, q, lz.self_attn, 1);
    ok = ok && *a.data == *b.data;
  }

  const int n = 16;
  Tensor grid_proj = Tensor::randn({n, d}, rng, 1.0);
  LayoutMap m1 = layout_map({0, 0, 0.5, 1}, {0.5, 0, 1, 1}, 4, 4);
  LayoutMap m2 = layout_map({0.1, 0.1, 0.7, 0.7}, {0.5, 0.5, 0.9, 0.9}, 4, 4);
  std::vector<const LayoutMap*> layouts{&m1, &m2};
  Tensor q2 = Tensor::randn({2, d}, rng, 1.0);

  {  // phi == 0 and pos == 0 collapse cross-attention to vanilla, bitwise.
    LayerParams lz = lp;
    zero_mlp(lz.phi);
    Tensor zero_pos = Tensor::zeros({n, d});
    Tensor a = structure_cross_attention(nullptr, q2, grid_proj, zero_pos, layouts, lz, 1);
    Tensor b = vanilla_attention(nullptr, q2, grid_proj, grid_proj, lz.cross_attn, 1);
    ok = ok && *a.data == *b.data;
  }

  {  // structured self-attention vs loop oracle, 1e-10.
    Tensor got = structure_self_attention(nullptr, q, dep, lp, 1);
    Tensor qp = ad::matmul(nullptr, q, lp.self_attn.wq);
    Tensor kb = ad::matmul(nullptr, q, lp.self_attn.wk);
    Tensor vp = ad::matmul(nullptr, q, lp.self_attn.wv);
    std::vector<std::vector<std::vector<double>>> keys(
        k, std::vector<std::vector<double>>(k, std::vector<double>(d)));
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        std::vector<double> in(d + cfg.d_dep);
        for (int c = 0; c < d; ++c) in[c] = q.at(j, c);
        for (int c = 0; c < cfg.d_dep; ++c)
          in[d + c] = lp.e_dep.at(static_cast<int>(dep[i][j]), c);
        auto psi = naive_mlp2(in, lp.psi);
        for (int c = 0; c < d; ++c) keys[i][j][c] = kb.at(j, c) + psi[c];
      }
    auto core = naive_attention(qp, keys, vp);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < d; ++j) {
        double want = 0.0;
        for (int c = 0; c < d; ++c) want += core[i][c] * lp.self_attn.wo.at(c, j);
        ok = ok && std::fabs(got.at(i, j) - want) < 1e-10;
      }
  }

  {  // structured cross-attention vs loop oracle, 1e-10.
    Tensor pos = position_encoding(4, 4, d);
    Tensor got = structure_cross_attention(nullptr, q2, grid_proj, pos, layouts, lp, 1);
    Tensor qp = ad::matmul(nullptr, q2, lp.cross_attn.wq);
    Tensor kb = ad::matmul(nullptr, grid_proj, lp.cross_attn.wk);
    Tensor vp = ad::matmul(nullptr, grid_proj, lp.cross_attn.wv);
    std::vector<std::vector<std::vector<double>>> keys(
        2, std::vector<std::vector<double>>(n, std::vector<double>(d)));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < n; ++j) {
        std::vector<double> in(d + cfg.d_lay);
        for (int c = 0; c < d; ++c) in[c] = grid_proj.at(j, c);
        for (int c = 0; c < cfg.d_lay; ++c) in[d + c] = lp.e_lay.at(layouts[i]->grid[j], c);
        auto phi = naive_mlp2(in, lp.phi);
        for (int c = 0; c < d; ++c) keys[i][j][c] = kb.at(j, c) + pos.at(j, c) + phi[c];
      }
    auto core = naive_attention(qp, keys, vp);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < d; ++j) {
        double want = 0.0;
        for (int c = 0; c < d; ++c) want += core[i][c] * lp.cross_attn.wo.at(c, j);
        ok = ok && std::fabs(got.at(i, j) - want) < 1e-10;
      }
  }
  return report(3, "structured attention collapses bitwise and matches loop oracles", ok);
}

// ---------------------------------------------------------------- criterion 4
bool criterion_focal() {
  bool ok = std::fabs(ad::binary_focal_loss(0.5, 1, 2.0, 1.0) - 0.25 * std::log(2.0)) < 1e-9;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pd(0.02, 0.98);
  for (int i = 0; i < 200 && ok; ++i) {
    double p = pd(rng);
    int z = static_cast<int>(rng() % 2);
    double bce = z ? -std::log(p) : -std::log(1.0 - p);
    ok = std::fabs(ad::binary_focal_loss(p, z, 0.0, 0.5) - 0.5 * bce) < 1e-9;
  }
  return report(4, "focal loss closed forms match to 1e-9", ok);
}

// ---------------------------------------------------------------- criterion 5
bool criterion_matching() {
  bool ok = true;
  // label_pairs vs brute force on 1000 generated scenes.
  GeneratorConfig gcfg;
  gcfg.num_scenes = 1000;
  gcfg.d_app = 4;
  gcfg.min_instances = 2;
  gcfg.max_instances = 6;
  gcfg.jitter_sigma = 0.05;
  auto scenes = generate_dataset(gcfg, 99);
  IPNConfig icfg;
  icfg.d_app = 4;
  icfg.d_ling = 4;
  std::mt19937_64 rng(3);
  IPNParams params = IPNParams::init(icfg, gcfg.num_object_classes, rng);
  for (const Scene& scene : scenes) {
    auto pairs = build_pairs(scene, params, icfg);
    label_pairs(pairs, scene, scene.gt);
    for (const auto& p : pairs) {
      int z = 0;
      std::set<int> classes;
      for (const auto& g : scene.gt) {
        if (iou(scene.instances[p.human_idx].box, g.human_box) > 0.5 &&
            iou(scene.instances[p.object_idx].box, g.object_box) > 0.5) {
          z = 1;
          classes.insert(g.interaction_classes.begin(), g.interaction_classes.end());
        }
      }
      ok = ok && p.gt_interactive == z && p.gt_interaction_classes == classes;
    }
    if (!ok) break;
  }

  // Hand PR case: TP, FP, TP over two ground truths -> AP = 5/6.
  {
    BBox h0{0.1, 0.1, 0.4, 0.4}, o0{0.5, 0.5, 0.8, 0.8};
    BBox h1{0.2, 0.2, 0.5, 0.5}, o1{0.6, 0.1, 0.9, 0.4};
    GtInteraction g0, g1;
    g0.human_box = h0;
    g0.object_box = o0;
    g0.object_class = 1;
    g0.interaction_classes = {0};
    g1.human_box = h1;
    g1.object_box = o1;
    g1.object_class = 1;
    g1.interaction_classes = {0};
    Scene s0, s1;
    s0.scene_id = 0;
    s0.gt = {g0};
    s1.scene_id = 1;
    s1.gt = {g1};
    std::vector<Prediction> preds{{0, h0, o0, 1, 0, 0.9},
                                  {0, h0, BBox{0, 0.6, 0.2, 0.9}, 1, 0, 0.8},
                                  {1, h1, o1, 1, 0, 0.7}};
    auto rep = evaluate(preds, {s0, s1}, 1);
    ok = ok && std::fabs(rep.per_class_ap[0] - 5.0 / 6.0) < 1e-12;

    // Monotone-transform invariance of the ranking metric.
    auto warped = preds;
    for (auto& p : warped) p.score = 0.1 + 0.8 * std::sqrt(p.score);
    auto rep2 = evaluate(warped, {s0, s1}, 1);
    ok = ok && std::fabs(rep.map - rep2.map) < 1e-12;
  }
  return report(5, "pair labeling and AP evaluation match brute-force oracles", ok);
}

// ------------------------------------------------------------- criteria 6 & 7
AblationConfig desk_config() {
  AblationConfig cfg;
  cfg.ipn_cfg.d_app = 16;
  cfg.ipn_cfg.d_ling = 16;
  cfg.ipn_cfg.hidden = 32;
  cfg.model_cfg.d_model = 32;
  cfg.model_cfg.num_layers = 2;
  cfg.model_cfg.d_dep = 16;
  cfg.model_cfg.d_lay = 16;
  cfg.model_cfg.d_grid = 8;
  cfg.model_cfg.num_classes = 10;
  cfg.train_cfg.epochs = 10;
  cfg.train_cfg.lr = 3e-3;
  cfg.train_cfg.batch = 1;
  cfg.train_cfg.topk = 32;
  cfg.train_cfg.mine_budget = 6;
  cfg.num_object_classes = 6;
  cfg.seeds = {3, 5, 6};
  cfg.threads = 4;
  return cfg;
}

struct DeskData {
  std::vector<Scene> train, test;
};

DeskData desk_data() {
  GeneratorConfig g;
  g.min_instances = 6;
  g.max_instances = 10;
  g.near_threshold = 0.22;
  g.jitter_sigma = 0.02;
  g.num_scenes = 500;
  auto train = generate_dataset(g, 1001);
  g.num_scenes = 100;
  auto test = generate_dataset(g, 1003);
  return {std::move(train), std::move(test)};
}

bool criterion_ablation(const DeskData& data, std::vector<AblationRow>& rows_out) {
  double t0 = now_seconds();
  AblationConfig cfg = desk_config();
  auto rows = run_ablation(data.train, {}, data.test, cfg);
  double dt = now_seconds() - t0;
  rows_out = rows;

  auto find = [&](const std::string& name) -> const AblationRow& {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw std::runtime_error("missing ablation row " + name);
  };
  const AblationRow& base = find("Base");
  const AblationRow& hm = find("+HM");
  const AblationRow& tr = find("+HM+TR");
  const AblationRow& stip = find("STIP");

  std::cout << format_ablation_table(rows);

  bool mean_order = base.mean_map <= hm.mean_map && hm.mean_map <= tr.mean_map &&
                    tr.mean_map <= stip.mean_map;
  bool gap = stip.mean_map - tr.mean_map >= 0.02;
  int seeds_ordered = 0;
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    if (base.map_per_seed[s] <= hm.map_per_seed[s] &&
        hm.map_per_seed[s] <= tr.map_per_seed[s] &&
        tr.map_per_seed[s] <= stip.map_per_seed[s])
      ++seeds_ordered;
  }
  bool in_budget = dt <= 15.0 * 60.0;
  std::ostringstream detail;
  detail << "means " << base.mean_map << " <= " << hm.mean_map << " <= " << tr.mean_map
         << " <= " << stip.mean_map << ", gap " << stip.mean_map - tr.mean_map
         << ", ordered seeds " << seeds_ordered << "/3, " << dt << " s";
  return report(6, "ablation ordering Base <= +HM <= +TR <= STIP with >= 2 mAP gap",
                mean_order && gap && seeds_ordered >= 2 && in_budget, detail.str());
}

bool criterion_sweeps(const DeskData& data) {
  AblationConfig cfg = desk_config();
  cfg.seeds = {5, 6};
  auto k_curve = sweep_topk(data.train, {}, data.test, cfg, {8, 32});
  auto l_curve = sweep_layers(data.train, {}, data.test, cfg, {0, 2});
  double k8 = k_curve[0].second, k32 = k_curve[1].second;
  double l0 = l_curve[0].second, l2 = l_curve[1].second;
  std::ostringstream detail;
  detail << "mAP K=8: " << k8 << ", K=32: " << k32 << "; L=0: " << l0 << ", L=2: " << l2;
  return report(7, "sweep curves: mAP(K=32) >= mAP(K=8) and mAP(L=2) > mAP(L=0)",
                k32 >= k8 && l2 > l0, detail.str());
}

// ---------------------------------------------------------------- criterion 8
bool criterion_determinism() {
  bool ok = true;
  GeneratorConfig g;
  g.num_scenes = 24;
  g.d_app = 4;
  auto scenes = generate_dataset(g, 77);

  // Dataset round-trip identity.
  auto path = (work_dir() / "roundtrip.txt").string();
  save_scenes(scenes, path);
  auto loaded = load_scenes(path);
  ok = ok && loaded.size() == scenes.size();
  for (std::size_t i = 0; i < scenes.size() && ok; ++i) ok = loaded[i] == scenes[i];

  std::vector<Scene> tr(scenes.begin(), scenes.begin() + 18);
  std::vector<Scene> te(scenes.begin() + 18, scenes.end());
  IPNConfig icfg;
  icfg.d_app = 4;
  icfg.d_ling = 8;
  icfg.hidden = 8;
  ModelConfig mcfg;
  mcfg.d_model = 8;
  mcfg.num_layers = 1;
  mcfg.d_dep = 4;
  mcfg.d_lay = 4;
  mcfg.num_classes = 10;

  auto run = [&](const std::string& csv, const std::string& ckpt) {
    ModelBundle b = ModelBundle::init(icfg, mcfg, VariantFlags{}, 6, 21);
    TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 1e-4;
    tc.topk = 8;
    tc.mine_budget = 8;
    tc.seed = 21;
    tc.metrics_csv = csv;
    tc.checkpoint_prefix = ckpt;
    train(b, tr, te, tc);
    auto preds = predict_all(te, b, tc.topk, tc.scoring, tc.score_floor);
    return evaluate(preds, te, mcfg.num_classes).map;
  };
  auto c1 = (work_dir() / "m1.csv").string(), c2 = (work_dir() / "m2.csv").string();
  fs::remove(c1);
  fs::remove(c2);
  auto ckpt = (work_dir() / "ck").string();
  double map1 = run(c1, ckpt);
  double map2 = run(c2, "");
  ok = ok && map1 == map2;

  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  ok = ok && slurp(c1) == slurp(c2) && !slurp(c1).empty();

  // Checkpoint reload reproduces the evaluation exactly.
  ModelBundle fresh = ModelBundle::init(icfg, mcfg, VariantFlags{}, 6, 12345);
  fresh.load(ckpt);
  TrainConfig tc;
  tc.topk = 8;
  auto preds = predict_all(te, fresh, tc.topk, tc.scoring, tc.score_floor);
  double map3 = evaluate(preds, te, mcfg.num_classes).map;
  ok = ok && map3 == map1;
  return report(8, "determinism and persistence (CSV, checkpoint, dataset round-trip)", ok);
}

}  // namespace

int main() {
  int failures = 0;
  failures += !criterion_gradients();
  failures += !criterion_structure();
  failures += !criterion_attention();
  failures += !criterion_focal();
  failures += !criterion_matching();
  DeskData data = desk_data();
  std::vector<AblationRow> rows;
  failures += !criterion_ablation(data, rows);
  failures += !criterion_sweeps(data);
  failures += !criterion_determinism();
  std::cout << (failures ? "ACCEPTANCE: FAILED" : "ACCEPTANCE: PASSED") << " (" << failures
            << " failing criteria)" << std::endl;
  return failures ? 1 : 0;
}
