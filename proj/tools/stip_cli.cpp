// Command-line driver: data generation, training, evaluation, ablation
// grids, gradient checking, and scene inspection.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "stip/gradcheck.hpp"
#include "stip/train.hpp"

namespace fs = std::filesystem;
using namespace stip;

namespace {

struct CliOptions {
  // generator
  GeneratorConfig gen;
  int val_scenes = 100;
  int test_scenes = 100;
  std::string out_dir = ".";
  // model / training
  int d_ling = 300;
  int hidden = 64;
  int d_model = 128;
  int heads = 1;
  int layers = 6;
  int d_dep = 32;
  int d_lay = 32;
  double gamma = 2.0;
  double alpha = 0.25;
  bool post_norm = false;
  std::string variant = "stip";
  TrainConfig train;
  // io
  std::string data_train, data_val, data_test, data;
  std::string checkpoint = "stip_checkpoint";
  std::string metrics_csv;
  std::string sweep;
  int threads = 1;
  uint64_t seed = 1;
  std::vector<uint64_t> seeds = {1, 2, 3};
  // inspect
  int scene_id = 0;
  int max_pairs = 16;
};

VariantFlags parse_variant(const std::string& v, bool& hard_mining) {
  hard_mining = true;
  if (v == "base") {
    hard_mining = false;
    return {false, false, false};
  }
  if (v == "hm") return {false, false, false};
  if (v == "tr") return {true, false, false};
  if (v == "tr_ss") return {true, true, false};
  if (v == "tr_sc") return {true, false, true};
  if (v == "stip") return {true, true, true};
  throw std::invalid_argument("unknown variant: " + v +
                              " (expected base|hm|tr|tr_ss|tr_sc|stip)");
}

std::vector<Scene> load_or_fail(const std::string& path, const char* what) {
  if (path.empty())
    throw std::invalid_argument(std::string("missing required dataset path for ") + what);
  if (!fs::exists(path))
    throw std::invalid_argument("dataset file does not exist: " + path);
  return load_scenes(path);
}

// Model dimensions that must agree with the dataset are inferred from it.
void infer_dims(const std::vector<Scene>& scenes, IPNConfig& ipn, ModelConfig& model) {
  for (const Scene& s : scenes) {
    if (!s.instances.empty()) ipn.d_app = static_cast<int>(s.instances[0].feature.size());
    if (s.feature_grid.data) model.d_grid = s.feature_grid.cols();
    return;
  }
  throw std::invalid_argument("dataset has no scenes to infer dimensions from");
}

ModelBundle make_bundle(const CliOptions& opt, const std::vector<Scene>& ref_scenes,
                        uint64_t seed) {
  IPNConfig ipn;
  ipn.d_ling = opt.d_ling;
  ipn.hidden = opt.hidden;
  ipn.focal_gamma = opt.gamma;
  ipn.focal_alpha = opt.alpha;
  ModelConfig model;
  model.d_model = opt.d_model;
  model.heads = opt.heads;
  model.num_layers = opt.layers;
  model.d_dep = opt.d_dep;
  model.d_lay = opt.d_lay;
  model.num_classes = opt.gen.num_interaction_classes;
  model.focal_gamma = opt.gamma;
  model.focal_alpha = opt.alpha;
  model.pre_norm = !opt.post_norm;
  infer_dims(ref_scenes, ipn, model);
  bool hm = true;
  VariantFlags flags = parse_variant(opt.variant, hm);
  return ModelBundle::init(ipn, model, flags, opt.gen.num_object_classes, seed);
}

void print_banner(const CLI::App& sub) {
  std::cout << "== effective configuration (precedence: flag > config file > default) ==\n";
  for (const CLI::Option* o : sub.get_options()) {
    if (o->get_name() == "--help" || o->get_name() == "--config") continue;
    std::string name = o->get_name();
    if (name.empty()) continue;
    std::string value = o->count() ? o->results().back() : o->get_default_str();
    std::cout << "  " << name << " = " << (value.empty() ? "<unset>" : value)
              << (o->count() ? "" : "  [default]") << "\n";
  }
  std::cout << "=======================================================================\n";
}

std::vector<int> parse_sweep(const std::string& spec, char& axis) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("sweep spec must look like K=8,16,32 or L=0..4");
  std::string key = spec.substr(0, eq);
  axis = std::toupper(static_cast<unsigned char>(key[0]));
  if ((axis != 'K' && axis != 'L') || key.size() != 1)
    throw std::invalid_argument("sweep axis must be K or L");
  std::string body = spec.substr(eq + 1);
  std::vector<int> values;
  auto range = body.find("..");
  if (range != std::string::npos) {
    int lo = std::stoi(body.substr(0, range));
    int hi = std::stoi(body.substr(range + 2));
    if (hi < lo) throw std::invalid_argument("sweep range is empty: " + body);
    for (int v = lo; v <= hi; ++v) values.push_back(v);
  } else {
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(std::stoi(item));
  }
  if (values.empty()) throw std::invalid_argument("sweep produced no values");
  for (int v : values)
    if (v < 0 || (axis == 'K' && v < 1))
      throw std::invalid_argument("sweep value out of range: " + std::to_string(v));
  return values;
}

int cmd_gen_data(const CliOptions& opt) {
  opt.gen.validate();
  if (!fs::exists(opt.out_dir))
    throw std::invalid_argument("output directory does not exist: " + opt.out_dir);
  GeneratorConfig g = opt.gen;
  auto train = generate_dataset(g, opt.seed);
  g.num_scenes = opt.val_scenes;
  auto val = generate_dataset(g, opt.seed + 1);
  g.num_scenes = opt.test_scenes;
  auto test = generate_dataset(g, opt.seed + 2);
  save_scenes(train, (fs::path(opt.out_dir) / "train.txt").string());
  save_scenes(val, (fs::path(opt.out_dir) / "val.txt").string());
  save_scenes(test, (fs::path(opt.out_dir) / "test.txt").string());

  std::size_t pairs = 0, positives = 0;
  IPNConfig probe;
  probe.d_app = opt.gen.d_app;
  probe.d_ling = 4;
  std::mt19937_64 rng(0);
  IPNParams params = IPNParams::init(probe, opt.gen.num_object_classes, rng);
  for (const Scene& s : train) {
    auto ps = build_pairs(s, params, probe);
    label_pairs(ps, s, s.gt);
    pairs += ps.size();
    for (const auto& p : ps) positives += p.gt_interactive;
  }
  std::cout << "wrote " << train.size() << "/" << val.size() << "/" << test.size()
            << " scenes (train/val/test) to " << opt.out_dir << "\n"
            << "train pairs: " << pairs << ", positive rate: "
            << (pairs ? static_cast<double>(positives) / pairs : 0.0) << "\n";
  return 0;
}

int cmd_train(CliOptions& opt) {
  auto train_scenes = load_or_fail(opt.data_train, "train");
  std::vector<Scene> val_scenes;
  if (!opt.data_val.empty()) val_scenes = load_or_fail(opt.data_val, "val");
  ModelBundle bundle = make_bundle(opt, train_scenes, opt.seed);
  bool hm = true;
  parse_variant(opt.variant, hm);
  TrainConfig cfg = opt.train;
  cfg.hard_mining = hm;
  cfg.seed = opt.seed;
  cfg.checkpoint_prefix = opt.checkpoint;
  cfg.metrics_csv = opt.metrics_csv;
  auto log = train(bundle, train_scenes, val_scenes, cfg);
  for (const auto& r : log) {
    std::cout << "epoch " << r.epoch << " " << r.split;
    if (r.split == "train")
      std::cout << " L_proposal=" << r.l_proposal << " L_cls=" << r.l_cls
                << " L_total=" << r.l_total;
    else
      std::cout << " mAP=" << r.map;
    std::cout << "\n";
  }
  std::cout << "checkpoint written to " << opt.checkpoint << ".{manifest,bin}\n";
  return 0;
}

int cmd_eval(CliOptions& opt) {
  if (!fs::exists(opt.checkpoint + ".manifest"))
    throw std::invalid_argument("checkpoint does not exist: " + opt.checkpoint +
                                ".manifest");
  auto test_scenes = load_or_fail(opt.data_test, "test");
  ModelBundle bundle = make_bundle(opt, test_scenes, opt.seed);
  bundle.load(opt.checkpoint);
  auto preds = predict_all(test_scenes, bundle, opt.train.topk, opt.train.scoring,
                           opt.train.score_floor, opt.threads);
  EvalReport rep = evaluate(preds, test_scenes, bundle.model_cfg.num_classes);
  std::cout << "predictions: " << preds.size() << "\n";
  for (std::size_t c = 0; c < rep.per_class_ap.size(); ++c) {
    if (rep.per_class_ap[c] < 0.0)
      std::cout << "class " << c << ": no ground truth\n";
    else
      std::cout << "class " << c << ": AP=" << rep.per_class_ap[c]
                << " (gt=" << rep.gt_count[c] << ")\n";
  }
  std::cout << "mAP=" << rep.map << "\n";
  if (!opt.metrics_csv.empty()) {
    MetricsRow row;
    row.epoch = -1;
    row.split = "test";
    row.map = rep.map;
    write_metrics_csv(opt.metrics_csv, {row}, true);
  }
  return 0;
}

int cmd_ablation(CliOptions& opt) {
  auto train_scenes = load_or_fail(opt.data_train, "train");
  std::vector<Scene> val_scenes;
  if (!opt.data_val.empty()) val_scenes = load_or_fail(opt.data_val, "val");
  auto test_scenes = load_or_fail(opt.data_test, "test");

  AblationConfig cfg;
  cfg.ipn_cfg.d_ling = opt.d_ling;
  cfg.ipn_cfg.hidden = opt.hidden;
  cfg.ipn_cfg.focal_gamma = opt.gamma;
  cfg.ipn_cfg.focal_alpha = opt.alpha;
  cfg.model_cfg.d_model = opt.d_model;
  cfg.model_cfg.heads = opt.heads;
  cfg.model_cfg.num_layers = opt.layers;
  cfg.model_cfg.d_dep = opt.d_dep;
  cfg.model_cfg.d_lay = opt.d_lay;
  cfg.model_cfg.num_classes = opt.gen.num_interaction_classes;
  cfg.model_cfg.focal_gamma = opt.gamma;
  cfg.model_cfg.focal_alpha = opt.alpha;
  cfg.model_cfg.pre_norm = !opt.post_norm;
  infer_dims(train_scenes, cfg.ipn_cfg, cfg.model_cfg);
  cfg.train_cfg = opt.train;
  cfg.num_object_classes = opt.gen.num_object_classes;
  cfg.seeds = opt.seeds;
  cfg.threads = opt.threads;

  if (!opt.sweep.empty()) {
    char axis = 0;
    auto values = parse_sweep(opt.sweep, axis);
    auto rows = axis == 'K'
                    ? sweep_topk(train_scenes, val_scenes, test_scenes, cfg, values)
                    : sweep_layers(train_scenes, val_scenes, test_scenes, cfg, values);
    std::cout << axis << "     mAP\n";
    for (auto [v, map] : rows) std::cout << v << "     " << map << "\n";
    return 0;
  }

  reset_attention_op_count();
  auto rows = run_ablation(train_scenes, val_scenes, test_scenes, cfg);
  std::cout << format_ablation_table(rows);
  return 0;
}

int cmd_gradcheck() {
  bool ok = run_gradcheck_suite(std::cout);
  std::cout << (ok ? "gradcheck: all passed\n" : "gradcheck: FAILED\n");
  return ok ? 0 : 1;
}

int cmd_inspect_scene(const CliOptions& opt) {
  auto scenes = load_or_fail(opt.data, "inspect");
  const Scene* scene = nullptr;
  for (const Scene& s : scenes)
    if (s.scene_id == opt.scene_id) scene = &s;
  if (!scene)
    throw std::invalid_argument("scene id not found: " + std::to_string(opt.scene_id));
  if (!fs::exists(opt.out_dir))
    throw std::invalid_argument("output directory does not exist: " + opt.out_dir);

  IPNConfig probe;
  probe.d_app = scene->instances.empty()
                    ? 1
                    : static_cast<int>(scene->instances[0].feature.size());
  probe.d_ling = 4;
  std::mt19937_64 rng(0);
  IPNParams params = IPNParams::init(probe, opt.gen.num_object_classes, rng);
  auto pairs = build_pairs(*scene, params, probe);
  if (static_cast<int>(pairs.size()) > opt.max_pairs) pairs.resize(opt.max_pairs);
  if (pairs.empty()) {
    std::cout << "scene " << opt.scene_id << " has no candidate pairs\n";
    return 0;
  }

  std::vector<PairIds> ids;
  for (const auto& p : pairs) ids.push_back({p.human_idx, p.object_idx});
  auto dep = dependency_matrix(ids);
  std::cout << "scene " << opt.scene_id << ": " << pairs.size()
            << " proposals; dependency matrix:\n";
  for (const auto& row : dep) {
    for (DependencyLabel l : row) std::cout << static_cast<int>(l) << " ";
    std::cout << "\n";
  }

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const BBox& hb = scene->instances[pairs[i].human_idx].box;
    const BBox& ob = scene->instances[pairs[i].object_idx].box;
    LayoutMap m = layout_map(hb, ob, scene->grid_h, scene->grid_w);
    fs::path img = fs::path(opt.out_dir) /
                   ("scene" + std::to_string(opt.scene_id) + "_proposal" +
                    std::to_string(i) + "_layout.pgm");
    std::ofstream out(img);
    if (!out) throw std::runtime_error("cannot write image: " + img.string());
    out << "P2\n" << m.w << " " << m.h << "\n255\n";
    for (int r = 0; r < m.h; ++r) {
      for (int c = 0; c < m.w; ++c) out << m.at(r, c) * 50 << (c + 1 < m.w ? " " : "");
      out << "\n";
    }
    std::cout << "wrote " << img.string() << "\n";
  }
  return 0;
}

void add_generator_options(CLI::App* sub, CliOptions& opt) {
  sub->add_option("--scenes", opt.gen.num_scenes, "training scenes to generate")
      ->capture_default_str();
  sub->add_option("--val-scenes", opt.val_scenes, "validation scenes")->capture_default_str();
  sub->add_option("--test-scenes", opt.test_scenes, "test scenes")->capture_default_str();
  sub->add_option("--min-instances", opt.gen.min_instances, "min instances per scene")
      ->capture_default_str();
  sub->add_option("--max-instances", opt.gen.max_instances, "max instances per scene")
      ->capture_default_str();
  sub->add_option("--object-classes", opt.gen.num_object_classes, "object classes")
      ->capture_default_str();
  sub->add_option("--interaction-classes", opt.gen.num_interaction_classes,
                  "interaction classes")
      ->capture_default_str();
  sub->add_option("--grid-h", opt.gen.grid_h, "feature grid height")->capture_default_str();
  sub->add_option("--grid-w", opt.gen.grid_w, "feature grid width")->capture_default_str();
  sub->add_option("--d-app", opt.gen.d_app, "appearance feature width")
      ->capture_default_str();
  sub->add_option("--d-grid", opt.gen.d_grid, "grid channel count")->capture_default_str();
  sub->add_option("--feature-noise", opt.gen.feature_noise, "appearance noise stddev")
      ->capture_default_str();
  sub->add_option("--grid-noise", opt.gen.grid_noise, "grid noise stddev")
      ->capture_default_str();
  sub->add_option("--jitter", opt.gen.jitter_sigma, "detection box jitter stddev")
      ->capture_default_str();
  sub->add_option("--near-threshold", opt.gen.near_threshold,
                  "center distance for the near rule")
      ->capture_default_str();
}

void add_model_options(CLI::App* sub, CliOptions& opt) {
  sub->add_option("-K,--topk", opt.train.topk, "proposals kept for phase two")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--mine-budget", opt.train.mine_budget, "pairs sampled for the proposal loss")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("-L,--layers", opt.layers, "decoder layer count")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--d-model", opt.d_model, "model width")->capture_default_str();
  sub->add_option("--heads", opt.heads, "attention heads")->capture_default_str();
  sub->add_option("--d-dep", opt.d_dep, "dependency embedding width")->capture_default_str();
  sub->add_option("--d-lay", opt.d_lay, "layout embedding width")->capture_default_str();
  sub->add_option("--d-ling", opt.d_ling, "linguistic embedding width")
      ->capture_default_str();
  sub->add_option("--hidden", opt.hidden, "interactiveness head hidden width")
      ->capture_default_str();
  sub->add_option("--gamma", opt.gamma, "focal loss gamma")->capture_default_str();
  sub->add_option("--alpha", opt.alpha, "focal loss alpha")->capture_default_str();
  sub->add_flag("--post-norm", opt.post_norm, "use post-norm decoder layers")
      ->capture_default_str();
  sub->add_option("--lr", opt.train.lr, "learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--batch", opt.train.batch, "scenes per optimizer step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--epochs", opt.train.epochs, "training epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--weight-decay", opt.train.weight_decay, "AdamW weight decay")
      ->capture_default_str();
  sub->add_option("--max-neg-ratio", opt.train.max_neg_ratio,
                  "negative:positive cap during mining")
      ->capture_default_str();
  sub->add_option("--cls-weight", opt.train.cls_weight, "classification loss weight")
      ->capture_default_str();
  sub->add_option("--score-floor", opt.train.score_floor, "prediction score floor")
      ->capture_default_str();
  sub->add_option("--variant", opt.variant, "base|hm|tr|tr_ss|tr_sc|stip")
      ->capture_default_str();
  sub->add_option("--interaction-classes", opt.gen.num_interaction_classes,
                  "interaction class count")
      ->capture_default_str();
  sub->add_option("--object-classes", opt.gen.num_object_classes, "object class count")
      ->capture_default_str();
  std::map<std::string, ScoreStrategy> strategies{
      {"product", ScoreStrategy::kProduct},
      {"class-only", ScoreStrategy::kClassOnly},
      {"product-det", ScoreStrategy::kProductDet}};
  sub->add_option("--score-strategy", opt.train.scoring, "product|class-only|product-det")
      ->transform(CLI::CheckedTransformer(strategies, CLI::ignore_case));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-phase human-object interaction detector on synthetic scenes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file (flags take precedence)");
  CliOptions opt;

  CLI::App* gen = app.add_subcommand("gen-data", "generate train/val/test datasets");
  add_generator_options(gen, opt);
  gen->add_option("--seed", opt.seed, "base seed (splits use seed, seed+1, seed+2)")
      ->capture_default_str();
  gen->add_option("-o,--out", opt.out_dir, "output directory")->capture_default_str();

  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_model_options(tr, opt);
  tr->add_option("--data-train", opt.data_train, "training dataset file")->required();
  tr->add_option("--data-val", opt.data_val, "validation dataset file");
  tr->add_option("--seed", opt.seed, "training seed")->capture_default_str();
  tr->add_option("--checkpoint", opt.checkpoint, "checkpoint prefix")->capture_default_str();
  tr->add_option("--metrics-csv", opt.metrics_csv, "metrics CSV path (appended)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_model_options(ev, opt);
  ev->add_option("--data-test", opt.data_test, "test dataset file")->required();
  ev->add_option("--checkpoint", opt.checkpoint, "checkpoint prefix")->capture_default_str();
  ev->add_option("--seed", opt.seed, "init seed (overwritten by the checkpoint)")
      ->capture_default_str();
  ev->add_option("--metrics-csv", opt.metrics_csv, "metrics CSV path (appended)");
  ev->add_option("--threads", opt.threads, "evaluation fan-out")->capture_default_str();

  CLI::App* ab = app.add_subcommand("ablation", "run the component ablation grid");
  add_model_options(ab, opt);
  ab->add_option("--data-train", opt.data_train, "training dataset file")->required();
  ab->add_option("--data-val", opt.data_val, "validation dataset file");
  ab->add_option("--data-test", opt.data_test, "test dataset file")->required();
  ab->add_option("--seeds", opt.seeds, "seeds for repeated runs")->capture_default_str();
  ab->add_option("--sweep", opt.sweep, "K=8,16,32 or L=0..4 (full model only)");
  ab->add_option("--threads", opt.threads, "parallel training jobs")->capture_default_str();

  app.add_subcommand("gradcheck", "run the finite-difference suite");

  CLI::App* in = app.add_subcommand("inspect-scene",
                                    "dump dependency matrix and layout maps for one scene");
  in->add_option("--data", opt.data, "dataset file")->required();
  in->add_option("--scene", opt.scene_id, "scene id")->capture_default_str();
  in->add_option("-o,--out", opt.out_dir, "output directory for layout images")
      ->capture_default_str();
  in->add_option("--max-pairs", opt.max_pairs, "cap on inspected proposals")
      ->capture_default_str();
  in->add_option("--object-classes", opt.gen.num_object_classes, "object class count")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    print_banner(*sub);
    const std::string name = sub->get_name();
    if (name == "gen-data") return cmd_gen_data(opt);
    if (name == "train") return cmd_train(opt);
    if (name == "eval") return cmd_eval(opt);
    if (name == "ablation") return cmd_ablation(opt);
    if (name == "gradcheck") return cmd_gradcheck();
    if (name == "inspect-scene") return cmd_inspect_scene(opt);
    std::cerr << "unknown subcommand\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
