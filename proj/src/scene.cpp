#include "stip/scene.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace stip {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

BBox jitter_box(const BBox& b, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return b;
  std::normal_distribution<double> d(0.0, sigma);
  double x1 = clamp01(b.x1 + d(rng));
  double y1 = clamp01(b.y1 + d(rng));
  double x2 = clamp01(b.x2 + d(rng));
  double y2 = clamp01(b.y2 + d(rng));
  if (x2 <= x1 + 1e-4) x2 = std::min(1.0, x1 + 1e-4);
  if (y2 <= y1 + 1e-4) y2 = std::min(1.0, y1 + 1e-4);
  return BBox{x1, y1, x2, y2};
}

[[noreturn]] void parse_fail(const std::string& path, int record, const std::string& what) {
  throw std::runtime_error("parse error in " + path + " (record " + std::to_string(record) +
                           "): " + what);
}

}  // namespace

int Scene::num_humans() const {
  int n = 0;
  for (const Instance& inst : instances) n += inst.is_human ? 1 : 0;
  return n;
}

bool operator==(const Scene& a, const Scene& b) {
  if (a.scene_id != b.scene_id || a.instances != b.instances || a.gt != b.gt ||
      a.grid_h != b.grid_h || a.grid_w != b.grid_w)
    return false;
  if (a.feature_grid.shape != b.feature_grid.shape) return false;
  if (!a.feature_grid.data || !b.feature_grid.data)
    return !a.feature_grid.data && !b.feature_grid.data;
  return *a.feature_grid.data == *b.feature_grid.data;
}

void GeneratorConfig::validate() const {
  if (num_scenes <= 0) throw std::invalid_argument("generator: num_scenes must be positive");
  if (min_instances < 2 || max_instances < min_instances)
    throw std::invalid_argument("generator: invalid instance count range");
  if (num_object_classes < 2)
    throw std::invalid_argument("generator: need at least two object classes");
  if (num_interaction_classes < 10)
    throw std::invalid_argument("generator: rule set requires >= 10 interaction classes");
  if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("generator: empty grid");
  if (d_app < 1) throw std::invalid_argument("generator: d_app must be positive");
  if (d_grid < num_object_classes)
    throw std::invalid_argument("generator: d_grid must cover all object classes");
}

std::vector<GtInteraction> derive_interactions(const std::vector<int>& class_ids,
                                               const std::vector<BBox>& boxes,
                                               const GeneratorConfig& cfg) {
  if (class_ids.size() != boxes.size())
    throw std::invalid_argument("derive_interactions: class/box count mismatch");
  const int n = static_cast<int>(boxes.size());

  struct Pair {
    int h, o;
    bool overlap;
  };
  std::vector<Pair> pairs;
  std::vector<int> human_pair_count(n, 0);
  for (int h = 0; h < n; ++h) {
    if (class_ids[h] != cfg.person_class()) continue;
    for (int o = 0; o < n; ++o) {
      if (o == h) continue;
      double inter = intersection_area(boxes[h], boxes[o]);
      double dx = boxes[h].cx() - boxes[o].cx();
      double dy = boxes[h].cy() - boxes[o].cy();
      bool overlap = inter > 0.0;
      bool near = std::sqrt(dx * dx + dy * dy) < cfg.near_threshold;
      if (overlap || near) {
        pairs.push_back({h, o, overlap});
        ++human_pair_count[h];
      }
    }
  }

  std::vector<GtInteraction> out;
  for (const Pair& p : pairs) {
    GtInteraction gi;
    gi.human_box = boxes[p.h];
    gi.object_box = boxes[p.o];
    gi.object_class = class_ids[p.o];
    int parity = class_ids[p.o] % 2;
    gi.interaction_classes.insert(p.overlap ? parity : 2 + parity);
    if (human_pair_count[p.h] >= 2) gi.interaction_classes.insert(4 + parity);
    BBox ub = union_box(boxes[p.h], boxes[p.o]);
    for (int k = 0; k < n; ++k) {
      if (k == p.h || k == p.o) continue;
      if (class_ids[k] == cfg.context_class() && ub.contains(boxes[k].cx(), boxes[k].cy())) {
        gi.interaction_classes.insert(6 + parity);
        break;
      }
    }
    if (class_ids[p.o] == cfg.person_class()) gi.interaction_classes.insert(8);
    double inter = intersection_area(boxes[p.h], boxes[p.o]);
    double smaller = std::min(boxes[p.h].area(), boxes[p.o].area());
    if (smaller > 0.0 && inter / smaller > 0.5) gi.interaction_classes.insert(9);
    out.push_back(std::move(gi));
  }
  return out;
}

std::vector<Scene> generate_dataset(const GeneratorConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 proto_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::vector<double>> prototypes(cfg.num_object_classes);
  {
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& p : prototypes) {
      p.resize(cfg.d_app);
      for (double& v : p) v = d(proto_rng);
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(cfg.min_instances, cfg.max_instances);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_object_classes - 1);
  std::uniform_real_distribution<double> center_dist(0.15, 0.85);
  std::uniform_real_distribution<double> size_dist(0.1, 0.35);
  std::uniform_real_distribution<double> score_dist(0.7, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Scene> scenes;
  scenes.reserve(cfg.num_scenes);
  for (int s = 0; s < cfg.num_scenes; ++s) {
    Scene scene;
    scene.scene_id = s;
    scene.grid_h = cfg.grid_h;
    scene.grid_w = cfg.grid_w;

    const int n = count_dist(rng);
    std::vector<int> class_ids(n);
    std::vector<BBox> clean(n);
    class_ids[0] = cfg.person_class();  // every scene has a human
    for (int i = 1; i < n; ++i) class_ids[i] = class_dist(rng);
    for (int i = 0; i < n; ++i) {
      double cx = center_dist(rng), cy = center_dist(rng);
      double w = size_dist(rng), h = size_dist(rng);
      clean[i] = BBox{clamp01(cx - w / 2), clamp01(cy - h / 2), clamp01(cx + w / 2),
                      clamp01(cy + h / 2)};
    }

    scene.gt = derive_interactions(class_ids, clean, cfg);

    for (int i = 0; i < n; ++i) {
      Instance inst;
      inst.box = jitter_box(clean[i], cfg.jitter_sigma, rng);
      inst.class_id = class_ids[i];
      inst.is_human = class_ids[i] == cfg.person_class();
      inst.det_score = score_dist(rng);
      inst.feature.resize(cfg.d_app);
      for (int d = 0; d < cfg.d_app; ++d)
        inst.feature[d] = prototypes[class_ids[i]][d] + cfg.feature_noise * noise(rng);
      scene.instances.push_back(std::move(inst));
    }

    scene.feature_grid = ad::Tensor::zeros({cfg.grid_h * cfg.grid_w, cfg.d_grid});
    for (int r = 0; r < cfg.grid_h; ++r) {
      for (int c = 0; c < cfg.grid_w; ++c) {
        double py = (r + 0.5) / cfg.grid_h;
        double px = (c + 0.5) / cfg.grid_w;
        int cell = r * cfg.grid_w + c;
        for (const Instance& inst : scene.instances) {
          if (inst.box.contains(px, py))
            scene.feature_grid.at(cell, inst.class_id) += 1.0;
        }
        for (int d = 0; d < cfg.d_grid; ++d)
          scene.feature_grid.at(cell, d) += cfg.grid_noise * noise(rng);
      }
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

void save_scenes(const std::vector<Scene>& scenes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << std::setprecision(17);
  out << "dataset " << scenes.size() << "\n";
  for (const Scene& s : scenes) {
    int d_grid = s.feature_grid.data ? s.feature_grid.cols() : 0;
    out << "scene " << s.scene_id << " " << s.instances.size() << " " << s.gt.size() << " "
        << s.grid_h << " " << s.grid_w << " " << d_grid << "\n";
    for (const Instance& inst : s.instances) {
      out << "inst " << inst.class_id << " " << inst.box.x1 << " " << inst.box.y1 << " "
          << inst.box.x2 << " " << inst.box.y2 << " " << inst.det_score << " "
          << inst.feature.size();
      for (double f : inst.feature) out << " " << f;
      out << "\n";
    }
    for (const GtInteraction& g : s.gt) {
      out << "gt " << g.human_box.x1 << " " << g.human_box.y1 << " " << g.human_box.x2 << " "
          << g.human_box.y2 << " " << g.object_box.x1 << " " << g.object_box.y1 << " "
          << g.object_box.x2 << " " << g.object_box.y2 << " " << g.object_class << " "
          << g.interaction_classes.size();
      for (int c : g.interaction_classes) out << " " << c;
      out << "\n";
    }
    out << "grid";
    if (s.feature_grid.data)
      for (double v : *s.feature_grid.data) out << " " << v;
    out << "\nend\n";
  }
  if (!out) throw std::runtime_error("write failure: " + path);
}

std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::string tok;
  std::size_t count = 0;
  if (!(in >> tok) || tok != "dataset" || !(in >> count))
    parse_fail(path, 0, "missing dataset header");

  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    int record = static_cast<int>(s) + 1;
    Scene scene;
    std::size_t n_inst = 0, n_gt = 0;
    int d_grid = 0;
    if (!(in >> tok) || tok != "scene" || !(in >> scene.scene_id >> n_inst >> n_gt >>
                                            scene.grid_h >> scene.grid_w >> d_grid))
      parse_fail(path, record, "bad scene header");
    for (std::size_t i = 0; i < n_inst; ++i) {
      Instance inst;
      std::size_t fdim = 0;
      if (!(in >> tok) || tok != "inst" ||
          !(in >> inst.class_id >> inst.box.x1 >> inst.box.y1 >> inst.box.x2 >> inst.box.y2 >>
            inst.det_score >> fdim))
        parse_fail(path, record, "bad instance record");
      inst.is_human = inst.class_id == 0;
      inst.feature.resize(fdim);
      for (double& f : inst.feature)
        if (!(in >> f)) parse_fail(path, record, "truncated instance feature");
      scene.instances.push_back(std::move(inst));
    }
    for (std::size_t i = 0; i < n_gt; ++i) {
      GtInteraction g;
      std::size_t nc = 0;
      if (!(in >> tok) || tok != "gt" ||
          !(in >> g.human_box.x1 >> g.human_box.y1 >> g.human_box.x2 >> g.human_box.y2 >>
            g.object_box.x1 >> g.object_box.y1 >> g.object_box.x2 >> g.object_box.y2 >>
            g.object_class >> nc))
        parse_fail(path, record, "bad gt record");
      for (std::size_t c = 0; c < nc; ++c) {
        int cls = 0;
        if (!(in >> cls)) parse_fail(path, record, "truncated gt class list");
        g.interaction_classes.insert(cls);
      }
      scene.gt.push_back(std::move(g));
    }
    if (!(in >> tok) || tok != "grid") parse_fail(path, record, "missing grid block");
    int cells = scene.grid_h * scene.grid_w;
    if (d_grid > 0) {
      scene.feature_grid = ad::Tensor::zeros({cells, d_grid});
      for (int i = 0; i < cells * d_grid; ++i)
        if (!(in >> (*scene.feature_grid.data)[i]))
          parse_fail(path, record, "truncated grid values");
    }
    if (!(in >> tok) || tok != "end") parse_fail(path, record, "missing scene terminator");
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace stip
