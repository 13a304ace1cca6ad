#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "stip/geometry.hpp"
#include "stip/tensor.hpp"

namespace stip {

struct Instance {
  BBox box;
  int class_id = 0;
  bool is_human = false;
  std::vector<double> feature;  // length d_app
  double det_score = 1.0;

  bool operator==(const Instance&) const = default;
};

struct GtInteraction {
  BBox human_box;
  BBox object_box;
  int object_class = 0;
  std::set<int> interaction_classes;

  bool operator==(const GtInteraction&) const = default;
};

struct Scene {
  int scene_id = 0;
  std::vector<Instance> instances;
  std::vector<GtInteraction> gt;
  int grid_h = 0, grid_w = 0;
  ad::Tensor feature_grid;  // [grid_h*grid_w x d_grid], row-major over cells

  int num_humans() const;
};

bool operator==(const Scene& a, const Scene& b);

struct GeneratorConfig {
  int num_scenes = 500;
  int min_instances = 4;
  int max_instances = 7;
  int num_object_classes = 6;       // class 0 is person, highest class is "context"
  int num_interaction_classes = 10;
  int grid_h = 8;
  int grid_w = 8;
  int d_app = 16;
  int d_grid = 8;
  double feature_noise = 0.3;
  double grid_noise = 0.05;
  double jitter_sigma = 0.01;       // detected boxes = gt boxes + this jitter
  double near_threshold = 0.4;      // center distance bound for the "near" rule

  int person_class() const { return 0; }
  int context_class() const { return num_object_classes - 1; }
  void validate() const;  // throws std::invalid_argument
};

// The deterministic labeling rules applied to clean (ground-truth) geometry.
// Interaction classes, given C = num_interaction_classes >= 10:
//   0/1  human and object boxes overlap          (keyed on object class parity)
//   2/3  disjoint but centers closer than near_threshold
//   4/5  contextual: the human participates in >= 2 interactive pairs
//   6/7  a context-class instance's center lies inside the pair's union box
//   8    the object is itself a person
//   9    overlap exceeds half of the smaller box's area
std::vector<GtInteraction> derive_interactions(const std::vector<int>& class_ids,
                                               const std::vector<BBox>& boxes,
                                               const GeneratorConfig& cfg);

std::vector<Scene> generate_dataset(const GeneratorConfig& cfg, uint64_t seed);

void save_scenes(const std::vector<Scene>& scenes, const std::string& path);
std::vector<Scene> load_scenes(const std::string& path);

}  // namespace stip
