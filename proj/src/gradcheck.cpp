#include "stip/gradcheck.hpp"

#include <cmath>
#include <ostream>

#include "stip/model.hpp"
#include "stip/proposal.hpp"
#include "stip/scene.hpp"
#include "stip/structure.hpp"
#include "stip/train.hpp"

namespace stip {

namespace {

using ad::Tape;
using ad::Tensor;

// Relative error with an absolute floor: near-zero gradients are compared
// against the floor instead, so finite-difference roundoff on O(1e-6)
// gradients does not register as disagreement while genuinely wrong values
// of that size still would.
double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(std::fabs(a) + std::fabs(b), 1e-4);
}

// Random weights used to turn a matrix output into a scalar with
// non-degenerate gradients everywhere.
Tensor weigh(Tape* tape, const Tensor& x, const Tensor& w) {
  return ad::sum_all(tape, ad::mul(tape, x, w));
}

}  // namespace

GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor(Tape*)>& loss_fn,
                                const std::vector<Tensor*>& inputs, double step,
                                double tol) {
  GradCheckResult res;
  res.name = name;
  for (Tensor* t : inputs) t->zero_grad();
  Tape tape;
  Tensor loss = loss_fn(&tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Tensor* t : inputs) analytic.push_back(*t->grad);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor* t = inputs[k];
    for (int i = 0; i < t->numel(); ++i) {
      double saved = (*t->data)[i];
      (*t->data)[i] = saved + step;
      double lp = loss_fn(nullptr).scalar();
      (*t->data)[i] = saved - step;
      double lm = loss_fn(nullptr).scalar();
      (*t->data)[i] = saved;
      double fd = (lp - lm) / (2.0 * step);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(fd, analytic[k][i]));
    }
  }
  res.passed = res.max_rel_err <= tol;
  return res;
}

bool run_gradcheck_suite(std::ostream& out) {
  std::mt19937_64 rng(1234);
  std::vector<GradCheckResult> results;
  auto run = [&](GradCheckResult r) {
    out << (r.passed ? "PASS" : "FAIL") << "  " << r.name
        << "  max_rel_err=" << r.max_rel_err << "\n";
    results.push_back(std::move(r));
  };

  {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 2}, rng, 1.0);
    run(check_gradients("matmul", [&](Tape* t) { return weigh(t, ad::matmul(t, a, b), w); },
                        {&a, &b}));
  }
  {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({5, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 5}, rng, 1.0);
    run(check_gradients("matmul_nt",
                        [&](Tape* t) { return weigh(t, ad::matmul_nt(t, a, b), w); },
                        {&a, &b}));
  }
  {
    Tensor x = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 5}, rng, 1.0);
    run(check_gradients("softmax_rows",
                        [&](Tape* t) { return weigh(t, ad::softmax_rows(t, x), w); }, {&x}));
  }
  {
    Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
    Tensor w = Tensor::randn({4, 3}, rng, 1.0);
    run(check_gradients("sigmoid", [&](Tape* t) { return weigh(t, ad::sigmoid(t, x), w); },
                        {&x}));
  }
  {
    // Inputs bounded away from the kink.
    Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
    for (double& v : *x.data)
      if (std::fabs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
    Tensor w = Tensor::randn({4, 3}, rng, 1.0);
    run(check_gradients("relu", [&](Tape* t) { return weigh(t, ad::relu(t, x), w); }, {&x}));
  }
  {
    Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
    Tensor g = Tensor::randn({6}, rng, 0.3, true);
    Tensor b = Tensor::randn({6}, rng, 0.3, true);
    for (double& v : *g.data) v += 1.0;
    Tensor w = Tensor::randn({3, 6}, rng, 1.0);
    run(check_gradients("layer_norm",
                        [&](Tape* t) { return weigh(t, ad::layer_norm(t, x, g, b), w); },
                        {&x, &g, &b}));
  }
  {
    Tensor a = Tensor::randn({3, 2}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 6}, rng, 1.0);
    run(check_gradients("concat_cols",
                        [&](Tape* t) { return weigh(t, ad::concat_cols(t, a, b), w); },
                        {&a, &b}));
  }
  {
    Tensor x = Tensor::randn({5, 3}, rng, 1.0, true);
    Tensor w = Tensor::randn({2, 3}, rng, 1.0);
    run(check_gradients("slice_rows",
                        [&](Tape* t) { return weigh(t, ad::slice_rows(t, x, 1, 2), w); },
                        {&x}));
  }
  {
    Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 2}, rng, 1.0);
    run(check_gradients("slice_cols",
                        [&](Tape* t) { return weigh(t, ad::slice_cols(t, x, 2, 2), w); },
                        {&x}));
  }
  {
    Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
    Tensor w = Tensor::randn({5, 3}, rng, 1.0);
    std::vector<int> idx = {2, 0, 3, 2, 1};  // repeated row exercises accumulation
    run(check_gradients("gather_rows",
                        [&](Tape* t) { return weigh(t, ad::gather_rows(t, x, idx), w); },
                        {&x}));
  }
  {
    Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 4}, rng, 1.0);
    run(check_gradients("add_bias",
                        [&](Tape* t) { return weigh(t, ad::add_bias(t, x, b), w); },
                        {&x, &b}));
  }
  {
    Tensor a = Tensor::randn({2, 3}, rng, 1.0, true);
    Tensor b = Tensor::randn({2, 3}, rng, 1.0, true);
    Tensor w = Tensor::randn({2, 3}, rng, 1.0);
    run(check_gradients("add+mul+scale",
                        [&](Tape* t) {
                          return weigh(t, ad::scale(t, ad::mul(t, ad::add(t, a, b), a), 0.7),
                                       w);
                        },
                        {&a, &b}));
  }
  {
    ad::Mlp2Params p = ad::Mlp2Params::init(4, 6, 3, rng);
    Tensor x = Tensor::randn({5, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({5, 3}, rng, 1.0);
    run(check_gradients("mlp2", [&](Tape* t) { return weigh(t, ad::mlp2(t, x, p), w); },
                        {&x, &p.w1, &p.b1, &p.w2, &p.b2}));
  }
  {
    Tensor probs = Tensor::zeros({4, 2}, true);
    Tensor targets = Tensor::zeros({4, 2});
    std::uniform_real_distribution<double> pd(0.05, 0.95);
    for (double& v : *probs.data) v = pd(rng);
    for (double& v : *targets.data) v = rng() % 2;
    run(check_gradients("focal_loss(probs)",
                        [&](Tape* t) { return ad::focal_loss_sum(t, probs, targets, 2.0, 0.25); },
                        {&probs}));
  }
  {
    // Sigmoid + focal composite, the shape of both training objectives.
    Tensor logits = Tensor::randn({5, 1}, rng, 1.5, true);
    Tensor targets = Tensor::zeros({5, 1});
    for (double& v : *targets.data) v = rng() % 2;
    run(check_gradients("sigmoid+focal",
                        [&](Tape* t) {
                          return ad::focal_loss_sum(t, ad::sigmoid(t, logits), targets, 2.0,
                                                    0.25);
                        },
                        {&logits}));
  }

  // Attention modules at toy sizes.
  ModelConfig acfg;
  acfg.d_model = 8;
  acfg.heads = 1;
  acfg.num_layers = 1;
  acfg.d_dep = 4;
  acfg.d_lay = 4;
  acfg.d_grid = 3;
  acfg.num_classes = 3;
  acfg.pair_feature_width = 10;
  {
    LayerParams lp = LayerParams::init(acfg, rng);
    Tensor q = Tensor::randn({3, 8}, rng, 1.0, true);
    Tensor k = Tensor::randn({4, 8}, rng, 1.0, true);
    Tensor v = Tensor::randn({4, 8}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 8}, rng, 1.0);
    run(check_gradients(
        "vanilla_attention",
        [&](Tape* t) { return weigh(t, vanilla_attention(t, q, k, v, lp.self_attn, 1), w); },
        {&q, &k, &v, &lp.self_attn.wq, &lp.self_attn.wk, &lp.self_attn.wv,
         &lp.self_attn.wo}));
  }
  {
    LayerParams lp = LayerParams::init(acfg, rng);
    Tensor q = Tensor::randn({3, 8}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 8}, rng, 1.0);
    std::vector<PairIds> ids = {{0, 1}, {0, 2}, {2, 1}};
    auto dep = dependency_matrix(ids);
    run(check_gradients(
        "structure_self_attention",
        [&](Tape* t) { return weigh(t, structure_self_attention(t, q, dep, lp, 1), w); },
        {&q, &lp.self_attn.wq, &lp.self_attn.wk, &lp.self_attn.wv, &lp.self_attn.wo,
         &lp.e_dep, &lp.psi.w1, &lp.psi.b1, &lp.psi.w2, &lp.psi.b2}));
  }
  {
    LayerParams lp = LayerParams::init(acfg, rng);
    Tensor q = Tensor::randn({2, 8}, rng, 1.0, true);
    Tensor grid = Tensor::randn({16, 8}, rng, 1.0, true);  // already projected
    Tensor pos = position_encoding(4, 4, 8);
    LayoutMap la = layout_map({0.1, 0.1, 0.5, 0.5}, {0.4, 0.4, 0.9, 0.9}, 4, 4);
    LayoutMap lb = layout_map({0.0, 0.0, 0.3, 0.9}, {0.6, 0.1, 0.9, 0.4}, 4, 4);
    std::vector<const LayoutMap*> lays = {&la, &lb};
    Tensor w = Tensor::randn({2, 8}, rng, 1.0);
    run(check_gradients(
        "structure_cross_attention",
        [&](Tape* t) {
          return weigh(t, structure_cross_attention(t, q, grid, pos, lays, lp, 1), w);
        },
        {&q, &grid, &lp.cross_attn.wq, &lp.cross_attn.wk, &lp.cross_attn.wv,
         &lp.cross_attn.wo, &lp.e_lay, &lp.phi.w1, &lp.phi.b1, &lp.phi.w2, &lp.phi.b2}));
  }

  // Full 1-layer model, every parameter group, through both losses.
  {
    GeneratorConfig gcfg;
    gcfg.num_scenes = 1;
    gcfg.min_instances = 3;
    gcfg.max_instances = 3;
    gcfg.grid_h = 4;
    gcfg.grid_w = 4;
    gcfg.d_app = 4;
    gcfg.d_grid = 6;
    gcfg.jitter_sigma = 0.02;
    Scene scene = generate_dataset(gcfg, 77)[0];

    IPNConfig icfg;
    icfg.d_app = 4;
    icfg.d_ling = 8;
    icfg.hidden = 6;
    ModelConfig mcfg = acfg;
    mcfg.d_grid = 6;
    mcfg.pair_feature_width = icfg.feature_width();
    VariantFlags flags{true, true, true};
    ModelBundle bundle = ModelBundle::init(icfg, mcfg, flags, gcfg.num_object_classes, 42);

    auto loss_fn = [&](Tape* t) -> Tensor {
      std::vector<CandidatePair> pairs = build_pairs(scene, bundle.ipn, bundle.ipn_cfg);
      Tensor scores = interactiveness_forward(t, pairs, bundle.ipn, bundle.ipn_cfg);
      label_pairs(pairs, scene, scene.gt);
      std::vector<int> sampled(pairs.size());
      for (std::size_t i = 0; i < pairs.size(); ++i) sampled[i] = static_cast<int>(i);
      Tensor lp = proposal_loss(t, scores, pairs, sampled, 2.0, 0.25);
      std::vector<int> proposals = topk_select(pairs, 3);
      Tensor feats = pair_feature_matrix(t, pairs, proposals, bundle.ipn, bundle.ipn_cfg);
      std::vector<PairIds> ids;
      std::vector<LayoutMap> lays;
      std::vector<const LayoutMap*> lptr;
      for (int idx : proposals) {
        ids.push_back({pairs[idx].human_idx, pairs[idx].object_idx});
        lays.push_back(layout_map(scene.instances[pairs[idx].human_idx].box,
                                  scene.instances[pairs[idx].object_idx].box, scene.grid_h,
                                  scene.grid_w));
      }
      for (const LayoutMap& m : lays) lptr.push_back(&m);
      auto dep = dependency_matrix(ids);
      ModelOutput mo = model_forward(t, feats, dep, scene.feature_grid, scene.grid_h,
                                     scene.grid_w, lptr, bundle.model, flags, mcfg);
      Tensor targets = Tensor::zeros({static_cast<int>(proposals.size()), mcfg.num_classes});
      for (std::size_t i = 0; i < proposals.size(); ++i)
        for (int c : pairs[proposals[i]].gt_interaction_classes)
          if (c < mcfg.num_classes) targets.at(static_cast<int>(i), c) = 1.0;
      Tensor lc = classification_loss(t, mo.probs, targets, 2.0, 0.25);
      return total_loss(t, lp, lc);
    };

    std::vector<Tensor*> all;
    for (auto& [name, tensor] : bundle.named_params()) all.push_back(tensor);
    run(check_gradients("full_model_1layer", loss_fn, all));
  }

  bool all_passed = true;
  for (const GradCheckResult& r : results) all_passed = all_passed && r.passed;
  out << (all_passed ? "gradcheck: all checks passed" : "gradcheck: FAILURES present")
      << "\n";
  return all_passed;
}

}  // namespace stip
