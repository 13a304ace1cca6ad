#include "stip/model.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace stip {

namespace {

using ad::Tensor;

std::atomic<int64_t> g_attention_ops{0};

// Shared per-query attention core. `keys` yields the [n x d] key matrix for
// query row i; vanilla attention passes the same matrix for every query,
// structured attention builds a fresh one.
Tensor attention_core(ad::Tape* tape, const Tensor& qp,
                      const std::function<Tensor(int)>& keys, const Tensor& vp,
                      int heads) {
  const int m = qp.rows(), d = qp.cols();
  if (d % heads != 0) throw std::invalid_argument("attention: d_model % heads != 0");
  const int dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> rows;
  rows.reserve(m);
  for (int i = 0; i < m; ++i) {
    Tensor qi = ad::slice_rows(tape, qp, i, 1);
    Tensor ki = keys(i);
    Tensor oi;
    for (int h = 0; h < heads; ++h) {
      Tensor qh = heads == 1 ? qi : ad::slice_cols(tape, qi, h * dk, dk);
      Tensor kh = heads == 1 ? ki : ad::slice_cols(tape, ki, h * dk, dk);
      Tensor vh = heads == 1 ? vp : ad::slice_cols(tape, vp, h * dk, dk);
      Tensor e = ad::scale(tape, ad::matmul_nt(tape, qh, kh), inv_sqrt);
      Tensor alpha = ad::softmax_rows(tape, e);
      Tensor oh = ad::matmul(tape, alpha, vh);
      oi = (h == 0) ? oh : ad::concat_cols(tape, oi, oh);
    }
    rows.push_back(oi);
  }
  return ad::concat_rows(tape, rows);
}

std::vector<int> dep_row(const std::vector<std::vector<DependencyLabel>>& dep, int i) {
  std::vector<int> out(dep[i].size());
  for (std::size_t j = 0; j < dep[i].size(); ++j) out[j] = static_cast<int>(dep[i][j]);
  return out;
}

}  // namespace

void VariantFlags::validate() const {
  if ((structured_self || structured_cross) && !use_transformer)
    throw std::invalid_argument("structured attention requires use_transformer");
}

void ModelConfig::validate() const {
  if (d_model < 1 || num_layers < 0 || num_classes < 1 || pair_feature_width < 1)
    throw std::invalid_argument("model config: invalid dimension");
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("model config: d_model must divide into heads");
  if (d_model % 4 != 0)
    throw std::invalid_argument("model config: d_model must be divisible by 4");
}

LayerNormParams LayerNormParams::init(int d) {
  LayerNormParams p;
  p.gain = Tensor::full({d}, 1.0, true);
  p.bias = Tensor::zeros({d}, true);
  return p;
}

AttentionProj AttentionProj::init(int d, std::mt19937_64& rng) {
  AttentionProj p;
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  p.wq = Tensor::randn({d, d}, rng, s, true);
  p.wk = Tensor::randn({d, d}, rng, s, true);
  p.wv = Tensor::randn({d, d}, rng, s, true);
  p.wo = Tensor::randn({d, d}, rng, s, true);
  return p;
}

LayerParams LayerParams::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  LayerParams lp;
  lp.self_attn = AttentionProj::init(cfg.d_model, rng);
  lp.cross_attn = AttentionProj::init(cfg.d_model, rng);
  lp.e_dep = Tensor::randn({6, cfg.d_dep}, rng, 0.1, true);
  lp.e_lay = Tensor::randn({5, cfg.d_lay}, rng, 0.1, true);
  lp.psi = ad::Mlp2Params::init(cfg.d_model + cfg.d_dep, cfg.d_model, cfg.d_model, rng);
  lp.phi = ad::Mlp2Params::init(cfg.d_model + cfg.d_lay, cfg.d_model, cfg.d_model, rng);
  // Damp the structural key terms at init so structured attention starts close
  // to its vanilla counterpart and learns to use the encodings gradually.
  for (double& v : *lp.psi.w2.data) v *= 0.3;
  for (double& v : *lp.phi.w2.data) v *= 0.3;
  lp.ffn = ad::Mlp2Params::init(cfg.d_model, cfg.ffn(), cfg.d_model, rng);
  lp.ln_self = LayerNormParams::init(cfg.d_model);
  lp.ln_cross = LayerNormParams::init(cfg.d_model);
  lp.ln_ffn = LayerNormParams::init(cfg.d_model);
  return lp;
}

void LayerParams::collect(const std::string& prefix,
                          std::vector<std::pair<std::string, ad::Tensor*>>& out) {
  auto proj = [&](const std::string& name, AttentionProj& p) {
    out.emplace_back(prefix + "." + name + ".wq", &p.wq);
    out.emplace_back(prefix + "." + name + ".wk", &p.wk);
    out.emplace_back(prefix + "." + name + ".wv", &p.wv);
    out.emplace_back(prefix + "." + name + ".wo", &p.wo);
  };
  proj("self", self_attn);
  proj("cross", cross_attn);
  out.emplace_back(prefix + ".e_dep", &e_dep);
  out.emplace_back(prefix + ".e_lay", &e_lay);
  psi.collect(prefix + ".psi", out);
  phi.collect(prefix + ".phi", out);
  ffn.collect(prefix + ".ffn", out);
  out.emplace_back(prefix + ".ln_self.gain", &ln_self.gain);
  out.emplace_back(prefix + ".ln_self.bias", &ln_self.bias);
  out.emplace_back(prefix + ".ln_cross.gain", &ln_cross.gain);
  out.emplace_back(prefix + ".ln_cross.bias", &ln_cross.bias);
  out.emplace_back(prefix + ".ln_ffn.gain", &ln_ffn.gain);
  out.emplace_back(prefix + ".ln_ffn.bias", &ln_ffn.bias);
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ModelParams mp;
  double s_in = 1.0 / std::sqrt(static_cast<double>(cfg.pair_feature_width));
  mp.w_in = Tensor::randn({cfg.pair_feature_width, cfg.d_model}, rng, s_in, true);
  mp.b_in = Tensor::zeros({cfg.d_model}, true);
  double s_g = 1.0 / std::sqrt(static_cast<double>(cfg.d_grid));
  mp.w_grid = Tensor::randn({cfg.d_grid, cfg.d_model}, rng, s_g, true);
  mp.b_grid = Tensor::zeros({cfg.d_model}, true);
  for (int l = 0; l < cfg.num_layers; ++l) mp.layers.push_back(LayerParams::init(cfg, rng));
  mp.final_ln = LayerNormParams::init(cfg.d_model);
  mp.classifier = ad::Mlp2Params::init(cfg.d_model, cfg.d_model, cfg.num_classes, rng);
  return mp;
}

void ModelParams::collect(std::vector<std::pair<std::string, ad::Tensor*>>& out) {
  out.emplace_back("model.w_in", &w_in);
  out.emplace_back("model.b_in", &b_in);
  out.emplace_back("model.w_grid", &w_grid);
  out.emplace_back("model.b_grid", &b_grid);
  for (std::size_t l = 0; l < layers.size(); ++l)
    layers[l].collect("model.layer" + std::to_string(l), out);
  out.emplace_back("model.final_ln.gain", &final_ln.gain);
  out.emplace_back("model.final_ln.bias", &final_ln.bias);
  classifier.collect("model.classifier", out);
}

int64_t attention_op_count() { return g_attention_ops.load(); }
void reset_attention_op_count() { g_attention_ops.store(0); }

Tensor vanilla_attention(ad::Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v,
                         const AttentionProj& p, int heads) {
  ++g_attention_ops;
  Tensor qp = ad::matmul(tape, q, p.wq);
  Tensor kp = ad::matmul(tape, k, p.wk);
  Tensor vp = ad::matmul(tape, v, p.wv);
  Tensor out = attention_core(tape, qp, [&](int) { return kp; }, vp, heads);
  return ad::matmul(tape, out, p.wo);
}

Tensor structure_self_attention(ad::Tape* tape, const Tensor& q,
                                const std::vector<std::vector<DependencyLabel>>& dep,
                                const LayerParams& lp, int heads) {
  if (dep.size() != static_cast<std::size_t>(q.rows()))
    throw std::invalid_argument("structure_self_attention: dep size mismatch");
  ++g_attention_ops;
  Tensor qp = ad::matmul(tape, q, lp.self_attn.wq);
  Tensor k_base = ad::matmul(tape, q, lp.self_attn.wk);
  Tensor vp = ad::matmul(tape, q, lp.self_attn.wv);
  auto keys = [&](int i) {
    Tensor dep_emb = ad::gather_rows(tape, lp.e_dep, dep_row(dep, i));
    Tensor psi_out = ad::mlp2(tape, ad::concat_cols(tape, q, dep_emb), lp.psi);
    return ad::add(tape, k_base, psi_out);
  };
  Tensor out = attention_core(tape, qp, keys, vp, heads);
  return ad::matmul(tape, out, lp.self_attn.wo);
}

Tensor structure_cross_attention(ad::Tape* tape, const Tensor& q, const Tensor& grid_proj,
                                 const Tensor& pos,
                                 const std::vector<const LayoutMap*>& layouts,
                                 const LayerParams& lp, int heads) {
  if (layouts.size() != static_cast<std::size_t>(q.rows()))
    throw std::invalid_argument("structure_cross_attention: layout count mismatch");
  const int n = grid_proj.rows();
  for (const LayoutMap* m : layouts)
    if (static_cast<int>(m->grid.size()) != n)
      throw std::invalid_argument("structure_cross_attention: layout/grid size mismatch");
  ++g_attention_ops;
  Tensor qp = ad::matmul(tape, q, lp.cross_attn.wq);
  Tensor k_base = ad::add(tape, ad::matmul(tape, grid_proj, lp.cross_attn.wk), pos);
  Tensor vp = ad::matmul(tape, grid_proj, lp.cross_attn.wv);
  auto keys = [&](int i) {
    Tensor lay_emb = ad::gather_rows(tape, lp.e_lay, layouts[i]->grid);
    Tensor phi_out = ad::mlp2(tape, ad::concat_cols(tape, grid_proj, lay_emb), lp.phi);
    return ad::add(tape, k_base, phi_out);
  };
  Tensor out = attention_core(tape, qp, keys, vp, heads);
  return ad::matmul(tape, out, lp.cross_attn.wo);
}

Tensor decoder_layer(ad::Tape* tape, const Tensor& q,
                     const std::vector<std::vector<DependencyLabel>>& dep,
                     const Tensor& grid_proj, const Tensor& pos,
                     const std::vector<const LayoutMap*>& layouts, const LayerParams& lp,
                     const VariantFlags& flags, const ModelConfig& cfg) {
  auto self_fn = [&](const Tensor& x) {
    return flags.structured_self
               ? structure_self_attention(tape, x, dep, lp, cfg.heads)
               : vanilla_attention(tape, x, x, x, lp.self_attn, cfg.heads);
  };
  auto cross_fn = [&](const Tensor& x) {
    return flags.structured_cross
               ? structure_cross_attention(tape, x, grid_proj, pos, layouts, lp, cfg.heads)
               : vanilla_attention(tape, x, grid_proj, grid_proj, lp.cross_attn, cfg.heads);
  };
  auto ffn_fn = [&](const Tensor& x) { return ad::mlp2(tape, x, lp.ffn); };

  Tensor h = q;
  if (cfg.pre_norm) {
    h = ad::add(tape, h, self_fn(ad::layer_norm(tape, h, lp.ln_self.gain, lp.ln_self.bias)));
    h = ad::add(tape, h,
                cross_fn(ad::layer_norm(tape, h, lp.ln_cross.gain, lp.ln_cross.bias)));
    h = ad::add(tape, h, ffn_fn(ad::layer_norm(tape, h, lp.ln_ffn.gain, lp.ln_ffn.bias)));
  } else {
    h = ad::layer_norm(tape, ad::add(tape, h, self_fn(h)), lp.ln_self.gain, lp.ln_self.bias);
    h = ad::layer_norm(tape, ad::add(tape, h, cross_fn(h)), lp.ln_cross.gain,
                       lp.ln_cross.bias);
    h = ad::layer_norm(tape, ad::add(tape, h, ffn_fn(h)), lp.ln_ffn.gain, lp.ln_ffn.bias);
  }
  return h;
}

ModelOutput model_forward(ad::Tape* tape, const Tensor& proposal_features,
                          const std::vector<std::vector<DependencyLabel>>& dep,
                          const Tensor& feature_grid, int grid_h, int grid_w,
                          const std::vector<const LayoutMap*>& layouts,
                          const ModelParams& params, const VariantFlags& flags,
                          const ModelConfig& cfg) {
  flags.validate();
  Tensor q = ad::add_bias(tape, ad::matmul(tape, proposal_features, params.w_in), params.b_in);
  if (flags.use_transformer && !params.layers.empty()) {
    Tensor grid_proj =
        ad::add_bias(tape, ad::matmul(tape, feature_grid, params.w_grid), params.b_grid);
    Tensor pos = position_encoding(grid_h, grid_w, cfg.d_model);
    for (const LayerParams& lp : params.layers)
      q = decoder_layer(tape, q, dep, grid_proj, pos, layouts, lp, flags, cfg);
    if (cfg.pre_norm)
      q = ad::layer_norm(tape, q, params.final_ln.gain, params.final_ln.bias);
  }
  ModelOutput out;
  out.logits = ad::mlp2(tape, q, params.classifier);
  out.probs = ad::sigmoid(tape, out.logits);
  return out;
}

Tensor classification_loss(ad::Tape* tape, const Tensor& probs, const Tensor& targets,
                           double gamma, double alpha) {
  int positives = 0;
  for (double t : *targets.data) positives += t > 0.5 ? 1 : 0;
  Tensor total = ad::focal_loss_sum(tape, probs, targets, gamma, alpha);
  return ad::scale(tape, total, 1.0 / std::max(positives, 1));
}

Tensor total_loss(ad::Tape* tape, const Tensor& l_proposal, const Tensor& l_cls,
                  double cls_weight) {
  if (cls_weight == 1.0) return ad::add(tape, l_proposal, l_cls);
  return ad::add(tape, l_proposal, ad::scale(tape, l_cls, cls_weight));
}

}  // namespace stip
