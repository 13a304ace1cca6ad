#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "stip/proposal.hpp"
#include "stip/scene.hpp"
#include "stip/structure.hpp"
#include "stip/tensor.hpp"

namespace stip {

struct VariantFlags {
  bool use_transformer = true;
  bool structured_self = true;
  bool structured_cross = true;

  void validate() const;  // structured_* require use_transformer
};

struct ModelConfig {
  int d_model = 128;
  int heads = 1;
  int num_layers = 6;  // L
  int d_dep = 32;
  int d_lay = 32;
  int d_grid = 8;
  int num_classes = 10;      // C
  int pair_feature_width = 0;
  int ffn_hidden = 0;        // defaults to d_model when 0
  bool pre_norm = true;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : d_model; }
  void validate() const;
};

struct LayerNormParams {
  ad::Tensor gain, bias;
  static LayerNormParams init(int d);
};

struct AttentionProj {
  ad::Tensor wq, wk, wv, wo;
  static AttentionProj init(int d, std::mt19937_64& rng);
};

struct LayerParams {
  AttentionProj self_attn;
  AttentionProj cross_attn;
  ad::Tensor e_dep;       // [6 x d_dep]
  ad::Tensor e_lay;       // [5 x d_lay]
  ad::Mlp2Params psi;     // d_model + d_dep -> d_model
  ad::Mlp2Params phi;     // d_model + d_lay -> d_model
  ad::Mlp2Params ffn;
  LayerNormParams ln_self, ln_cross, ln_ffn;

  static LayerParams init(const ModelConfig& cfg, std::mt19937_64& rng);
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, ad::Tensor*>>& out);
};

struct ModelParams {
  ad::Tensor w_in, b_in;      // pair feature -> d_model
  ad::Tensor w_grid, b_grid;  // d_grid -> d_model
  std::vector<LayerParams> layers;
  LayerNormParams final_ln;   // closes the pre-norm residual stream
  ad::Mlp2Params classifier;  // d_model -> d_model -> C

  static ModelParams init(const ModelConfig& cfg, std::mt19937_64& rng);
  void collect(std::vector<std::pair<std::string, ad::Tensor*>>& out);
};

// Instrumentation: number of attention module invocations since reset.
int64_t attention_op_count();
void reset_attention_op_count();

// Scaled dot-product attention: q/k/v already in model width,
// projections applied inside, output runs through wo.
ad::Tensor vanilla_attention(ad::Tape* tape, const ad::Tensor& q, const ad::Tensor& k,
                             const ad::Tensor& v, const AttentionProj& p, int heads);

// Self-attention whose keys carry the dependency encoding
// psi(concat(q_j, E_dep[dep_ij])); values stay untouched.
ad::Tensor structure_self_attention(ad::Tape* tape, const ad::Tensor& q,
                                    const std::vector<std::vector<DependencyLabel>>& dep,
                                    const LayerParams& lp, int heads);

// Cross-attention from proposals to projected grid cells; keys get the
// position encoding plus phi(concat(x_j, E_lay[l_ij])), per query.
ad::Tensor structure_cross_attention(ad::Tape* tape, const ad::Tensor& q,
                                     const ad::Tensor& grid_proj, const ad::Tensor& pos,
                                     const std::vector<const LayoutMap*>& layouts,
                                     const LayerParams& lp, int heads);

ad::Tensor decoder_layer(ad::Tape* tape, const ad::Tensor& q,
                         const std::vector<std::vector<DependencyLabel>>& dep,
                         const ad::Tensor& grid_proj, const ad::Tensor& pos,
                         const std::vector<const LayoutMap*>& layouts,
                         const LayerParams& lp, const VariantFlags& flags,
                         const ModelConfig& cfg);

struct ModelOutput {
  ad::Tensor logits;  // [K x C]
  ad::Tensor probs;
};

// Full second-phase forward: project pair features, run L decoder layers
// (skipped entirely for the no-transformer variant), classify.
ModelOutput model_forward(ad::Tape* tape, const ad::Tensor& proposal_features,
                          const std::vector<std::vector<DependencyLabel>>& dep,
                          const ad::Tensor& feature_grid, int grid_h, int grid_w,
                          const std::vector<const LayoutMap*>& layouts,
                          const ModelParams& params, const VariantFlags& flags,
                          const ModelConfig& cfg);

// Classification objective: focal loss over all proposal/class cells,
// normalized by max(#positive cells, 1).
ad::Tensor classification_loss(ad::Tape* tape, const ad::Tensor& probs,
                               const ad::Tensor& targets, double gamma, double alpha);

ad::Tensor total_loss(ad::Tape* tape, const ad::Tensor& l_proposal, const ad::Tensor& l_cls,
                      double cls_weight = 1.0);

}  // namespace stip
