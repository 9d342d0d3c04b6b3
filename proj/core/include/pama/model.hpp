#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "pama/geometry.hpp"
#include "pama/paca.hpp"
#include "pama/params.hpp"
#include "pama/rng.hpp"

namespace pama {

struct ModelConfig {
  std::size_t dim = 64;  // d_f: patch feature width, kept through every block
  std::size_t heads = 4;
  std::size_t enc_depth = 4;
  std::size_t dec_depth = 2;
  std::size_t mlp_ratio = 4;
  std::uint32_t polar_bins = 8;
  std::uint32_t max_distance = 32;
  std::size_t max_anchors = 64;  // rows in the learnable anchor pool
  std::size_t n_classes = 0;     // 0: no task head
  bool reorient = true;          // kernel reorientation between blocks

  PacaDims paca_dims() const { return {dim, heads, polar_bins, max_distance}; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Every learnable tensor of the autoencoder plus handles into the ParamSet.
struct ModelParams {
  ModelConfig config;
  ParamSet set;

  ParamId anchor_pool = 0;  // max_anchors x dim; a bag with n_k anchors uses rows [0, n_k)
  ParamId cls_token = 0;
  ParamId mask_token = 0;
  std::vector<BlockParams> encoder;
  LayerNormParams encoder_norm;
  std::vector<BlockParams> decoder;
  LayerNormParams decoder_norm;
  ParamId recon_w = 0, recon_b = 0;
  std::optional<ParamId> head_w, head_b;

  /// Fresh parameters. Values are rounded to float so checkpoints are lossless.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  /// Encoder-side parameters: everything a classification forward touches except the task head.
  bool is_encoder_param(ParamId id) const;
  bool is_head_param(ParamId id) const;
  std::size_t encoder_param_count() const;
  std::size_t decoder_param_count() const;
};

/// Random split of patch indices into masked (hidden from the encoder) and visible.
struct MaskPlan {
  std::vector<std::size_t> masked;    // sorted
  std::vector<std::size_t> unmasked;  // sorted
  double ratio = 0.0;

  std::size_t n_patches() const { return masked.size() + unmasked.size(); }
  static MaskPlan all_visible(std::size_t n_patches);
};

/// |masked| = round(r * n_p), clamped so at least one patch is masked and one visible.
MaskPlan make_mask_plan(std::size_t n_patches, double ratio, Rng& rng);

struct Encoded {
  Var patches;  // (1 + |visible|) x dim, row 0 is the class token
  Var anchors;  // |kept| x dim
  std::vector<std::size_t> kept_anchors;
  std::vector<AttnState> states;  // one per encoder block
};

/// Runs the encoder over the class token and the visible patches.
/// `p_drop` applies anchor dropout when `training` is set.
Encoded encode(Binding& bind, const SlideBag& bag, const MaskPlan& plan, const ModelParams& params, bool training,
               double p_drop, Rng& rng);

/// Rebuilds the full token sequence (mask tokens at masked positions), runs
/// the decoder and projects back to feature space: n_p x dim, patch order.
Var decode(Binding& bind, const Encoded& encoded, const MaskPlan& plan, const SlideBag& bag,
           const ModelParams& params);

/// Mean over masked rows and feature columns of (recon - target)^2.
Var masked_mse(Var recon, const Tensor& target, const MaskPlan& plan);

/// encode -> decode -> masked_mse in one call.
Var pretrain_loss(Binding& bind, const SlideBag& bag, const MaskPlan& plan, const ModelParams& params, bool training,
                  double p_drop, Rng& rng);

/// Final class-token state after the encoder norm, with every patch visible.
Var class_embedding(Binding& bind, const SlideBag& bag, const ModelParams& params, bool training, double p_drop,
                    Rng& rng);

/// Task-head logits (1 x n_classes) on the class embedding.
Var classify(Binding& bind, const SlideBag& bag, const ModelParams& params, bool training, double p_drop, Rng& rng);

/// Encoder blocks' attention for an all-visible eval forward (inspection).
std::vector<AttnState> inspect_attention(const SlideBag& bag, const ModelParams& params);

}  // namespace pama
