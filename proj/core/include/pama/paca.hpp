#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pama/params.hpp"
#include "pama/rng.hpp"
#include "pama/tape.hpp"

namespace pama {

/// Shape of one position-aware cross-attention layer.
struct PacaDims {
  std::size_t dim = 64;  // d_f, token width
  std::size_t heads = 4;  // H; must divide dim
  std::uint32_t polar_bins = 8;
  std::uint32_t max_distance = 32;

  std::size_t head_dim() const { return dim / heads; }
  void validate() const;
};

/// Parameter handles for one PACA layer.
///
/// wq/wk/wv are dim x dim with head h using columns [h*d_e, (h+1)*d_e); they
/// are shared by the anchor->patch and patch->anchor directions. wo is the
/// dim x dim projection applied to the concatenated heads. phi_d is
/// H x (D_max + 1) and phi_p is H x N: one bias table row per head.
struct PacaParams {
  ParamId wq = 0, wk = 0, wv = 0, wo = 0;
  ParamId phi_d = 0, phi_p = 0;
};

struct LayerNormParams {
  ParamId gamma = 0, beta = 0;
};

struct MlpParams {
  ParamId w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

/// One encoder/decoder block: separate norms and MLPs for the patch and anchor streams.
struct BlockParams {
  LayerNormParams norm_patch, norm_anchor;
  PacaParams attn;
  LayerNormParams norm_patch_mlp, norm_anchor_mlp;
  MlpParams mlp_patch, mlp_anchor;
};

/// Initial phi_d: a linear distance penalty per head, -2^(-h) * d, so head 0
/// is the most local and later heads see further. The last bucket (D_max,
/// also the class token's) starts at 0.
Tensor distance_prior(const PacaDims& dims);

/// Xavier-uniform projections, phi_d = distance_prior, zero phi_p.
PacaParams add_paca_params(ParamSet& set, const std::string& prefix, const PacaDims& dims, Rng& rng);
LayerNormParams add_layer_norm_params(ParamSet& set, const std::string& prefix, std::size_t dim);
MlpParams add_mlp_params(ParamSet& set, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng);
BlockParams add_block_params(ParamSet& set, const std::string& prefix, const PacaDims& dims, std::size_t mlp_ratio,
                             Rng& rng);

/// Polar-bin matrix per head (H planes of n_k x n_tokens).
using PolarPlanes = std::vector<IndexMatrix>;

PolarPlanes replicate_heads(const IndexMatrix& polar, std::size_t heads);

/// Post-softmax attention of one PACA pass, kept for reorientation and inspection.
struct AttnState {
  std::vector<Tensor> anchor_to_patch;  // A, per head n_k x n_p
  std::vector<Tensor> patch_to_anchor;  // A-bar, per head n_p x n_k
  PolarPlanes polar;                    // bins used in this pass
};

struct PacaOutput {
  Var patches;  // X~, n_p x dim
  Var anchors;  // K~, n_k x dim
  AttnState state;
};

/// Bidirectional anchor <-> patch attention with learned distance and polar biases.
///
/// Per head h:
///   A_h    = softmax(Kq_h Xk_h^T / sqrt(d_e) + phi_d[D] + phi_p[P_h])
///   Abar_h = softmax(Xq_h Kk_h^T / sqrt(d_e) + phi_d[D]^T + phi_p[P_h]^T)
/// K~ = concat_h(A_h Xv_h) Wo and X~ = concat_h(Abar_h Kv_h) Wo.
PacaOutput paca_forward(Binding& bind, Var patches, Var anchors, const IndexMatrix& distance, const PolarPlanes& polar,
                        const PacaParams& params, const PacaDims& dims);

/// Re-references every (head, anchor) polar row to the bin holding the most
/// attention mass. Ties go to the smallest bin; the shift is taken mod N.
/// No gradient flows through the index update.
PolarPlanes kernel_reorient(const PolarPlanes& polar, std::span<const Tensor> attention, std::uint32_t bins);

/// Keep-mask over anchors. In training each anchor survives with probability
/// 1 - p_drop, and anchor 0 is kept if the draw removes every anchor.
/// Outside training every anchor is kept and `rng` is not touched.
std::vector<bool> anchor_dropout(std::size_t n_anchors, double p_drop, bool training, Rng& rng);

struct BlockOutput {
  Var patches;
  Var anchors;
  PolarPlanes next_polar;
  AttnState state;
};

/// LayerNorm -> PACA -> per-stream residual MLP:
///   X' = X~ + MLP(LN(X~ + X^)),  K' = K~ + MLP(LN(K~ + K^)).
/// With `reorient` the returned polar planes are kernel_reorient(P, A),
/// otherwise P is passed through unchanged.
BlockOutput encoder_block(Binding& bind, Var patches, Var anchors, const IndexMatrix& distance,
                          const PolarPlanes& polar, const BlockParams& params, const PacaDims& dims, bool reorient);

/// Analytic multiply-accumulate count of paca_forward for the given sizes.
std::uint64_t paca_macs(std::size_t n_patches, std::size_t n_anchors, const PacaDims& dims);

}  // namespace pama
