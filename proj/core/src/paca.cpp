#include "pama/paca.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pama/errors.hpp"

namespace pama {

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(fan_in, fan_out);
  for (double& v : t.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

Var layer_norm(Binding& bind, Var x, const LayerNormParams& p) {
  return layer_norm(x, bind(p.gamma), bind(p.beta));
}

Var mlp(Binding& bind, Var x, const MlpParams& p) {
  return mlp_forward(x, bind(p.w1), bind(p.b1), bind(p.w2), bind(p.b2));
}

}  // namespace

Tensor distance_prior(const PacaDims& dims) {
  Tensor t(dims.heads, dims.max_distance + 1);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const double slope = std::exp2(-static_cast<double>(h));
    for (std::uint32_t d = 0; d < dims.max_distance; ++d) t(h, d) = static_cast<float>(-slope * d);
  }
  return t;
}

void PacaDims::validate() const {
  if (dim == 0 || heads == 0) throw ConfigError("paca: dim and heads must be positive");
  if (dim % heads != 0) {
    throw ConfigError("paca: heads (" + std::to_string(heads) + ") must divide dim (" + std::to_string(dim) + ")");
  }
  if (polar_bins < 2) throw ConfigError("paca: polar_bins must be >= 2");
  if (max_distance < 1) throw ConfigError("paca: max_distance must be >= 1");
}

PacaParams add_paca_params(ParamSet& set, const std::string& prefix, const PacaDims& dims, Rng& rng) {
  dims.validate();
  PacaParams p;
  p.wq = set.add(prefix + ".wq", xavier(dims.dim, dims.dim, rng), true);
  p.wk = set.add(prefix + ".wk", xavier(dims.dim, dims.dim, rng), true);
  p.wv = set.add(prefix + ".wv", xavier(dims.dim, dims.dim, rng), true);
  p.wo = set.add(prefix + ".wo", xavier(dims.dim, dims.dim, rng), true);
  p.phi_d = set.add(prefix + ".phi_d", distance_prior(dims), false);
  p.phi_p = set.add(prefix + ".phi_p", Tensor(dims.heads, dims.polar_bins), false);
  return p;
}

LayerNormParams add_layer_norm_params(ParamSet& set, const std::string& prefix, std::size_t dim) {
  return {set.add(prefix + ".gamma", Tensor(1, dim, 1.0), false), set.add(prefix + ".beta", Tensor(1, dim), false)};
}

MlpParams add_mlp_params(ParamSet& set, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng) {
  MlpParams p;
  p.w1 = set.add(prefix + ".w1", xavier(dim, hidden, rng), true);
  p.b1 = set.add(prefix + ".b1", Tensor(1, hidden), false);
  p.w2 = set.add(prefix + ".w2", xavier(hidden, dim, rng), true);
  p.b2 = set.add(prefix + ".b2", Tensor(1, dim), false);
  return p;
}

BlockParams add_block_params(ParamSet& set, const std::string& prefix, const PacaDims& dims, std::size_t mlp_ratio,
                             Rng& rng) {
  BlockParams b;
  b.norm_patch = add_layer_norm_params(set, prefix + ".norm_patch", dims.dim);
  b.norm_anchor = add_layer_norm_params(set, prefix + ".norm_anchor", dims.dim);
  b.attn = add_paca_params(set, prefix + ".attn", dims, rng);
  b.norm_patch_mlp = add_layer_norm_params(set, prefix + ".norm_patch_mlp", dims.dim);
  b.norm_anchor_mlp = add_layer_norm_params(set, prefix + ".norm_anchor_mlp", dims.dim);
  b.mlp_patch = add_mlp_params(set, prefix + ".mlp_patch", dims.dim, dims.dim * mlp_ratio, rng);
  b.mlp_anchor = add_mlp_params(set, prefix + ".mlp_anchor", dims.dim, dims.dim * mlp_ratio, rng);
  return b;
}

PolarPlanes replicate_heads(const IndexMatrix& polar, std::size_t heads) { return PolarPlanes(heads, polar); }

PacaOutput paca_forward(Binding& bind, Var patches, Var anchors, const IndexMatrix& distance, const PolarPlanes& polar,
                        const PacaParams& params, const PacaDims& dims) {
  const std::size_t n_p = patches.rows();
  const std::size_t n_k = anchors.rows();
  if (patches.cols() != dims.dim || anchors.cols() != dims.dim) {
    throw DimensionError("paca_forward: token width must be " + std::to_string(dims.dim));
  }
  if (distance.rows != n_k || distance.cols != n_p) {
    throw DimensionError("paca_forward: D must be " + std::to_string(n_k) + "x" + std::to_string(n_p));
  }
  if (polar.size() != dims.heads) throw DimensionError("paca_forward: need one polar plane per head");
  for (const IndexMatrix& p : polar) {
    if (p.rows != n_k || p.cols != n_p) throw DimensionError("paca_forward: polar plane shape mismatch");
  }

  const std::size_t d_e = dims.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_e));

  const Var wq = bind(params.wq);
  const Var wk = bind(params.wk);
  const Var wv = bind(params.wv);
  const Var patch_q = matmul(patches, wq);
  const Var patch_k = matmul(patches, wk);
  const Var patch_v = matmul(patches, wv);
  const Var anchor_q = matmul(anchors, wq);
  const Var anchor_k = matmul(anchors, wk);
  const Var anchor_v = matmul(anchors, wv);
  const Var phi_d = bind(params.phi_d);
  const Var phi_p = bind(params.phi_p);

  PacaOutput out;
  out.state.polar = polar;
  std::vector<Var> anchor_heads;
  std::vector<Var> patch_heads;
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const std::size_t lo = h * d_e;
    const std::size_t hi = lo + d_e;
    const std::size_t row = h;
    const Var dist_table = gather_rows(phi_d, std::span<const std::size_t>(&row, 1));
    const Var polar_table = gather_rows(phi_p, std::span<const std::size_t>(&row, 1));
    const Var bias = add(table_lookup(dist_table, distance), table_lookup(polar_table, polar[h]));

    // anchors attend over patches
    const Var logits_a = add(scale(matmul_nt(slice_cols(anchor_q, lo, hi), slice_cols(patch_k, lo, hi)), inv_sqrt), bias);
    const Var attn_a = softmax_rows(logits_a);
    anchor_heads.push_back(matmul(attn_a, slice_cols(patch_v, lo, hi)));

    // patches attend over anchors
    const Var logits_p =
        add(scale(matmul_nt(slice_cols(patch_q, lo, hi), slice_cols(anchor_k, lo, hi)), inv_sqrt), transpose(bias));
    const Var attn_p = softmax_rows(logits_p);
    patch_heads.push_back(matmul(attn_p, slice_cols(anchor_v, lo, hi)));

    out.state.anchor_to_patch.push_back(attn_a.value());
    out.state.patch_to_anchor.push_back(attn_p.value());
  }
  const Var wo = bind(params.wo);
  out.anchors = matmul(concat_cols(anchor_heads), wo);
  out.patches = matmul(concat_cols(patch_heads), wo);
  return out;
}

PolarPlanes kernel_reorient(const PolarPlanes& polar, std::span<const Tensor> attention, std::uint32_t bins) {
  if (polar.size() != attention.size()) throw DimensionError("kernel_reorient: head count mismatch");
  PolarPlanes next = polar;
  std::vector<double> histogram(bins);
  for (std::size_t h = 0; h < polar.size(); ++h) {
    const IndexMatrix& p = polar[h];
    const Tensor& a = attention[h];
    if (a.rows() != p.rows || a.cols() != p.cols) throw DimensionError("kernel_reorient: A and P shapes differ");
    for (std::size_t i = 0; i < p.rows; ++i) {
      std::fill(histogram.begin(), histogram.end(), 0.0);
      for (std::size_t j = 0; j < p.cols; ++j) {
        const std::uint32_t b = p(i, j);
        if (b >= bins) throw BoundsError("kernel_reorient: polar bin " + std::to_string(b) + " >= N");
        histogram[b] += a(i, j);
      }
      // max_element returns the first maximum, i.e. the smallest bin on ties.
      const auto axis = static_cast<std::uint32_t>(std::max_element(histogram.begin(), histogram.end()) -
                                                   histogram.begin());
      for (std::size_t j = 0; j < p.cols; ++j) next[h](i, j) = (p(i, j) + bins - axis) % bins;
    }
  }
  return next;
}

std::vector<bool> anchor_dropout(std::size_t n_anchors, double p_drop, bool training, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) {
    throw ConfigError("anchor_dropout: p_drop must lie in [0, 1), got " + std::to_string(p_drop));
  }
  std::vector<bool> keep(n_anchors, true);
  if (!training || p_drop == 0.0) return keep;
  bool any = false;
  for (std::size_t i = 0; i < n_anchors; ++i) {
    keep[i] = !rng.bernoulli(p_drop);
    any = any || keep[i];
  }
  if (!any && n_anchors > 0) keep[0] = true;
  return keep;
}

BlockOutput encoder_block(Binding& bind, Var patches, Var anchors, const IndexMatrix& distance,
                          const PolarPlanes& polar, const BlockParams& params, const PacaDims& dims, bool reorient) {
  const Var x_hat = layer_norm(bind, patches, params.norm_patch);
  const Var k_hat = layer_norm(bind, anchors, params.norm_anchor);
  PacaOutput attn = paca_forward(bind, x_hat, k_hat, distance, polar, params.attn, dims);

  BlockOutput out;
  out.patches = add(attn.patches, mlp(bind, layer_norm(bind, add(attn.patches, x_hat), params.norm_patch_mlp),
                                      params.mlp_patch));
  out.anchors = add(attn.anchors, mlp(bind, layer_norm(bind, add(attn.anchors, k_hat), params.norm_anchor_mlp),
                                      params.mlp_anchor));
  out.next_polar = reorient ? kernel_reorient(polar, attn.state.anchor_to_patch, dims.polar_bins) : polar;
  out.state = std::move(attn.state);
  return out;
}

std::uint64_t paca_macs(std::size_t n_patches, std::size_t n_anchors, const PacaDims& dims) {
  const std::uint64_t n = n_patches;
  const std::uint64_t k = n_anchors;
  const std::uint64_t d = dims.dim;
  // q/k/v and output projections on both streams, then logits and value
  // mixing in both directions.
  return 4 * (n + k) * d * d + 4 * n * k * d;
}

}  // namespace pama
