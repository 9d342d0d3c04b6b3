#include "pama/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pama/errors.hpp"

namespace pama {

namespace {

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(fan_in, fan_out);
  for (double& v : t.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

Var apply_norm(Binding& bind, Var x, const LayerNormParams& p) { return layer_norm(x, bind(p.gamma), bind(p.beta)); }

/// D or P restricted to kept anchor rows, with the class token prepended as
/// column 0 carrying `cls_value`, followed by the listed patch columns.
IndexMatrix token_columns(const IndexMatrix& m, std::span<const std::size_t> anchor_rows,
                          std::span<const std::size_t> patch_cols, std::uint32_t cls_value) {
  IndexMatrix out(anchor_rows.size(), patch_cols.size() + 1);
  for (std::size_t i = 0; i < anchor_rows.size(); ++i) {
    out(i, 0) = cls_value;
    for (std::size_t j = 0; j < patch_cols.size(); ++j) out(i, j + 1) = m(anchor_rows[i], patch_cols[j]);
  }
  return out;
}

void check_bag(const SlideBag& bag, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (bag.feature_dim != cfg.dim) {
    throw DimensionError("bag feature width " + std::to_string(bag.feature_dim) + " does not match model dim " +
                         std::to_string(cfg.dim));
  }
  if (bag.n_anchors() > cfg.max_anchors) {
    throw DataError("bag has " + std::to_string(bag.n_anchors()) + " anchors but the model pool holds " +
                    std::to_string(cfg.max_anchors));
  }
  if (bag.geometry.polar_bins != cfg.polar_bins || bag.geometry.max_distance != cfg.max_distance) {
    throw HyperparameterMismatch("bag geometry (N=" + std::to_string(bag.geometry.polar_bins) +
                                 ", D_max=" + std::to_string(bag.geometry.max_distance) +
                                 ") does not match model (N=" + std::to_string(cfg.polar_bins) +
                                 ", D_max=" + std::to_string(cfg.max_distance) + ")");
  }
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  paca_dims().validate();
  if (dec_depth < 1) throw ConfigError("model: dec_depth must be >= 1");
  if (enc_depth <= dec_depth) throw ConfigError("model: enc_depth must exceed dec_depth (asymmetric autoencoder)");
  if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
  if (max_anchors < 1) throw ConfigError("model: max_anchors must be >= 1");
  if (n_classes == 1) throw ConfigError("model: n_classes must be 0 (no head) or >= 2");
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams m;
  m.config = cfg;
  const PacaDims dims = cfg.paca_dims();
  m.anchor_pool = m.set.add("anchor_pool", normal_init(cfg.max_anchors, cfg.dim, 0.02, rng), false);
  m.cls_token = m.set.add("cls_token", normal_init(1, cfg.dim, 0.02, rng), false);
  for (std::size_t l = 0; l < cfg.enc_depth; ++l) {
    m.encoder.push_back(add_block_params(m.set, "enc." + std::to_string(l), dims, cfg.mlp_ratio, rng));
  }
  m.encoder_norm = add_layer_norm_params(m.set, "enc_norm", cfg.dim);
  m.mask_token = m.set.add("dec.mask_token", normal_init(1, cfg.dim, 0.02, rng), false);
  for (std::size_t l = 0; l < cfg.dec_depth; ++l) {
    m.decoder.push_back(add_block_params(m.set, "dec." + std::to_string(l), dims, cfg.mlp_ratio, rng));
  }
  m.decoder_norm = add_layer_norm_params(m.set, "dec.norm", cfg.dim);
  m.recon_w = m.set.add("dec.recon.w", xavier(cfg.dim, cfg.dim, rng), true);
  m.recon_b = m.set.add("dec.recon.b", Tensor(1, cfg.dim), false);
  if (cfg.n_classes > 0) {
    m.head_w = m.set.add("head.w", xavier(cfg.dim, cfg.n_classes, rng), true);
    m.head_b = m.set.add("head.b", Tensor(1, cfg.n_classes), false);
  }
  return m;
}

bool ModelParams::is_head_param(ParamId id) const { return set[id].name.starts_with("head."); }

bool ModelParams::is_encoder_param(ParamId id) const {
  const std::string& n = set[id].name;
  return n == "anchor_pool" || n == "cls_token" || n.starts_with("enc.") || n.starts_with("enc_norm.");
}

std::size_t ModelParams::encoder_param_count() const {
  std::size_t n = 0;
  for (ParamId i = 0; i < set.size(); ++i) {
    if (is_encoder_param(i)) n += set[i].value.size();
  }
  return n;
}

std::size_t ModelParams::decoder_param_count() const { return set.element_count("dec."); }

MaskPlan MaskPlan::all_visible(std::size_t n_patches) {
  MaskPlan plan;
  plan.unmasked = iota(n_patches);
  return plan;
}

MaskPlan make_mask_plan(std::size_t n_patches, double ratio, Rng& rng) {
  if (n_patches < 2) throw DataError("make_mask_plan: need at least 2 patches to mask, got " +
                                     std::to_string(n_patches));
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("make_mask_plan: ratio must lie in (0, 1)");
  const auto wanted = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_patches)));
  const std::size_t n_masked = std::clamp<std::size_t>(wanted, 1, n_patches - 1);

  std::vector<std::size_t> order = iota(n_patches);
  for (std::size_t i = 0; i < n_masked; ++i) {
    const std::size_t j = i + rng.uniform_index(n_patches - i);
    std::swap(order[i], order[j]);
  }
  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_masked));
  plan.unmasked.assign(order.begin() + static_cast<std::ptrdiff_t>(n_masked), order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.unmasked.begin(), plan.unmasked.end());
  return plan;
}

Encoded encode(Binding& bind, const SlideBag& bag, const MaskPlan& plan, const ModelParams& params, bool training,
               double p_drop, Rng& rng) {
  check_bag(bag, params);
  if (plan.n_patches() != bag.n_patches()) throw DimensionError("encode: mask plan does not match bag size");
  const ModelConfig& cfg = params.config;
  Tape& tape = bind.tape();

  Encoded enc;
  const std::vector<bool> keep = anchor_dropout(bag.n_anchors(), p_drop, training, rng);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) enc.kept_anchors.push_back(i);
  }

  Tensor visible(plan.unmasked.size(), cfg.dim);
  for (std::size_t t = 0; t < plan.unmasked.size(); ++t) {
    const std::size_t j = plan.unmasked[t];
    for (std::size_t c = 0; c < cfg.dim; ++c) visible(t, c) = bag.features[j * cfg.dim + c];
  }
  const Var tokens[] = {bind(params.cls_token), tape.constant(std::move(visible))};
  Var x = concat_rows(tokens);
  Var k = gather_rows(bind(params.anchor_pool), enc.kept_anchors);

  const IndexMatrix distance = token_columns(bag.distance, enc.kept_anchors, plan.unmasked, cfg.max_distance);
  PolarPlanes polar = replicate_heads(token_columns(bag.polar, enc.kept_anchors, plan.unmasked, 0), cfg.heads);
  for (const BlockParams& block : params.encoder) {
    BlockOutput out = encoder_block(bind, x, k, distance, polar, block, cfg.paca_dims(), cfg.reorient);
    x = out.patches;
    k = out.anchors;
    polar = std::move(out.next_polar);
    enc.states.push_back(std::move(out.state));
  }
  enc.patches = apply_norm(bind, x, params.encoder_norm);
  enc.anchors = k;
  return enc;
}

Var decode(Binding& bind, const Encoded& encoded, const MaskPlan& plan, const SlideBag& bag,
           const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  const std::size_t n_p = bag.n_patches();
  const std::size_t visible = plan.unmasked.size();
  if (encoded.patches.rows() != visible + 1) throw DimensionError("decode: encoder output does not match plan");

  // Row layout of `pool`: [cls, visible patches..., mask token].
  const Var parts[] = {encoded.patches, bind(params.mask_token)};
  const Var pool = concat_rows(parts);
  std::vector<std::size_t> order(n_p + 1, visible + 1);
  order[0] = 0;
  for (std::size_t t = 0; t < visible; ++t) order[plan.unmasked[t] + 1] = t + 1;
  Var x = gather_rows(pool, order);
  Var k = encoded.anchors;

  const std::vector<std::size_t> all = iota(n_p);
  const IndexMatrix distance = token_columns(bag.distance, encoded.kept_anchors, all, cfg.max_distance);
  PolarPlanes polar = replicate_heads(token_columns(bag.polar, encoded.kept_anchors, all, 0), cfg.heads);
  for (const BlockParams& block : params.decoder) {
    BlockOutput out = encoder_block(bind, x, k, distance, polar, block, cfg.paca_dims(), cfg.reorient);
    x = out.patches;
    k = out.anchors;
    polar = std::move(out.next_polar);
  }
  const Var projected =
      add_row(matmul(apply_norm(bind, x, params.decoder_norm), bind(params.recon_w)), bind(params.recon_b));
  std::vector<std::size_t> patch_rows(n_p);
  for (std::size_t j = 0; j < n_p; ++j) patch_rows[j] = j + 1;
  return gather_rows(projected, patch_rows);
}

Var masked_mse(Var recon, const Tensor& target, const MaskPlan& plan) {
  if (!recon.value().same_shape(target)) throw DimensionError("masked_mse: reconstruction and target shapes differ");
  if (plan.masked.empty()) throw DataError("masked_mse: no masked patches");
  Tensor masked_target(plan.masked.size(), target.cols());
  for (std::size_t t = 0; t < plan.masked.size(); ++t) {
    auto src = target.row(plan.masked[t]);
    std::copy(src.begin(), src.end(), masked_target.row(t).begin());
  }
  const Var diff = sub(gather_rows(recon, plan.masked), recon.tape->constant(std::move(masked_target)));
  return mean(mul(diff, diff));
}

Var pretrain_loss(Binding& bind, const SlideBag& bag, const MaskPlan& plan, const ModelParams& params, bool training,
                  double p_drop, Rng& rng) {
  const Encoded enc = encode(bind, bag, plan, params, training, p_drop, rng);
  const Var recon = decode(bind, enc, plan, bag, params);
  return masked_mse(recon, bag.feature_tensor(), plan);
}

Var class_embedding(Binding& bind, const SlideBag& bag, const ModelParams& params, bool training, double p_drop,
                    Rng& rng) {
  const Encoded enc = encode(bind, bag, MaskPlan::all_visible(bag.n_patches()), params, training, p_drop, rng);
  const std::size_t cls_row = 0;
  return gather_rows(enc.patches, std::span<const std::size_t>(&cls_row, 1));
}

Var classify(Binding& bind, const SlideBag& bag, const ModelParams& params, bool training, double p_drop, Rng& rng) {
  if (!params.head_w) throw UsageError("classify: model has no task head (n_classes = 0)");
  const Var cls = class_embedding(bind, bag, params, training, p_drop, rng);
  return add_row(matmul(cls, bind(*params.head_w)), bind(*params.head_b));
}

std::vector<AttnState> inspect_attention(const SlideBag& bag, const ModelParams& params) {
  Tape tape;
  Binding bind(tape, params.set, [](ParamId) { return false; });
  Rng rng(0);
  Encoded enc = encode(bind, bag, MaskPlan::all_visible(bag.n_patches()), params, false, 0.0, rng);
  return std::move(enc.states);
}

}  // namespace pama
