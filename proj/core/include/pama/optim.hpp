#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pama/params.hpp"

namespace pama {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * wd * p on parameters flagged for decay
  bool round_to_float = true;  // keep parameters exactly representable as f32
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
};

/// One bias-corrected Adam update at learning rate `lr`. Parameters for which
/// `trainable` returns false are left untouched (their moments too).
/// Throws NumericError, before modifying anything, if a gradient is non-finite.
void adam_step(ParamSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg, double lr,
               const std::function<bool(ParamId)>& trainable = {});

/// Linear warmup over the first warmup_frac of steps, then cosine decay to 0.
double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps, double warmup_frac);

}  // namespace pama
