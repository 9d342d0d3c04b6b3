#include "pama/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pama/errors.hpp"

namespace pama {

AdamState AdamState::zeros_like(const ParamSet& params) {
  AdamState s;
  for (const Parameter& p : params) {
    s.m.emplace_back(p.value.rows(), p.value.cols());
    s.v.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

void adam_step(ParamSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg, double lr,
               const std::function<bool(ParamId)>& trainable) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: gradient/state count does not match parameter count");
  }
  for (ParamId i = 0; i < params.size(); ++i) {
    if (trainable && !trainable(i)) continue;
    if (!grads[i].same_shape(params[i].value)) {
      throw DimensionError("adam_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient in " + params[i].name + "; step rejected");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (ParamId i = 0; i < params.size(); ++i) {
    if (trainable && !trainable(i)) continue;
    Parameter& p = params[i];
    auto w = p.value.data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const double decay = p.decay ? lr * cfg.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      double next = w[k] - decay * w[k] - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      if (cfg.round_to_float) next = static_cast<float>(next);
      w[k] = next;
    }
  }
}

double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps, double warmup_frac) {
  if (total_steps == 0) return base_lr;
  const auto warmup = static_cast<std::uint64_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::uint64_t span = total_steps - warmup;
  if (span == 0) return base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace pama
