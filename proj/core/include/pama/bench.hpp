#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pama/paca.hpp"

namespace pama {

/// Plain multi-head self-attention over n tokens, the quadratic baseline:
/// q/k/v/o projections plus an n x n logit matrix per head.
Var self_attention_forward(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads);

struct BenchRow {
  std::size_t n_patches = 0;
  std::uint64_t paca_macs = 0;  // counted during one paca_forward
  std::uint64_t self_attn_macs = 0;
  double paca_ms = 0.0;
  double self_ms = 0.0;
};

/// One forward of each attention at every n_p, with n_k anchors fixed.
/// MACs are counted by the matmul kernels, not computed from a formula.
std::vector<BenchRow> complexity_bench(std::span<const std::size_t> n_patches, std::size_t n_anchors,
                                       const PacaDims& dims, std::uint64_t seed);

}  // namespace pama
