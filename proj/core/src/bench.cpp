#include "pama/bench.hpp"

#include <chrono>
#include <cmath>

#include "pama/errors.hpp"
#include "pama/geometry.hpp"

namespace pama {

Var self_attention_forward(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads) {
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0) throw ConfigError("self_attention_forward: heads must divide the token width");
  const std::size_t d_e = d / heads;
  const Var q = matmul(x, wq);
  const Var k = matmul(x, wk);
  const Var v = matmul(x, wv);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * d_e;
    const std::size_t hi = lo + d_e;
    const Var logits = scale(matmul_nt(slice_cols(q, lo, hi), slice_cols(k, lo, hi)), 1.0 / std::sqrt(double(d_e)));
    outs.push_back(matmul(softmax_rows(logits), slice_cols(v, lo, hi)));
  }
  return matmul(concat_cols(outs), wo);
}

std::vector<BenchRow> complexity_bench(std::span<const std::size_t> n_patches, std::size_t n_anchors,
                                       const PacaDims& dims, std::uint64_t seed) {
  dims.validate();
  if (n_anchors == 0) throw ConfigError("complexity_bench: n_anchors must be positive");
  using Clock = std::chrono::steady_clock;
  Rng rng(seed);
  ParamSet set;
  const PacaParams paca = add_paca_params(set, "paca", dims, rng);

  std::vector<BenchRow> rows;
  for (std::size_t n : n_patches) {
    if (n < n_anchors) throw ConfigError("complexity_bench: n_p must be >= n_anchors");
    // Patches on the smallest square grid that holds them, row-major.
    std::size_t side = 1;
    while (side * side < n) ++side;
    std::vector<GridPoint> coords(n);
    for (std::size_t i = 0; i < n; ++i) {
      coords[i] = {static_cast<std::int32_t>(i % side), static_cast<std::int32_t>(i / side)};
    }
    std::vector<float> features(n * dims.dim);
    for (float& f : features) f = static_cast<float>(rng.normal());
    GeometryConfig geo;
    geo.patches_per_anchor = static_cast<std::uint32_t>(n / n_anchors);
    geo.polar_bins = dims.polar_bins;
    geo.max_distance = dims.max_distance;
    geo.seed = seed;
    const SlideBag bag = build_bag(std::move(coords), std::move(features), dims.dim, std::nullopt, geo);
    const Tensor x = bag.feature_tensor();
    Tensor k(bag.n_anchors(), dims.dim);
    for (double& v : k.data()) v = rng.normal();

    BenchRow row;
    row.n_patches = n;
    {
      Tape tape;
      Binding bind(tape, set, [](ParamId) { return false; });
      const Var xv = tape.constant(x);
      const Var kv = tape.constant(k);
      const auto t0 = Clock::now();
      const kernels::MacScope macs;
      paca_forward(bind, xv, kv, bag.distance, replicate_heads(bag.polar, dims.heads), paca, dims);
      row.paca_macs = macs.count();
      row.paca_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    }
    {
      Tape tape;
      Binding bind(tape, set, [](ParamId) { return false; });
      const Var xv = tape.constant(x);
      const auto t0 = Clock::now();
      const kernels::MacScope macs;
      self_attention_forward(xv, bind(paca.wq), bind(paca.wk), bind(paca.wv), bind(paca.wo), dims.heads);
      row.self_attn_macs = macs.count();
      row.self_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pama
