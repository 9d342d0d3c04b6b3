#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pama/errors.hpp"
#include "pama/grad_check.hpp"
#include "pama/paca.hpp"
#include "support.hpp"

using namespace pama;
using pama::test::random_tensor;

namespace {

IndexMatrix random_index(std::size_t rows, std::size_t cols, std::uint32_t bound, Rng& rng) {
  IndexMatrix m(rows, cols);
  for (auto& v : m.data) v = static_cast<std::uint32_t>(rng.uniform_index(bound));
  return m;
}

// Positive attention rows summing to one.
Tensor random_attention(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor a(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += (a(i, j) = std::exp(2.0 * rng.normal()));
    for (std::size_t j = 0; j < cols; ++j) a(i, j) /= s;
  }
  return a;
}

struct PacaFixture {
  PacaDims dims;
  ParamSet set;
  PacaParams p;
};

PacaFixture make_paca(const PacaDims& dims, std::uint64_t seed, double table_scale = 0.5) {
  PacaFixture f{dims, {}, {}};
  Rng rng(seed);
  f.p = add_paca_params(f.set, "attn", dims, rng);
  for (double& v : f.set[f.p.phi_d].value.data()) v = table_scale * rng.normal();
  for (double& v : f.set[f.p.phi_p].value.data()) v = table_scale * rng.normal();
  return f;
}

struct Oracle {
  Tensor patches, anchors;
  std::vector<Tensor> a, abar;
};

// Loop-by-loop reimplementation of the PACA forward, no tape.
Oracle straight_line(const Tensor& x, const Tensor& k, const IndexMatrix& d, const PolarPlanes& polar,
                     const ParamSet& set, const PacaParams& p, const PacaDims& dims) {
  const Tensor& wq = set[p.wq].value;
  const Tensor& wk = set[p.wk].value;
  const Tensor& wv = set[p.wv].value;
  const Tensor& wo = set[p.wo].value;
  const Tensor& phi_d = set[p.phi_d].value;
  const Tensor& phi_p = set[p.phi_p].value;
  const std::size_t n_p = x.rows(), n_k = k.rows(), dim = dims.dim, de = dims.head_dim();
  const auto proj = [&](const Tensor& in, std::size_t row, const Tensor& w, std::size_t col) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += in(row, c) * w(c, col);
    return s;
  };
  Tensor cat_a(n_k, dim), cat_p(n_p, dim);
  Oracle o;
  for (std::size_t h = 0; h < dims.heads; ++h) {
    Tensor a(n_k, n_p), abar(n_p, n_k);
    for (std::size_t i = 0; i < n_k; ++i) {
      for (std::size_t j = 0; j < n_p; ++j) {
        double qk = 0.0, kq = 0.0;
        for (std::size_t e = h * de; e < (h + 1) * de; ++e) {
          qk += proj(k, i, wq, e) * proj(x, j, wk, e);
          kq += proj(x, j, wq, e) * proj(k, i, wk, e);
        }
        const double bias = phi_d(h, d(i, j)) + phi_p(h, polar[h](i, j));
        a(i, j) = qk / std::sqrt(static_cast<double>(de)) + bias;
        abar(j, i) = kq / std::sqrt(static_cast<double>(de)) + bias;
      }
    }
    for (Tensor* m : {&a, &abar}) {
      for (std::size_t r = 0; r < m->rows(); ++r) {
        double mx = -INFINITY, s = 0.0;
        for (std::size_t c = 0; c < m->cols(); ++c) mx = std::max(mx, (*m)(r, c));
        for (std::size_t c = 0; c < m->cols(); ++c) s += ((*m)(r, c) = std::exp((*m)(r, c) - mx));
        for (std::size_t c = 0; c < m->cols(); ++c) (*m)(r, c) /= s;
      }
    }
    for (std::size_t e = h * de; e < (h + 1) * de; ++e) {
      for (std::size_t i = 0; i < n_k; ++i) {
        for (std::size_t j = 0; j < n_p; ++j) cat_a(i, e) += a(i, j) * proj(x, j, wv, e);
      }
      for (std::size_t j = 0; j < n_p; ++j) {
        for (std::size_t i = 0; i < n_k; ++i) cat_p(j, e) += abar(j, i) * proj(k, i, wv, e);
      }
    }
    o.a.push_back(a);
    o.abar.push_back(abar);
  }
  o.anchors = Tensor(n_k, dim);
  o.patches = Tensor(n_p, dim);
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t i = 0; i < n_k; ++i) o.anchors(i, c) = proj(cat_a, i, wo, c);
    for (std::size_t j = 0; j < n_p; ++j) o.patches(j, c) = proj(cat_p, j, wo, c);
  }
  return o;
}

PolarPlanes random_planes(std::size_t heads, std::size_t rows, std::size_t cols, std::uint32_t bins, Rng& rng) {
  PolarPlanes planes;
  for (std::size_t h = 0; h < heads; ++h) planes.push_back(random_index(rows, cols, bins, rng));
  return planes;
}

// Histogram-then-argmax reference for one (head, anchor) row.
std::uint32_t reference_axis(const IndexMatrix& p, const Tensor& a, std::size_t row, std::uint32_t bins) {
  std::vector<double> mass(bins, 0.0);
  for (std::size_t j = 0; j < p.cols; ++j) mass[p(row, j)] += a(row, j);
  const double best = *std::max_element(mass.begin(), mass.end());
  for (std::uint32_t b = 0; b < bins; ++b) {
    if (mass[b] == best) return b;
  }
  return 0;
}

void expect_near(const Tensor& got, const Tensor& want, double tol) {
  ASSERT_TRUE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "entry " << i;
}

}  // namespace

TEST(Paca, MatchesStraightLineOracle) {
  const PacaDims dims{4, 2, 8, 6};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PacaFixture f = make_paca(dims, seed);
    Rng rng(100 + seed);
    const Tensor x = random_tensor(6, 4, rng), k = random_tensor(2, 4, rng);
    const IndexMatrix d = random_index(2, 6, 7, rng);
    const PolarPlanes polar = random_planes(2, 2, 6, 8, rng);
    Tape tape;
    Binding bind(tape, f.set);
    const PacaOutput out = paca_forward(bind, tape.constant(x), tape.constant(k), d, polar, f.p, dims);
    const Oracle o = straight_line(x, k, d, polar, f.set, f.p, dims);
    expect_near(out.patches.value(), o.patches, 1e-12);
    expect_near(out.anchors.value(), o.anchors, 1e-12);
    for (std::size_t h = 0; h < 2; ++h) {
      expect_near(out.state.anchor_to_patch[h], o.a[h], 1e-12);
      expect_near(out.state.patch_to_anchor[h], o.abar[h], 1e-12);
    }
  }
}

TEST(Paca, GradientsMatchFiniteDifferences) {
  const PacaDims dims{4, 2, 8, 6};
  PacaFixture f = make_paca(dims, 7);
  Rng rng(8);
  const IndexMatrix d = random_index(2, 6, 7, rng);
  const PolarPlanes polar = random_planes(2, 2, 6, 8, rng);
  const Tensor wa = random_tensor(2, 4, rng), wp = random_tensor(6, 4, rng);
  std::vector<Tensor> values = f.set.values();
  values.push_back(random_tensor(6, 4, rng));
  values.push_back(random_tensor(2, 4, rng));
  const std::size_t n_params = f.set.size();
  const auto objective = [&](Tape& tape, std::span<const Var> vars) {
    Binding bind(tape, f.set, vars.first(n_params));
    const PacaOutput out = paca_forward(bind, vars[n_params], vars[n_params + 1], d, polar, f.p, dims);
    return add(sum(mul(out.anchors, tape.constant(wa))), sum(mul(out.patches, tape.constant(wp))));
  };
  EXPECT_LT(grad_check(objective, values).max_rel_error, 1e-4);
}

TEST(Paca, AttentionRowsAreDistributions) {
  Rng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t heads = 1 + rng.uniform_index(4);
    const PacaDims dims{heads * (1 + rng.uniform_index(4)), heads, 8, 16};
    PacaFixture f = make_paca(dims, trial, 3.0);
    const std::size_t n_p = 1 + rng.uniform_index(40), n_k = 1 + rng.uniform_index(6);
    Tape tape;
    Binding bind(tape, f.set);
    const PacaOutput out =
        paca_forward(bind, tape.constant(random_tensor(n_p, dims.dim, rng, 5.0)),
                     tape.constant(random_tensor(n_k, dims.dim, rng, 5.0)), random_index(n_k, n_p, 17, rng),
                     random_planes(heads, n_k, n_p, 8, rng), f.p, dims);
    for (std::size_t h = 0; h < heads; ++h) {
      for (const Tensor* m : {&out.state.anchor_to_patch[h], &out.state.patch_to_anchor[h]}) {
        for (std::size_t r = 0; r < m->rows(); ++r) {
          const auto row = m->row(r);
          EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
        }
      }
    }
  }
}

TEST(Paca, SingleAnchorPoolsValueRows) {
  const PacaDims dims{4, 2, 8, 6};
  PacaFixture f = make_paca(dims, 11);
  Rng rng(12);
  const Tensor x = random_tensor(5, 4, rng);
  Tape tape;
  Binding bind(tape, f.set);
  const PacaOutput out = paca_forward(bind, tape.constant(x), tape.constant(random_tensor(1, 4, rng)),
                                      random_index(1, 5, 7, rng), random_planes(2, 1, 5, 8, rng), f.p, dims);
  // K~ = concat_h(A_h X Wv_h) Wo with each A_h a single distribution over the patches.
  const Tensor xv = kernels::matmul(x, f.set[f.p.wv].value);
  Tensor pooled(1, 4);
  for (std::size_t h = 0; h < 2; ++h) {
    const Tensor& a = out.state.anchor_to_patch[h];
    for (std::size_t e = 2 * h; e < 2 * h + 2; ++e) {
      for (std::size_t j = 0; j < 5; ++j) pooled(0, e) += a(0, j) * xv(j, e);
    }
  }
  expect_near(out.anchors.value(), kernels::matmul(pooled, f.set[f.p.wo].value), 1e-12);
}

TEST(Paca, ZeroTablesAndQueriesGiveUniformAttention) {
  const PacaDims dims{4, 2, 8, 6};
  PacaFixture f = make_paca(dims, 13, 0.0);
  f.set[f.p.wq].value = Tensor(4, 4);
  Rng rng(14);
  Tape tape;
  Binding bind(tape, f.set);
  const PacaOutput out = paca_forward(bind, tape.constant(random_tensor(7, 4, rng)), tape.constant(random_tensor(3, 4, rng)),
                                      random_index(3, 7, 7, rng), random_planes(2, 3, 7, 8, rng), f.p, dims);
  for (const Tensor& a : out.state.anchor_to_patch) {
    for (double v : a.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 7.0);
  }
}

TEST(Paca, CountedMacsMatchFormulaAndScaleLinearly) {
  const PacaDims dims{16, 4, 8, 32};
  PacaFixture f = make_paca(dims, 15);
  Rng rng(16);
  const std::size_t n_k = 8;
  std::vector<std::uint64_t> counted;
  for (std::size_t n_p : {256u, 512u, 1024u, 2048u}) {
    Tape tape;
    Binding bind(tape, f.set, [](ParamId) { return false; });
    const Var x = tape.constant(random_tensor(n_p, 16, rng));
    const Var k = tape.constant(random_tensor(n_k, 16, rng));
    const IndexMatrix d = random_index(n_k, n_p, 33, rng);
    const PolarPlanes polar = random_planes(4, n_k, n_p, 8, rng);
    kernels::MacScope scope;
    (void)paca_forward(bind, x, k, d, polar, f.p, dims);
    counted.push_back(scope.count());
    EXPECT_EQ(scope.count(), paca_macs(n_p, n_k, dims));
  }
  for (std::size_t i = 1; i < counted.size(); ++i) {
    const double ratio = static_cast<double>(counted[i]) / static_cast<double>(counted[i - 1]);
    EXPECT_GE(ratio, 1.9);
    EXPECT_LE(ratio, 2.1);
  }
}

TEST(Paca, ShapeMismatchesThrow) {
  const PacaDims dims{4, 2, 8, 6};
  PacaFixture f = make_paca(dims, 17);
  Rng rng(18);
  Tape tape;
  Binding bind(tape, f.set);
  const Var x = tape.constant(random_tensor(5, 4, rng)), k = tape.constant(random_tensor(2, 4, rng));
  const PolarPlanes polar = random_planes(2, 2, 5, 8, rng);
  EXPECT_THROW(paca_forward(bind, x, k, random_index(2, 4, 7, rng), polar, f.p, dims), DimensionError);
  EXPECT_THROW(paca_forward(bind, x, k, random_index(2, 5, 7, rng), random_planes(1, 2, 5, 8, rng), f.p, dims),
               DimensionError);
  EXPECT_THROW(paca_forward(bind, tape.constant(random_tensor(5, 3, rng)), k, random_index(2, 5, 7, rng), polar, f.p, dims),
               DimensionError);
  EXPECT_THROW(paca_forward(bind, x, k, IndexMatrix(2, 5, 7), polar, f.p, dims), BoundsError);
  EXPECT_THROW((PacaDims{6, 4, 8, 6}.validate()), ConfigError);
}

TEST(DistancePrior, LinearPenaltyPerHeadWithNeutralLastBucket) {
  const Tensor t = distance_prior(PacaDims{8, 4, 8, 5});
  ASSERT_EQ(t.rows(), 4u);
  ASSERT_EQ(t.cols(), 6u);
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::uint32_t d = 0; d < 5; ++d) EXPECT_EQ(t(h, d), -std::ldexp(1.0, -static_cast<int>(h)) * d);
    EXPECT_EQ(t(h, 5), 0.0);
  }
}

TEST(KernelReorient, AlignedInputIsUnchanged) {
  const PolarPlanes p = {IndexMatrix(2, 5, 0)};
  const std::vector<Tensor> a = {Tensor(2, 5, 0.2)};
  EXPECT_EQ(kernel_reorient(p, a, 8), p);
}

TEST(KernelReorient, WorkedExample) {
  IndexMatrix p(1, 4);
  p.data = {1, 1, 2, 3};
  const std::vector<Tensor> a = {Tensor::from_rows({{0.4, 0.4, 0.1, 0.1}})};
  const PolarPlanes out = kernel_reorient({p}, a, 8);
  EXPECT_EQ(out[0].data, (std::vector<std::uint32_t>{0, 0, 1, 2}));
}

TEST(KernelReorient, TiesGoToSmallestBinAndWrapAround) {
  IndexMatrix p(1, 4);
  p.data = {6, 2, 7, 0};
  const std::vector<Tensor> a = {Tensor::from_rows({{0.3, 0.3, 0.2, 0.2}})};
  // Bins 2 and 6 tie at 0.3; bin 2 wins.
  EXPECT_EQ(kernel_reorient({p}, a, 8)[0].data, (std::vector<std::uint32_t>{4, 0, 5, 6}));
}

TEST(KernelReorient, MatchesBruteForceAndPutsMaximumAtBinZero) {
  Rng rng(19);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint32_t bins = std::array<std::uint32_t, 3>{4, 8, 16}[rng.uniform_index(3)];
    const std::size_t heads = 1 + rng.uniform_index(4), n_k = 1 + rng.uniform_index(8), n_p = 1 + rng.uniform_index(64);
    const PolarPlanes p = random_planes(heads, n_k, n_p, bins, rng);
    std::vector<Tensor> a;
    for (std::size_t h = 0; h < heads; ++h) a.push_back(random_attention(n_k, n_p, rng));
    const PolarPlanes out = kernel_reorient(p, a, bins);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n_k; ++i) {
        const std::uint32_t axis = reference_axis(p[h], a[h], i, bins);
        for (std::size_t j = 0; j < n_p; ++j) ASSERT_EQ(out[h](i, j), (p[h](i, j) + bins - axis) % bins);
        std::vector<double> mass(bins, 0.0);
        for (std::size_t j = 0; j < n_p; ++j) mass[out[h](i, j)] += a[h](i, j);
        for (std::uint32_t b = 1; b < bins; ++b) ASSERT_GE(mass[0], mass[b]);
      }
    }
  }
}

TEST(KernelReorient, InvariantToShiftingAnchorRows) {
  Rng rng(20);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint32_t bins = std::array<std::uint32_t, 3>{4, 8, 16}[rng.uniform_index(3)];
    const std::size_t heads = 1 + rng.uniform_index(4), n_k = 1 + rng.uniform_index(8), n_p = 1 + rng.uniform_index(64);
    const PolarPlanes p = random_planes(heads, n_k, n_p, bins, rng);
    std::vector<Tensor> a;
    for (std::size_t h = 0; h < heads; ++h) a.push_back(random_attention(n_k, n_p, rng));
    PolarPlanes shifted = p;
    for (auto& plane : shifted) {
      for (std::size_t i = 0; i < n_k; ++i) {
        const auto k = static_cast<std::uint32_t>(rng.uniform_index(bins));
        for (std::size_t j = 0; j < n_p; ++j) plane(i, j) = (plane(i, j) + k) % bins;
      }
    }
    ASSERT_EQ(kernel_reorient(shifted, a, bins), kernel_reorient(p, a, bins));
  }
}

TEST(KernelReorient, RejectsMismatchedInput) {
  Rng rng(21);
  const PolarPlanes p = random_planes(2, 3, 4, 8, rng);
  const std::vector<Tensor> one = {random_attention(3, 4, rng)};
  EXPECT_THROW(kernel_reorient(p, one, 8), DimensionError);
  const std::vector<Tensor> wrong = {random_attention(3, 5, rng), random_attention(3, 5, rng)};
  EXPECT_THROW(kernel_reorient(p, wrong, 8), DimensionError);
  const std::vector<Tensor> ok = {random_attention(3, 4, rng), random_attention(3, 4, rng)};
  EXPECT_THROW(kernel_reorient(p, ok, 4), BoundsError);
}

TEST(AnchorDropout, NoDropKeepsAll) {
  Rng rng(22);
  const auto keep = anchor_dropout(50, 0.0, true, rng);
  EXPECT_TRUE(std::all_of(keep.begin(), keep.end(), [](bool b) { return b; }));
}

TEST(AnchorDropout, EvalKeepsAllAndLeavesRngUntouched) {
  Rng rng(23), twin(23);
  const auto keep = anchor_dropout(50, 0.9, false, rng);
  EXPECT_TRUE(std::all_of(keep.begin(), keep.end(), [](bool b) { return b; }));
  EXPECT_EQ(rng.next_u64(), twin.next_u64());
}

TEST(AnchorDropout, KeepRateConcentrates) {
  Rng rng(24);
  const auto keep = anchor_dropout(10000, 0.2, true, rng);
  const double rate = static_cast<double>(std::count(keep.begin(), keep.end(), true)) / 10000.0;
  EXPECT_NEAR(rate, 0.8, 0.02);
}

TEST(AnchorDropout, NeverDropsEveryAnchor) {
  Rng rng(25);
  for (int trial = 0; trial < 500; ++trial) {
    const auto keep = anchor_dropout(2, 0.95, true, rng);
    EXPECT_TRUE(keep[0] || keep[1]);
  }
}

TEST(AnchorDropout, RejectsInvalidRate) {
  Rng rng(26);
  EXPECT_THROW(anchor_dropout(4, 1.0, true, rng), ConfigError);
  EXPECT_THROW(anchor_dropout(4, -0.1, true, rng), ConfigError);
}

namespace {

struct BlockFixture {
  PacaDims dims;
  ParamSet set;
  BlockParams p;
};

BlockFixture make_block(const PacaDims& dims, std::uint64_t seed) {
  BlockFixture f{dims, {}, {}};
  Rng rng(seed);
  f.p = add_block_params(f.set, "blk", dims, 4, rng);
  // Move every table, norm and bias off its initial value so gradients are generic.
  for (auto& param : f.set) {
    for (double& v : param.value.data()) v += 0.3 * rng.normal();
  }
  return f;
}

}  // namespace

TEST(EncoderBlock, PreservesShapes) {
  const PacaDims dims{8, 2, 8, 10};
  BlockFixture f = make_block(dims, 27);
  Rng rng(28);
  Tape tape;
  Binding bind(tape, f.set);
  const BlockOutput out =
      encoder_block(bind, tape.constant(random_tensor(12, 8, rng)), tape.constant(random_tensor(2, 8, rng)),
                    random_index(2, 12, 11, rng), random_planes(2, 2, 12, 8, rng), f.p, dims, true);
  EXPECT_EQ(out.patches.value().shape(), (std::array<std::size_t, 2>{12, 8}));
  EXPECT_EQ(out.anchors.value().shape(), (std::array<std::size_t, 2>{2, 8}));
  ASSERT_EQ(out.next_polar.size(), 2u);
  EXPECT_EQ(out.next_polar[0].rows, 2u);
  EXPECT_EQ(out.next_polar[0].cols, 12u);
}

TEST(EncoderBlock, GradientsMatchFiniteDifferences) {
  const PacaDims dims{8, 2, 8, 10};
  BlockFixture f = make_block(dims, 29);
  Rng rng(30);
  const IndexMatrix d = random_index(2, 12, 11, rng);
  const PolarPlanes polar = random_planes(2, 2, 12, 8, rng);
  const Tensor wp = random_tensor(12, 8, rng), wa = random_tensor(2, 8, rng);
  std::vector<Tensor> values = f.set.values();
  values.push_back(random_tensor(12, 8, rng));
  values.push_back(random_tensor(2, 8, rng));
  const std::size_t n = f.set.size();
  const auto objective = [&](Tape& tape, std::span<const Var> vars) {
    Binding bind(tape, f.set, vars.first(n));
    const BlockOutput out = encoder_block(bind, vars[n], vars[n + 1], d, polar, f.p, dims, true);
    return add(sum(mul(out.patches, tape.constant(wp))), sum(mul(out.anchors, tape.constant(wa))));
  };
  EXPECT_LT(grad_check(objective, values).max_rel_error, 1e-4);
}

TEST(EncoderBlock, PatchPermutationEquivariance) {
  const PacaDims dims{8, 2, 8, 10};
  BlockFixture f = make_block(dims, 31);
  Rng rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n_p = 5 + rng.uniform_index(20), n_k = 1 + rng.uniform_index(4);
    const Tensor x = random_tensor(n_p, 8, rng), k = random_tensor(n_k, 8, rng);
    const IndexMatrix d = random_index(n_k, n_p, 11, rng);
    const PolarPlanes polar = random_planes(2, n_k, n_p, 8, rng);
    std::vector<std::size_t> perm(n_p);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n_p - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    Tensor xp(n_p, 8);
    for (std::size_t j = 0; j < n_p; ++j) std::copy_n(x.row(perm[j]).begin(), 8, xp.row(j).begin());
    PolarPlanes polar_p;
    for (const auto& plane : polar) polar_p.push_back(plane.select_cols(perm));

    Tape tape;
    Binding bind(tape, f.set);
    const BlockOutput a = encoder_block(bind, tape.constant(x), tape.constant(k), d, polar, f.p, dims, true);
    const BlockOutput b =
        encoder_block(bind, tape.constant(xp), tape.constant(k), d.select_cols(perm), polar_p, f.p, dims, true);
    for (std::size_t j = 0; j < n_p; ++j) {
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(b.patches.value()(j, c), a.patches.value()(perm[j], c), 1e-12);
    }
    expect_near(b.anchors.value(), a.anchors.value(), 1e-12);
    for (std::size_t h = 0; h < 2; ++h) EXPECT_EQ(b.next_polar[h], a.next_polar[h].select_cols(perm));
  }
}

TEST(EncoderBlock, FixedAxisPassesPolarThrough) {
  const PacaDims dims{8, 2, 8, 10};
  BlockFixture f = make_block(dims, 33);
  Rng rng(34);
  const PolarPlanes polar = random_planes(2, 3, 9, 8, rng);
  Tape tape;
  Binding bind(tape, f.set);
  const BlockOutput out = encoder_block(bind, tape.constant(random_tensor(9, 8, rng)),
                                        tape.constant(random_tensor(3, 8, rng)), random_index(3, 9, 11, rng), polar,
                                        f.p, dims, false);
  EXPECT_EQ(out.next_polar, polar);
  EXPECT_EQ(out.state.polar, polar);
}
