#include "pama/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pama/errors.hpp"

namespace pama {

namespace {

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw UsageError("variable is not bound to a tape");
  return *v.tape;
}

Tape& common_tape(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("operands live on different tapes");
  return tape_of(a);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

// ---- BackwardContext ----------------------------------------------------

const Tensor& BackwardContext::grad_out() const { return tape_.nodes_[node_].grad; }
const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}

bool BackwardContext::needs(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}

Tensor& BackwardContext::grad_in(std::size_t k) const {
  return tape_.grad_buffer(tape_.nodes_[node_].inputs[k]);
}

void BackwardContext::accumulate(std::size_t k, const Tensor& g) const {
  if (!needs(k)) return;
  Tensor& buf = grad_in(k);
  require_same_shape(buf, g, "gradient accumulation");
  add_into(buf, g);
}

// ---- Tape ---------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this) throw UsageError("op input recorded on a different tape");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("loss is not recorded on this tape");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw UsageError("backward requires a scalar (1x1) loss, got " + std::to_string(lv.rows()) + "x" +
                     std::to_string(lv.cols()));
  }
  if (backward_done_) throw UsageError("backward already ran on this tape; reset it first");
  backward_done_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(BackwardContext(*this, i));
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---- ops ----------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  return t.record(kernels::matmul(a.value(), b.value()), {a, b}, [](const BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.accumulate(0, kernels::matmul_nt(ctx.grad_out(), ctx.input(1)));
    if (ctx.needs(1)) ctx.accumulate(1, kernels::matmul_tn(ctx.input(0), ctx.grad_out()));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = common_tape(a, b);
  return t.record(kernels::matmul_nt(a.value(), b.value()), {a, b}, [](const BackwardContext& ctx) {
    // c = a b^T: dA = dC b, dB = dC^T a
    if (ctx.needs(0)) ctx.accumulate(0, kernels::matmul(ctx.grad_out(), ctx.input(1)));
    if (ctx.needs(1)) ctx.accumulate(1, kernels::matmul_tn(ctx.grad_out(), ctx.input(0)));
  });
}

Var transpose(Var a) {
  return tape_of(a).record(kernels::transpose(a.value()), {a}, [](const BackwardContext& ctx) {
    ctx.accumulate(0, kernels::transpose(ctx.grad_out()));
  });
}

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  add_into(out, b.value());
  return t.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad_out());
    ctx.accumulate(1, ctx.grad_out());
  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return t.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad_out());
    if (ctx.needs(1)) {
      auto g = ctx.grad_out().data();
      auto dst = ctx.grad_in(1).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return t.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    auto g = ctx.grad_out().data();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.needs(k)) continue;
      auto other = ctx.input(1 - k).data();
      auto dst = ctx.grad_in(k).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return tape_of(a).record(std::move(out), {a}, [s](const BackwardContext& ctx) {
    auto g = ctx.grad_out().data();
    auto dst = ctx.grad_in(0).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
  });
}

Var add_row(Var a, Var row) {
  Tape& t = common_tape(a, row);
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != a.cols()) {
    throw DimensionError("add_row: bias must be 1x" + std::to_string(a.cols()));
  }
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += rv[c];
  }
  return t.record(std::move(out), {a, row}, [](const BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad_out());
    if (ctx.needs(1)) {
      const Tensor& g = ctx.grad_out();
      Tensor& dst = ctx.grad_in(1);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += g(r, c);
      }
    }
  });
}

Var softmax_rows(Var m) {
  Tensor out = m.value();
  kernels::softmax_rows_inplace(out);
  return tape_of(m).record(std::move(out), {m}, [](const BackwardContext& ctx) {
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.grad_out();
    Tensor& dst = ctx.grad_in(0);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dst(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = common_tape(x, gamma);
  common_tape(x, beta);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (d == 0) throw DimensionError("layer_norm: feature dimension must be >= 1");
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  // Saved per row: normalised activations and 1/sqrt(var + eps).
  Tensor xhat(n, d);
  std::vector<double> inv_std(n);
  Tensor out(n, d);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (row[c] - mu) * inv_std[r];
      out(r, c) = gv[c] * xhat(r, c) + bv[c];
    }
  }
  return t.record(std::move(out), {x, gamma, beta},
                  [xhat = std::move(xhat), inv_std = std::move(inv_std)](const BackwardContext& ctx) {
                    const Tensor& g = ctx.grad_out();
                    const Tensor& gv = ctx.input(1);
                    const std::size_t n = g.rows();
                    const std::size_t d = g.cols();
                    if (ctx.needs(0)) {
                      Tensor& dx = ctx.grad_in(0);
                      for (std::size_t r = 0; r < n; ++r) {
                        double sum_g = 0.0;
                        double sum_gx = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                          const double gh = g(r, c) * gv[c];
                          sum_g += gh;
                          sum_gx += gh * xhat(r, c);
                        }
                        const double inv_d = 1.0 / static_cast<double>(d);
                        for (std::size_t c = 0; c < d; ++c) {
                          const double gh = g(r, c) * gv[c];
                          dx(r, c) += inv_std[r] * (gh - inv_d * sum_g - xhat(r, c) * inv_d * sum_gx);
                        }
                      }
                    }
                    if (ctx.needs(1)) {
                      Tensor& dg = ctx.grad_in(1);
                      for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t c = 0; c < d; ++c) dg[c] += g(r, c) * xhat(r, c);
                      }
                    }
                    if (ctx.needs(2)) {
                      Tensor& db = ctx.grad_in(2);
                      for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t c = 0; c < d; ++c) db[c] += g(r, c);
                      }
                    }
                  });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return tape_of(x).record(std::move(out), {x}, [](const BackwardContext& ctx) {
    auto in = ctx.input(0).data();
    auto g = ctx.grad_out().data();
    auto dst = ctx.grad_in(0).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dst[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var table_lookup(Var table, const IndexMatrix& idx) {
  const Tensor& tv = table.value();
  if (tv.rows() != 1 && tv.cols() != 1) throw DimensionError("table_lookup: table must be a vector");
  const std::size_t v = tv.size();
  Tensor out(idx.rows, idx.cols);
  for (std::size_t i = 0; i < idx.data.size(); ++i) {
    const std::uint32_t k = idx.data[i];
    if (k >= v) {
      throw BoundsError("table_lookup: index " + std::to_string(k) + " outside table of size " +
                        std::to_string(v));
    }
    out[i] = tv[k];
  }
  return tape_of(table).record(std::move(out), {table}, [idx](const BackwardContext& ctx) {
    auto g = ctx.grad_out().data();
    Tensor& dst = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) dst[idx.data[i]] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.cols()) throw DimensionError("slice_cols: range outside tensor");
  const std::size_t w = end - begin;
  Tensor out(av.rows(), w);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.row(r).begin() + static_cast<std::ptrdiff_t>(begin), w, out.row(r).begin());
  }
  return tape_of(a).record(std::move(out), {a}, [begin, w](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& dst = ctx.grad_in(0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < w; ++c) dst(r, begin + c) += g(r, c);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: nothing to concatenate");
  Tape& t = tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  Tensor out(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offsets[k]));
    }
  }
  return t.record(std::move(out), {parts.begin(), parts.end()}, [offsets](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (!ctx.needs(k)) continue;
      Tensor& dst = ctx.grad_in(k);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < dst.cols(); ++c) dst(r, c) += g(r, offsets[k] + c);
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_rows: nothing to concatenate");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().cols();
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    offsets.push_back(rows);
    rows += p.rows();
    const auto src = p.value().data();
    data.insert(data.end(), src.begin(), src.end());
  }
  return t.record(Tensor(rows, cols, std::move(data)), {parts.begin(), parts.end()},
                  [offsets](const BackwardContext& ctx) {
                    const Tensor& g = ctx.grad_out();
                    for (std::size_t k = 0; k < offsets.size(); ++k) {
                      if (!ctx.needs(k)) continue;
                      Tensor& dst = ctx.grad_in(k);
                      auto src = g.data().subspan(offsets[k] * g.cols(), dst.size());
                      auto d = dst.data();
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
                    }
                  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  Tensor out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw BoundsError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy(av.row(rows[i]).begin(), av.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return tape_of(a).record(std::move(out), {a}, [saved = std::move(saved)](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& dst = ctx.grad_in(0);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto d = dst.row(saved[i]);
      auto s = g.row(i);
      for (std::size_t c = 0; c < d.size(); ++c) d[c] += s[c];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape_of(a).record(Tensor(1, 1, total), {a}, [](const BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (double& d : ctx.grad_in(0).data()) d += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) throw DimensionError("cross_entropy: logits must be a single row");
  if (label >= lv.cols()) {
    throw BoundsError("cross_entropy: label " + std::to_string(label) + " >= " + std::to_string(lv.cols()) +
                      " classes");
  }
  Tensor probs = lv;
  kernels::softmax_rows_inplace(probs);
  const double peak = *std::max_element(lv.data().begin(), lv.data().end());
  double total = 0.0;
  for (double v : lv.data()) total += std::exp(v - peak);
  const double loss = peak + std::log(total) - lv[label];
  return tape_of(logits).record(Tensor(1, 1, loss), {logits},
                                [probs = std::move(probs), label](const BackwardContext& ctx) {
                                  const double g = ctx.grad_out()[0];
                                  Tensor& dst = ctx.grad_in(0);
                                  for (std::size_t c = 0; c < probs.cols(); ++c) {
                                    dst[c] += g * (probs[c] - (c == label ? 1.0 : 0.0));
                                  }
                                });
}

Var mlp_forward(Var x, Var w1, Var b1, Var w2, Var b2) {
  return add_row(matmul(gelu(add_row(matmul(x, w1), b1)), w2), b2);
}

}  // namespace pama
