#include "pama/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "pama/errors.hpp"

namespace pama {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

MutMap view(Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged initializer for tensor");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

IndexMatrix IndexMatrix::select_cols(std::span<const std::size_t> keep) const {
  IndexMatrix out(rows, keep.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < keep.size(); ++j) out(r, j) = (*this)(r, keep[j]);
  }
  return out;
}

IndexMatrix IndexMatrix::select_rows(std::span<const std::size_t> keep) const {
  IndexMatrix out(keep.size(), cols);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(keep[i] * cols), cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return out;
}

std::uint32_t IndexMatrix::max_value() const {
  return data.empty() ? 0 : *std::max_element(data.begin(), data.end());
}

namespace kernels {

std::uint64_t& mac_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + shape_str(a) + " * " + shape_str(b) + ")");
  }
  Tensor out(a.rows(), b.cols());
  if (out.size() != 0 && a.cols() != 0) view(out).noalias() = view(a) * view(b);
  mac_counter() += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ (" + shape_str(a) + " * " + shape_str(b) + "^T)");
  }
  Tensor out(a.rows(), b.rows());
  if (out.size() != 0 && a.cols() != 0) view(out).noalias() = view(a) * view(b).transpose();
  mac_counter() += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.rows();
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dimensions differ (" + shape_str(a) + "^T * " + shape_str(b) + ")");
  }
  Tensor out(a.cols(), b.cols());
  if (out.size() != 0 && a.rows() != 0) view(out).noalias() = view(a).transpose() * view(b);
  mac_counter() += static_cast<std::uint64_t>(a.cols()) * a.rows() * b.cols();
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

void softmax_rows_inplace(Tensor& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    if (row.empty()) continue;
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    const double inv = 1.0 / total;
    for (double& v : row) v *= inv;
  }
}

}  // namespace kernels

}  // namespace pama
