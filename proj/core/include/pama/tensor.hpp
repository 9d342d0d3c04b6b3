#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace pama {

/// Dense row-major matrix of doubles. Vectors are stored as 1 x n.
///
/// The element count always equals rows * cols; constructors reject
/// anything else with a DimensionError.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row_vector(std::vector<double> values);
  static Tensor identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Row-major matrix of unsigned indices (distance buckets, polar bins).
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> data;

  IndexMatrix() = default;
  IndexMatrix(std::size_t r, std::size_t c, std::uint32_t fill = 0) : rows(r), cols(c), data(r * c, fill) {}

  std::uint32_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::uint32_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  /// Keeps only the listed columns, in the given order.
  IndexMatrix select_cols(std::span<const std::size_t> keep) const;
  /// Keeps only the listed rows, in the given order.
  IndexMatrix select_rows(std::span<const std::size_t> keep) const;
  std::uint32_t max_value() const;

  friend bool operator==(const IndexMatrix&, const IndexMatrix&) = default;
};

/// Plain (non-recording) kernels shared by the tape ops. Every multiply-add
/// performed by the matmul kernels is added to a thread-local counter so the
/// cost of a forward pass can be measured exactly.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);
void softmax_rows_inplace(Tensor& m);

std::uint64_t& mac_counter();

/// Reports the MACs counted since construction.
class MacScope {
 public:
  MacScope() : start_(mac_counter()) {}
  std::uint64_t count() const { return mac_counter() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace kernels

}  // namespace pama
