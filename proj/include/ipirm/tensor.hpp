#ifndef IPIRM_TENSOR_HPP
#define IPIRM_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ipirm {

/// Dense row-major matrix of doubles. Vectors are N x 1 columns or 1 x N rows.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor column(std::span<const double> values);
  static Tensor scalar(double value) { return Tensor(1, 1, value); }
  static Tensor identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  /// The single entry of a 1 x 1 tensor.
  double item() const;

  std::string shape_string() const;
  bool same_shape(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  void fill(double value);
  /// this += other (same shape).
  void accumulate(const Tensor& other);

  Tensor select_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Plain (untaped) kernels shared by the differentiable ops.
namespace kernels {

/// out = a * b
Tensor matmul(const Tensor& a, const Tensor& b);
/// out = a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// out = a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);

}  // namespace kernels

}  // namespace ipirm

#endif  // IPIRM_TENSOR_HPP
