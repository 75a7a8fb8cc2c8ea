#ifndef IPIRM_AUTODIFF_HPP
#define IPIRM_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ipirm/tensor.hpp"

namespace ipirm {

class Tape;
class GradientMap;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  const Tape* tape() const noexcept { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using ForwardFn = std::function<Tensor(std::span<const Tensor* const> inputs)>;

/// Returns one gradient per input; an empty Tensor means "no contribution".
/// `needs[i]` is false when input i does not lead to a trainable leaf, in
/// which case the rule may skip computing it.
using BackwardFn = std::function<std::vector<Tensor>(
    std::span<const Tensor* const> inputs, const Tensor& output, const Tensor& grad_output,
    std::span<const bool> needs)>;

/// Records primitive operations in topological order. A tape is rebuilt for
/// every forward pass; nothing persists between passes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Adds a leaf. Only trainable leaves receive entries in the GradientMap.
  Var leaf(Tensor value, bool trainable = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Runs `forward` on the operand values, stores the result and the local
  /// derivative rule.
  Var record(std::string name, std::vector<Var> operands, ForwardFn forward,
             BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& name(std::size_t id) const { return nodes_.at(id).name; }
  bool owns(const Var& v) const noexcept { return v.tape_ == this && v.id_ < nodes_.size(); }

  /// Recomputes every node from the leaves, in recorded order.
  std::vector<Tensor> replay() const;

 private:
  friend class GradientMap;
  friend GradientMap backward(const Tape& tape, const Var& output);

  struct Node {
    std::string name;
    Tensor value;
    std::vector<std::size_t> operands;
    ForwardFn forward;
    BackwardFn backward;
    bool leaf = false;
    bool trainable = false;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

/// Gradients of a scalar output with respect to trainable leaves.
class GradientMap {
 public:
  bool contains(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  const Tensor& at(const Var& leaf) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend GradientMap backward(const Tape& tape, const Var& output);
  std::map<std::size_t, Tensor> grads_;
};

/// Reverse accumulation from a 1x1 output. Every trainable leaf gets an
/// entry, zero when the output does not depend on it.
GradientMap backward(const Tape& tape, const Var& output);

enum class Unary { relu, exp, log, neg, square, sigmoid, softplus };

/// Geometry of a square-kernel 2-D convolution over HWC-flattened rows.
struct ConvGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t in_size() const { return height * width * in_channels; }
  std::size_t out_size() const { return out_height() * out_width() * out_channels; }
  std::size_t patch_size() const { return kernel * kernel * in_channels; }
};

namespace ops {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
/// Adds a 1 x c row to every row of a.
Var add_row(const Var& a, const Var& row);
/// Multiplies every row of a elementwise by a 1 x c row.
Var mul_row(const Var& a, const Var& row);
Var add_scalar(const Var& a, double c);
Var scale(const Var& a, double c);

Var elementwise(const Var& a, Unary kind);
inline Var relu(const Var& a) { return elementwise(a, Unary::relu); }
inline Var exp(const Var& a) { return elementwise(a, Unary::exp); }
inline Var log(const Var& a) { return elementwise(a, Unary::log); }
inline Var neg(const Var& a) { return elementwise(a, Unary::neg); }
inline Var square(const Var& a) { return elementwise(a, Unary::square); }
inline Var sigmoid(const Var& a) { return elementwise(a, Unary::sigmoid); }
inline Var softplus(const Var& a) { return elementwise(a, Unary::softplus); }

/// Sum of all entries, 1x1.
Var sum(const Var& a);
/// Per-row sums, N x 1.
Var sum_rows(const Var& a);
/// Per-row dot products of two same-shape tensors, N x 1.
Var rowwise_dot(const Var& a, const Var& b);

/// Each row divided by max(||row||, epsilon).
Var l2_normalize_rows(const Var& a, double epsilon = 1e-8);
/// Per row: m + log sum exp(a - m), m the row maximum. N x 1.
Var log_sum_exp_rows(const Var& a);
/// Per row: log sum_c w_c exp(a_c) with non-negative weights. N x 1.
Var weighted_log_sum_exp_rows(const Var& a, const Var& weights);
/// Per row: sum_c p_c a_c with p the weighted softmax of the row. N x 1.
Var weighted_softmax_mean_rows(const Var& a, const Var& weights);

Var concat_rows(const Var& a, const Var& b);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);

/// Training-mode batch normalization over rows (biased batch variance).
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double epsilon);

/// x: N x (H*W*Cin), weight: (K*K*Cin) x Cout, bias: 1 x Cout.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geometry);
/// Non-overlapping average pooling over HWC rows.
Var avg_pool(const Var& x, std::size_t height, std::size_t width, std::size_t channels,
             std::size_t window);

}  // namespace ops

/// Untaped elementwise map, shares the rules of ops::elementwise.
Tensor apply_unary(const Tensor& a, Unary kind);

}  // namespace ipirm

#endif  // IPIRM_AUTODIFF_HPP
