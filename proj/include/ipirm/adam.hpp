#ifndef IPIRM_ADAM_HPP
#define IPIRM_ADAM_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "ipirm/tensor.hpp"

namespace ipirm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(std::span<const Tensor* const> params);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. params[i] -= lr * mhat / (sqrt(vhat) + eps).
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& config);

}  // namespace ipirm

#endif  // IPIRM_ADAM_HPP
