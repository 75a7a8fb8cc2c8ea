#include "ipirm/adam.hpp"

#include <cmath>

#include "ipirm/error.hpp"

namespace ipirm {

AdamState AdamState::zeros_like(std::span<const Tensor* const> params) {
  AdamState state;
  for (const Tensor* p : params) {
    state.m.emplace_back(p->rows(), p->cols());
    state.v.emplace_back(p->rows(), p->cols());
  }
  return state;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v)) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(k) + " (" +
                           p.shape_string() + ")");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      p[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace ipirm
