#include "ipirm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ipirm/error.hpp"

namespace ipirm {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw UsageError("value() on an unbound Var");
  return tape_->value(id_);
}

Var Tape::leaf(Tensor value, bool trainable) {
  Node node;
  node.name = trainable ? "param" : "const";
  node.value = std::move(value);
  node.leaf = true;
  node.trainable = trainable;
  node.requires_grad = trainable;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string name, std::vector<Var> operands, ForwardFn forward,
                 BackwardFn backward) {
  Node node;
  node.name = std::move(name);
  std::vector<const Tensor*> inputs;
  inputs.reserve(operands.size());
  for (const Var& v : operands) {
    if (!owns(v)) throw UsageError("operand of '" + node.name + "' is not on this tape");
    node.operands.push_back(v.id_);
    node.requires_grad = node.requires_grad || nodes_[v.id_].requires_grad;
    inputs.push_back(&nodes_[v.id_].value);
  }
  node.value = forward(inputs);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor*> inputs;
  for (const Node& node : nodes_) {
    if (node.leaf) {
      values.push_back(node.value);
      continue;
    }
    inputs.clear();
    for (std::size_t op : node.operands) inputs.push_back(&values[op]);
    values.push_back(node.forward(inputs));
  }
  return values;
}

const Tensor& GradientMap::at(const Var& leaf) const {
  const auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw UsageError("no gradient recorded for this leaf");
  return it->second;
}

GradientMap backward(const Tape& tape, const Var& output) {
  if (!tape.owns(output)) throw UsageError("backward: output was not produced by this tape");
  const Tensor& out_value = tape.value(output.id());
  if (out_value.rows() != 1 || out_value.cols() != 1) {
    throw UsageError("backward: output must be 1x1, got " + out_value.shape_string());
  }

  const auto& nodes = tape.nodes_;
  std::vector<Tensor> grads(nodes.size());
  grads[output.id()] = Tensor::scalar(1.0);

  std::vector<const Tensor*> inputs;
  std::unique_ptr<bool[]> needs;
  std::size_t needs_capacity = 0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    const auto& node = nodes[i];
    if (node.leaf || !node.requires_grad || grads[i].empty()) continue;
    if (node.operands.size() > needs_capacity) {
      needs_capacity = node.operands.size();
      needs = std::make_unique<bool[]>(needs_capacity);
    }
    inputs.clear();
    for (std::size_t k = 0; k < node.operands.size(); ++k) {
      inputs.push_back(&nodes[node.operands[k]].value);
      needs[k] = nodes[node.operands[k]].requires_grad;
    }

    std::vector<Tensor> local = node.backward(inputs, node.value, grads[i],
                                              std::span<const bool>(needs.get(), node.operands.size()));
    for (std::size_t k = 0; k < node.operands.size(); ++k) {
      if (k >= local.size() || local[k].empty() || !needs[k]) continue;
      Tensor& target = grads[node.operands[k]];
      if (target.empty()) {
        target = std::move(local[k]);
      } else {
        target.accumulate(local[k]);
      }
    }
    // Interior gradients are no longer needed once propagated.
    grads[i] = Tensor();
  }

  GradientMap result;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].trainable) continue;
    if (grads[i].empty()) {
      result.grads_.emplace(i, Tensor(nodes[i].value.rows(), nodes[i].value.cols()));
    } else {
      result.grads_.emplace(i, std::move(grads[i]));
    }
  }
  return result;
}

namespace {

Tape& tape_of(const Var& a) {
  // Var only hands out const Tape*; the ops record onto the same tape.
  return const_cast<Tape&>(*a.tape());
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw UsageError(std::string(op) + ": operands live on different tapes");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

double sigmoid_value(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor transform(const Tensor& a, auto&& fn) {
  Tensor out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

}  // namespace

Tensor apply_unary(const Tensor& a, Unary kind) {
  switch (kind) {
    case Unary::relu:
      return transform(a, [](double x) { return x > 0 ? x : 0.0; });
    case Unary::exp:
      return transform(a, [](double x) { return std::exp(x); });
    case Unary::log: {
      const auto d = a.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(d[i] > 0)) {
          throw DomainError("log of non-positive entry " + std::to_string(d[i]) + " at (" +
                            std::to_string(i / a.cols()) + ", " +
                            std::to_string(i % a.cols()) + ")");
        }
      }
      return transform(a, [](double x) { return std::log(x); });
    }
    case Unary::neg:
      return transform(a, [](double x) { return -x; });
    case Unary::square:
      return transform(a, [](double x) { return x * x; });
    case Unary::sigmoid:
      return transform(a, sigmoid_value);
    case Unary::softplus:
      return transform(a, softplus_value);
  }
  throw UsageError("unknown unary kind");
}

namespace ops {

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.value().shape_string() + " x " +
                         b.value().shape_string());
  }
  return tape_of(a).record(
      "matmul", {a, b},
      [](std::span<const Tensor* const> in) { return kernels::matmul(*in[0], *in[1]); },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = kernels::matmul_nt(g, *in[1]);
        if (needs[1]) out[1] = kernels::matmul_tn(*in[0], g);
        return out;
      });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt shape mismatch: " + a.value().shape_string() + " x (" +
                         b.value().shape_string() + ")^T");
  }
  return tape_of(a).record(
      "matmul_nt", {a, b},
      [](std::span<const Tensor* const> in) { return kernels::matmul_nt(*in[0], *in[1]); },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = kernels::matmul(g, *in[1]);
        if (needs[1]) out[1] = kernels::matmul_tn(g, *in[0]);
        return out;
      });
}

namespace {

template <typename Fwd, typename Bwd>
Var binary_same_shape(const char* name, const Var& a, const Var& b, Fwd fwd, Bwd bwd) {
  require_same_tape(a, b, name);
  require_same_shape(a.value(), b.value(), name);
  return tape_of(a).record(
      name, {a, b},
      [fwd](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        Tensor out(x.rows(), x.cols());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
        return out;
      },
      [bwd](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
            std::span<const bool> needs) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = Tensor(x.rows(), x.cols());
        if (needs[1]) out[1] = Tensor(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const auto [da, db] = bwd(x[i], y[i], g[i]);
          if (needs[0]) out[0][i] = da;
          if (needs[1]) out[1][i] = db;
        }
        return out;
      });
}

struct Pair {
  double first;
  double second;
};

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_same_shape(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return Pair{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  return binary_same_shape(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return Pair{g, -g}; });
}

Var mul(const Var& a, const Var& b) {
  return binary_same_shape(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return Pair{g * y, g * x}; });
}

Var div(const Var& a, const Var& b) {
  const auto d = b.value().data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0) throw DomainError("div: zero divisor at flat index " + std::to_string(i));
  }
  return binary_same_shape(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g) { return Pair{g / y, -g * x / (y * y)}; });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: row " + row.value().shape_string() + " does not match " +
                         a.value().shape_string());
  }
  return tape_of(a).record(
      "add_row", {a, row},
      [](std::span<const Tensor* const> in) {
        Tensor out = *in[0];
        const Tensor& r = *in[1];
        for (std::size_t i = 0; i < out.rows(); ++i) {
          auto dst = out.row(i);
          for (std::size_t j = 0; j < out.cols(); ++j) dst[j] += r[j];
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = g;
        if (needs[1]) {
          Tensor gr(1, in[1]->cols());
          for (std::size_t i = 0; i < g.rows(); ++i) {
            const auto src = g.row(i);
            for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += src[j];
          }
          out[1] = std::move(gr);
        }
        return out;
      });
}

Var mul_row(const Var& a, const Var& row) {
  require_same_tape(a, row, "mul_row");
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("mul_row: row " + row.value().shape_string() + " does not match " +
                         a.value().shape_string());
  }
  return tape_of(a).record(
      "mul_row", {a, row},
      [](std::span<const Tensor* const> in) {
        Tensor out = *in[0];
        const Tensor& r = *in[1];
        for (std::size_t i = 0; i < out.rows(); ++i) {
          auto dst = out.row(i);
          for (std::size_t j = 0; j < out.cols(); ++j) dst[j] *= r[j];
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        const Tensor& a = *in[0];
        const Tensor& r = *in[1];
        std::vector<Tensor> out(2);
        if (needs[0]) {
          Tensor ga = g;
          for (std::size_t i = 0; i < ga.rows(); ++i) {
            auto dst = ga.row(i);
            for (std::size_t j = 0; j < ga.cols(); ++j) dst[j] *= r[j];
          }
          out[0] = std::move(ga);
        }
        if (needs[1]) {
          Tensor gr(1, r.cols());
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j) * a(i, j);
          }
          out[1] = std::move(gr);
        }
        return out;
      });
}

Var add_scalar(const Var& a, double c) {
  return tape_of(a).record(
      "add_scalar", {a},
      [c](std::span<const Tensor* const> in) {
        return transform(*in[0], [c](double x) { return x + c; });
      },
      [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<const bool>) {
        return std::vector<Tensor>{g};
      });
}

Var scale(const Var& a, double c) {
  return tape_of(a).record(
      "scale", {a},
      [c](std::span<const Tensor* const> in) {
        return transform(*in[0], [c](double x) { return x * c; });
      },
      [c](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<const bool>) {
        return std::vector<Tensor>{transform(g, [c](double x) { return x * c; })};
      });
}

Var elementwise(const Var& a, Unary kind) {
  static const char* const names[] = {"relu", "exp", "log", "neg", "square", "sigmoid",
                                      "softplus"};
  return tape_of(a).record(
      names[static_cast<int>(kind)], {a},
      [kind](std::span<const Tensor* const> in) { return apply_unary(*in[0], kind); },
      [kind](std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
             std::span<const bool>) {
        const Tensor& x = *in[0];
        Tensor d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) {
          double local = 0.0;
          switch (kind) {
            case Unary::relu:
              // Subgradient at exactly 0 is taken as 0.
              local = x[i] > 0 ? 1.0 : 0.0;
              break;
            case Unary::exp:
              local = y[i];
              break;
            case Unary::log:
              local = 1.0 / x[i];
              break;
            case Unary::neg:
              local = -1.0;
              break;
            case Unary::square:
              local = 2.0 * x[i];
              break;
            case Unary::sigmoid:
              local = y[i] * (1.0 - y[i]);
              break;
            case Unary::softplus:
              local = sigmoid_value(x[i]);
              break;
          }
          d[i] = g[i] * local;
        }
        return std::vector<Tensor>{std::move(d)};
      });
}

Var sum(const Var& a) {
  return tape_of(a).record(
      "sum", {a},
      [](std::span<const Tensor* const> in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool>) {
        return std::vector<Tensor>{Tensor(in[0]->rows(), in[0]->cols(), g.item())};
      });
}

Var sum_rows(const Var& a) {
  return tape_of(a).record(
      "sum_rows", {a},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        Tensor out(x.rows(), 1);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          double s = 0.0;
          for (double v : x.row(i)) s += v;
          out[i] = s;
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool>) {
        const Tensor& x = *in[0];
        Tensor d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          for (double& v : d.row(i)) v = g[i];
        }
        return std::vector<Tensor>{std::move(d)};
      });
}

Var rowwise_dot(const Var& a, const Var& b) {
  require_same_tape(a, b, "rowwise_dot");
  require_same_shape(a.value(), b.value(), "rowwise_dot");
  return tape_of(a).record(
      "rowwise_dot", {a, b},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        Tensor out(x.rows(), 1);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          const auto yr = y.row(i);
          double s = 0.0;
          for (std::size_t j = 0; j < xr.size(); ++j) s += xr[j] * yr[j];
          out[i] = s;
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = Tensor(x.rows(), x.cols());
        if (needs[1]) out[1] = Tensor(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          for (std::size_t j = 0; j < x.cols(); ++j) {
            if (needs[0]) out[0](i, j) = g[i] * y(i, j);
            if (needs[1]) out[1](i, j) = g[i] * x(i, j);
          }
        }
        return out;
      });
}

Var l2_normalize_rows(const Var& a, double epsilon) {
  if (!(epsilon > 0)) throw UsageError("l2_normalize_rows: epsilon must be positive");
  return tape_of(a).record(
      "l2_normalize_rows", {a},
      [epsilon](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        Tensor out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          double sq = 0.0;
          for (double v : xr) sq += v * v;
          const double n = std::max(std::sqrt(sq), epsilon);
          auto dst = out.row(i);
          for (std::size_t j = 0; j < xr.size(); ++j) dst[j] = xr[j] / n;
        }
        return out;
      },
      [epsilon](std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
                std::span<const bool>) {
        const Tensor& x = *in[0];
        Tensor d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          const auto yr = y.row(i);
          const auto gr = g.row(i);
          double sq = 0.0;
          for (double v : xr) sq += v * v;
          const double norm = std::sqrt(sq);
          auto dr = d.row(i);
          if (norm > epsilon) {
            double yg = 0.0;
            for (std::size_t j = 0; j < xr.size(); ++j) yg += yr[j] * gr[j];
            for (std::size_t j = 0; j < xr.size(); ++j) dr[j] = (gr[j] - yr[j] * yg) / norm;
          } else {
            for (std::size_t j = 0; j < xr.size(); ++j) dr[j] = gr[j] / epsilon;
          }
        }
        return std::vector<Tensor>{std::move(d)};
      });
}

Var log_sum_exp_rows(const Var& a) {
  if (a.value().empty()) throw DimensionError("log_sum_exp_rows: empty input");
  return tape_of(a).record(
      "log_sum_exp_rows", {a},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        Tensor out(x.rows(), 1);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          const double m = *std::max_element(xr.begin(), xr.end());
          double s = 0.0;
          for (double v : xr) s += std::exp(v - m);
          out[i] = m + std::log(s);
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
         std::span<const bool>) {
        const Tensor& x = *in[0];
        Tensor d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          auto dr = d.row(i);
          for (std::size_t j = 0; j < xr.size(); ++j) dr[j] = g[i] * std::exp(xr[j] - y[i]);
        }
        return std::vector<Tensor>{std::move(d)};
      });
}

namespace {

/// Row maximum over entries with positive weight; -inf when no weight.
double weighted_row_max(std::span<const double> a, std::span<const double> w) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (w[j] > 0 && a[j] > m) m = a[j];
  }
  return m;
}

void check_weights(const Tensor& a, const Tensor& w, const char* op) {
  require_same_shape(a, w, op);
  const auto d = w.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] < 0) {
      throw DomainError(std::string(op) + ": negative weight at flat index " +
                        std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < w.rows(); ++i) {
    bool any = false;
    for (double v : w.row(i)) any = any || v > 0;
    if (!any) {
      throw DomainError(std::string(op) + ": row " + std::to_string(i) + " has zero total weight");
    }
  }
}

struct WeightedSoftmax {
  // p_c = w_c exp(a_c - m) / s, e_c = exp(a_c - m) / s
  double m = 0.0;
  double s = 0.0;
};

WeightedSoftmax weighted_softmax_stats(std::span<const double> a, std::span<const double> w) {
  WeightedSoftmax st;
  st.m = weighted_row_max(a, w);
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (w[j] > 0) st.s += w[j] * std::exp(a[j] - st.m);
  }
  return st;
}

}  // namespace

Var weighted_log_sum_exp_rows(const Var& a, const Var& weights) {
  require_same_tape(a, weights, "weighted_log_sum_exp_rows");
  check_weights(a.value(), weights.value(), "weighted_log_sum_exp_rows");
  return tape_of(a).record(
      "weighted_log_sum_exp_rows", {a, weights},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        Tensor out(x.rows(), 1);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto st = weighted_softmax_stats(x.row(i), w.row(i));
          out[i] = st.m + std::log(st.s);
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
         std::span<const bool> needs) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = Tensor(x.rows(), x.cols());
        if (needs[1]) out[1] = Tensor(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          const auto wr = w.row(i);
          for (std::size_t j = 0; j < xr.size(); ++j) {
            // exp(a - lse) is the softmax share per unit weight.
            const double e = std::exp(xr[j] - y[i]);
            if (needs[0]) out[0](i, j) = g[i] * wr[j] * e;
            if (needs[1]) out[1](i, j) = g[i] * e;
          }
        }
        return out;
      });
}

Var weighted_softmax_mean_rows(const Var& a, const Var& weights) {
  require_same_tape(a, weights, "weighted_softmax_mean_rows");
  check_weights(a.value(), weights.value(), "weighted_softmax_mean_rows");
  return tape_of(a).record(
      "weighted_softmax_mean_rows", {a, weights},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        Tensor out(x.rows(), 1);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          const auto wr = w.row(i);
          const auto st = weighted_softmax_stats(xr, wr);
          double acc = 0.0;
          for (std::size_t j = 0; j < xr.size(); ++j) {
            if (wr[j] > 0) acc += wr[j] * std::exp(xr[j] - st.m) * xr[j];
          }
          out[i] = acc / st.s;
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
         std::span<const bool> needs) {
        // E = sum p_c a_c:  dE/da_k = p_k (1 + a_k - E),  dE/dw_k = e_k (a_k - E)
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = Tensor(x.rows(), x.cols());
        if (needs[1]) out[1] = Tensor(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const auto xr = x.row(i);
          const auto wr = w.row(i);
          const auto st = weighted_softmax_stats(xr, wr);
          for (std::size_t j = 0; j < xr.size(); ++j) {
            const double e = std::exp(xr[j] - st.m) / st.s;
            const double centered = xr[j] - y[i];
            if (needs[0]) out[0](i, j) = g[i] * wr[j] * e * (1.0 + centered);
            if (needs[1]) out[1](i, j) = g[i] * e * centered;
          }
        }
        return out;
      });
}

Var concat_rows(const Var& a, const Var& b) {
  require_same_tape(a, b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: column mismatch " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
  return tape_of(a).record(
      "concat_rows", {a, b},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        std::vector<double> data(x.data().begin(), x.data().end());
        data.insert(data.end(), y.data().begin(), y.data().end());
        return Tensor(x.rows() + y.rows(), x.cols(), std::move(data));
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        std::vector<Tensor> out(2);
        const auto gd = g.data();
        if (needs[0]) {
          out[0] = Tensor(x.rows(), x.cols(),
                          std::vector<double>(gd.begin(), gd.begin() + static_cast<long>(x.size())));
        }
        if (needs[1]) {
          out[1] = Tensor(y.rows(), y.cols(),
                          std::vector<double>(gd.begin() + static_cast<long>(x.size()), gd.end()));
        }
        return out;
      });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " +
                         a.value().shape_string());
  }
  return tape_of(a).record(
      "slice_rows", {a},
      [begin, count](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const auto d = x.data();
        const auto first = d.begin() + static_cast<long>(begin * x.cols());
        return Tensor(count, x.cols(),
                      std::vector<double>(first, first + static_cast<long>(count * x.cols())));
      },
      [begin](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
              std::span<const bool>) {
        const Tensor& x = *in[0];
        Tensor d(x.rows(), x.cols());
        const auto gd = g.data();
        std::copy(gd.begin(), gd.end(), d.data().begin() + static_cast<long>(begin * x.cols()));
        return std::vector<Tensor>{std::move(d)};
      });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double epsilon) {
  require_same_tape(x, gamma, "batch_norm");
  require_same_tape(x, beta, "batch_norm");
  const std::size_t c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw DimensionError("batch_norm: affine parameters must be 1x" + std::to_string(c));
  }
  if (x.rows() < 2) throw DimensionError("batch_norm: needs at least two rows in training mode");

  struct Stats {
    std::vector<double> mean, inv_std;
  };
  auto stats_of = [epsilon](const Tensor& v) {
    const std::size_t n = v.rows();
    const std::size_t cols = v.cols();
    Stats s{std::vector<double>(cols, 0.0), std::vector<double>(cols, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < cols; ++j) s.mean[j] += v(i, j);
    }
    for (double& m : s.mean) m /= static_cast<double>(n);
    std::vector<double> var(cols, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double d = v(i, j) - s.mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < cols; ++j) {
      s.inv_std[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(n) + epsilon);
    }
    return s;
  };

  return tape_of(x).record(
      "batch_norm", {x, gamma, beta},
      [stats_of](std::span<const Tensor* const> in) {
        const Tensor& v = *in[0];
        const Tensor& gm = *in[1];
        const Tensor& bt = *in[2];
        const Stats s = stats_of(v);
        Tensor out(v.rows(), v.cols());
        for (std::size_t i = 0; i < v.rows(); ++i) {
          for (std::size_t j = 0; j < v.cols(); ++j) {
            out(i, j) = gm[j] * (v(i, j) - s.mean[j]) * s.inv_std[j] + bt[j];
          }
        }
        return out;
      },
      [stats_of](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                 std::span<const bool> needs) {
        const Tensor& v = *in[0];
        const Tensor& gm = *in[1];
        const std::size_t n = v.rows();
        const std::size_t cols = v.cols();
        const Stats s = stats_of(v);
        std::vector<double> sum_g(cols, 0.0), sum_g_xhat(cols, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const double xhat = (v(i, j) - s.mean[j]) * s.inv_std[j];
            sum_g[j] += g(i, j);
            sum_g_xhat[j] += g(i, j) * xhat;
          }
        }
        std::vector<Tensor> out(3);
        if (needs[0]) {
          Tensor dx(n, cols);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double xhat = (v(i, j) - s.mean[j]) * s.inv_std[j];
              dx(i, j) = gm[j] * s.inv_std[j] * inv_n *
                         (static_cast<double>(n) * g(i, j) - sum_g[j] - xhat * sum_g_xhat[j]);
            }
          }
          out[0] = std::move(dx);
        }
        if (needs[1]) out[1] = Tensor(1, cols, sum_g_xhat);
        if (needs[2]) out[2] = Tensor(1, cols, sum_g);
        return out;
      });
}

namespace {

/// Rows: (sample, out_y, out_x); cols: (ky, kx, cin). Zero outside the image.
Tensor im2col(const Tensor& x, const ConvGeometry& geo) {
  const std::size_t oh = geo.out_height();
  const std::size_t ow = geo.out_width();
  const std::size_t patch = geo.patch_size();
  Tensor cols(x.rows() * oh * ow, patch);
  for (std::size_t n = 0; n < x.rows(); ++n) {
    const auto img = x.row(n);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        auto dst = cols.row((n * oh + oy) * ow + ox);
        std::size_t k = 0;
        for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
          const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.padding);
          for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
            const long ix =
                static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.height) &&
                                ix < static_cast<long>(geo.width);
            for (std::size_t c = 0; c < geo.in_channels; ++c, ++k) {
              dst[k] = inside ? img[(static_cast<std::size_t>(iy) * geo.width +
                                     static_cast<std::size_t>(ix)) *
                                        geo.in_channels +
                                    c]
                              : 0.0;
            }
          }
        }
      }
    }
  }
  return cols;
}

Tensor col2im(const Tensor& cols, std::size_t batch, const ConvGeometry& geo) {
  const std::size_t oh = geo.out_height();
  const std::size_t ow = geo.out_width();
  Tensor x(batch, geo.in_size());
  for (std::size_t n = 0; n < batch; ++n) {
    auto img = x.row(n);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto src = cols.row((n * oh + oy) * ow + ox);
        std::size_t k = 0;
        for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
          const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.padding);
          for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
            const long ix =
                static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.height) &&
                                ix < static_cast<long>(geo.width);
            for (std::size_t c = 0; c < geo.in_channels; ++c, ++k) {
              if (inside) {
                img[(static_cast<std::size_t>(iy) * geo.width + static_cast<std::size_t>(ix)) *
                        geo.in_channels +
                    c] += src[k];
              }
            }
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geo) {
  require_same_tape(x, weight, "conv2d");
  require_same_tape(x, bias, "conv2d");
  if (x.cols() != geo.in_size()) {
    throw DimensionError("conv2d: input width " + std::to_string(x.cols()) + " != H*W*C " +
                         std::to_string(geo.in_size()));
  }
  if (weight.rows() != geo.patch_size() || weight.cols() != geo.out_channels) {
    throw DimensionError("conv2d: weight shape " + weight.value().shape_string());
  }
  if (bias.rows() != 1 || bias.cols() != geo.out_channels) {
    throw DimensionError("conv2d: bias shape " + bias.value().shape_string());
  }
  return tape_of(x).record(
      "conv2d", {x, weight, bias},
      [geo](std::span<const Tensor* const> in) {
        const Tensor& v = *in[0];
        const Tensor prod = kernels::matmul(im2col(v, geo), *in[1]);
        // (N*oh*ow) x Cout is bit-for-bit the row-major layout of N x (oh*ow*Cout).
        std::vector<double> data(prod.data().begin(), prod.data().end());
        const Tensor& b = *in[2];
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += b[i % geo.out_channels];
        return Tensor(v.rows(), geo.out_size(), std::move(data));
      },
      [geo](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
            std::span<const bool> needs) {
        const Tensor& v = *in[0];
        const std::size_t positions = v.rows() * geo.out_height() * geo.out_width();
        const Tensor g2(positions, geo.out_channels,
                        std::vector<double>(g.data().begin(), g.data().end()));
        std::vector<Tensor> out(3);
        if (needs[1]) out[1] = kernels::matmul_tn(im2col(v, geo), g2);
        if (needs[0]) out[0] = col2im(kernels::matmul_nt(g2, *in[1]), v.rows(), geo);
        if (needs[2]) {
          Tensor gb(1, geo.out_channels);
          for (std::size_t i = 0; i < g2.size(); ++i) gb[i % geo.out_channels] += g2[i];
          out[2] = std::move(gb);
        }
        return out;
      });
}

Var avg_pool(const Var& x, std::size_t height, std::size_t width, std::size_t channels,
             std::size_t window) {
  if (x.cols() != height * width * channels || window == 0 || height % window != 0 ||
      width % window != 0) {
    throw DimensionError("avg_pool: geometry does not match input " + x.value().shape_string());
  }
  const std::size_t oh = height / window;
  const std::size_t ow = width / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  auto index = [=](std::size_t y, std::size_t xx, std::size_t c) {
    return (y * width + xx) * channels + c;
  };
  return tape_of(x).record(
      "avg_pool", {x},
      [=](std::span<const Tensor* const> in) {
        const Tensor& v = *in[0];
        Tensor out(v.rows(), oh * ow * channels);
        for (std::size_t n = 0; n < v.rows(); ++n) {
          for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t xx = 0; xx < width; ++xx) {
              for (std::size_t c = 0; c < channels; ++c) {
                out(n, ((y / window) * ow + xx / window) * channels + c) +=
                    v(n, index(y, xx, c)) * inv;
              }
            }
          }
        }
        return out;
      },
      [=](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
          std::span<const bool>) {
        const Tensor& v = *in[0];
        Tensor d(v.rows(), v.cols());
        for (std::size_t n = 0; n < v.rows(); ++n) {
          for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t xx = 0; xx < width; ++xx) {
              for (std::size_t c = 0; c < channels; ++c) {
                d(n, index(y, xx, c)) = g(n, ((y / window) * ow + xx / window) * channels + c) * inv;
              }
            }
          }
        }
        return std::vector<Tensor>{std::move(d)};
      });
}

}  // namespace ops

}  // namespace ipirm
