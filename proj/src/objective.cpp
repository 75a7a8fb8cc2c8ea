#include "ipirm/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ipirm/error.hpp"

namespace ipirm {

namespace {

Tape& tape_of(const Var& v) { return *const_cast<Tape*>(v.tape()); }

double mass_of(const Var& w) {
  double m = 0.0;
  for (double v : w.value().data()) m += v;
  return m;
}

void check_weights(const Similarities& s, const Var& w) {
  if (w.cols() != 1 || w.rows() != s.positives.rows()) {
    throw DimensionError("subset weights must be " + std::to_string(s.positives.rows()) +
                         "x1, got " + w.value().shape_string());
  }
  for (double v : w.value().data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("subset weights must lie in [0, 1]");
  }
}

void check_mass(const Var& w) {
  const double m = mass_of(w);
  if (!(m > 1.0)) {
    throw DegenerateSubsetError("subset mass " + std::to_string(m) +
                                " <= 1 leaves no negatives");
  }
}

struct SubsetTerms {
  Var info_nce;
  Var grad_theta;
};

// Shared candidate weights; no mass check.
SubsetTerms subset_terms(const Similarities& s, const Var& w) {
  const Var cw = candidate_weights(w);
  const Var mass = ops::sum(w);
  const Var lse = ops::weighted_log_sum_exp_rows(s.logits, cw);
  const Var nce = ops::div(ops::sum(ops::mul(w, ops::sub(lse, s.positives))), mass);
  const Var mean = ops::weighted_softmax_mean_rows(s.logits, cw);
  const Var g = ops::div(ops::sum(ops::mul(w, ops::sub(mean, s.positives))), mass);
  return {nce, g};
}

// Per-anchor pieces of the binary objective straight from similarity values.
void binary_subset(const Tensor& a, const Tensor& pos, std::span<const std::uint8_t> member,
                   double& nce, double& g) {
  const std::size_t n = pos.rows();
  double total = 0.0, total_g = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!member[i]) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < 2 * n; ++c) {
      const std::size_t j = c % n;
      if (!member[j] || c == i) continue;
      m = std::max(m, a(i, c));
    }
    double z = 0.0, mean = 0.0;
    for (std::size_t c = 0; c < 2 * n; ++c) {
      const std::size_t j = c % n;
      if (!member[j] || c == i) continue;
      const double e = std::exp(a(i, c) - m);
      z += e;
      mean += e * a(i, c);
    }
    total += m + std::log(z) - pos[i];
    total_g += mean / z - pos[i];
    ++count;
  }
  nce = total / static_cast<double>(count);
  g = total_g / static_cast<double>(count);
}

}  // namespace

void validate(const ContrastiveBatch& batch) {
  if (batch.z.tape() == nullptr || batch.z.tape() != batch.z_star.tape()) {
    throw UsageError("contrastive batch: z and z* must live on the same tape");
  }
  const Tensor& z = batch.z.value();
  const Tensor& zs = batch.z_star.value();
  if (!z.same_shape(zs) || z.rows() == 0 || z.cols() == 0) {
    throw DimensionError("contrastive batch: z " + z.shape_string() + " and z* " +
                         zs.shape_string() + " must share a nonempty shape");
  }
  if (!batch.indices.empty() && batch.indices.size() != z.rows()) {
    throw DimensionError("contrastive batch: " + std::to_string(batch.indices.size()) +
                         " indices for " + std::to_string(z.rows()) + " rows");
  }
  if (!(batch.temperature > 0.0) || !std::isfinite(batch.temperature)) {
    throw DomainError("contrastive batch: temperature must be positive");
  }
  for (const Tensor* t : {&z, &zs}) {
    for (std::size_t i = 0; i < t->rows(); ++i) {
      double sq = 0.0;
      for (double v : t->row(i)) sq += v * v;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw DomainError("contrastive batch: row " + std::to_string(i) + " has norm " +
                          std::to_string(std::sqrt(sq)) + ", expected unit rows");
      }
    }
  }
}

Similarities similarities(const ContrastiveBatch& batch) {
  validate(batch);
  const double inv_tau = 1.0 / batch.temperature;
  const Var candidates = ops::concat_rows(batch.z, batch.z_star);
  return {ops::scale(ops::matmul_nt(batch.z, candidates), inv_tau),
          ops::scale(ops::rowwise_dot(batch.z, batch.z_star), inv_tau)};
}

Var candidate_weights(const Var& w) {
  if (w.cols() != 1) throw DimensionError("candidate_weights: expects Nx1, got " + w.value().shape_string());
  return tape_of(w).record(
      "candidate_weights", {w},
      [](std::span<const Tensor* const> in) {
        const Tensor& v = *in[0];
        const std::size_t n = v.rows();
        Tensor out(n, 2 * n);
        for (std::size_t i = 0; i < n; ++i) {
          auto row = out.row(i);
          for (std::size_t j = 0; j < n; ++j) {
            row[j] = j == i ? 0.0 : v[j];
            row[n + j] = v[j];
          }
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
         std::span<const bool> needs) {
        std::vector<Tensor> out(1);
        if (!needs[0]) return out;
        const std::size_t n = in[0]->rows();
        Tensor gw(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
          const auto row = g.row(i);
          for (std::size_t j = 0; j < n; ++j) {
            if (j != i) gw[j] += row[j];
            gw[j] += row[n + j];
          }
        }
        out[0] = std::move(gw);
        return out;
      });
}

Var subset_info_nce(const Similarities& s, const Var& w, double theta) {
  check_weights(s, w);
  check_mass(w);
  if (theta == 1.0) return subset_terms(s, w).info_nce;
  const Var cw = candidate_weights(w);
  const Var lse = ops::weighted_log_sum_exp_rows(ops::scale(s.logits, theta), cw);
  const Var per = ops::sub(lse, ops::scale(s.positives, theta));
  return ops::div(ops::sum(ops::mul(w, per)), ops::sum(w));
}

Var subset_info_nce(const ContrastiveBatch& batch, const Var& w, double theta) {
  return subset_info_nce(similarities(batch), w, theta);
}

Var grad_theta(const Similarities& s, const Var& w) {
  check_weights(s, w);
  check_mass(w);
  return subset_terms(s, w).grad_theta;
}

Var grad_theta(const ContrastiveBatch& batch, const Var& w) {
  return grad_theta(similarities(batch), w);
}

Var irm_penalty(const Similarities& s, const Var& w) { return ops::square(grad_theta(s, w)); }

Var irm_penalty(const ContrastiveBatch& batch, const Var& w) {
  return irm_penalty(similarities(batch), w);
}

Step1Terms step1_loss(const ContrastiveBatch& batch, std::span<const PartitionMatrix> partitions,
                      double lambda1) {
  if (partitions.empty()) throw UsageError("step1_loss: the partition set is empty");
  if (!(lambda1 >= 0.0)) throw DomainError("step1_loss: lambda1 must be non-negative");
  const Similarities s = similarities(batch);
  Tape& tape = tape_of(batch.z);
  const std::size_t n = batch.size();
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = batch.sample_index(i);

  Step1Terms out;
  Var total;
  bool any = false;
  for (const PartitionMatrix& p : partitions) {
    for (std::uint8_t k : {std::uint8_t{1}, std::uint8_t{2}}) {
      for (std::size_t r : rows) {
        if (r >= p.size()) {
          throw DimensionError("step1_loss: partition of size " + std::to_string(p.size()) +
                               " does not cover sample " + std::to_string(r));
        }
      }
      Tensor wt = p.weights(k, rows);
      double mass = 0.0;
      for (double v : wt.data()) mass += v;
      if (mass <= 1.0) continue;
      const Var w = tape.constant(std::move(wt));
      const SubsetTerms t = subset_terms(s, w);
      const Var penalty = ops::square(t.grad_theta);
      out.penalties.push_back(penalty.value().item());
      const Var term = ops::add(t.info_nce, ops::scale(penalty, lambda1));
      total = any ? ops::add(total, term) : term;
      any = true;
    }
  }
  out.loss = any ? total : tape.constant(Tensor::scalar(0.0));
  return out;
}

Step1Terms step1_loss(const ContrastiveBatch& batch, const PartitionSet& partitions,
                      double lambda1) {
  const std::vector<PartitionMatrix> all = partitions.all();
  return step1_loss(batch, all, lambda1);
}

Var step2_objective(const Similarities& s, const Var& logits, double lambda2,
                    const Barrier& barrier) {
  if (!(lambda2 >= 0.0)) throw DomainError("step2_objective: lambda2 must be non-negative");
  if (logits.cols() != 1 || logits.rows() != s.positives.rows()) {
    throw DimensionError("step2_objective: logits must be " +
                         std::to_string(s.positives.rows()) + "x1, got " +
                         logits.value().shape_string());
  }
  const Var w1 = ops::sigmoid(logits);
  const Var w2 = ops::sigmoid(ops::neg(logits));
  Var total;
  bool first = true;
  for (const Var& w : {w1, w2}) {
    const SubsetTerms t = subset_terms(s, w);
    Var term = t.info_nce;
    if (lambda2 != 0.0) term = ops::add(term, ops::scale(ops::square(t.grad_theta), lambda2));
    const Var guard = ops::softplus(ops::add_scalar(ops::neg(ops::sum(w)), 1.0 + barrier.epsilon));
    term = ops::sub(term, ops::scale(guard, barrier.mu));
    total = first ? term : ops::add(total, term);
    first = false;
  }
  return total;
}

Var step2_objective(const ContrastiveBatch& batch, const Var& logits, double lambda2,
                    const Barrier& barrier) {
  return step2_objective(similarities(batch), logits, lambda2, barrier);
}

double binary_objective(const Similarities& s, std::span<const std::uint8_t> assignment,
                        double lambda2) {
  const Tensor& a = s.logits.value();
  const Tensor& pos = s.positives.value();
  const std::size_t n = pos.rows();
  if (assignment.size() != n) {
    throw DimensionError("binary_objective: " + std::to_string(assignment.size()) +
                         " assignments for " + std::to_string(n) + " rows");
  }
  double total = 0.0;
  std::vector<std::uint8_t> member(n);
  for (std::uint8_t k : {std::uint8_t{1}, std::uint8_t{2}}) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      member[i] = assignment[i] == k;
      count += member[i];
    }
    if (count < 2) {
      throw DegenerateSubsetError("binary_objective: subset " + std::to_string(k) + " has " +
                                  std::to_string(count) + " member(s)");
    }
    double nce = 0.0, g = 0.0;
    binary_subset(a, pos, member, nce, g);
    total += nce + lambda2 * g * g;
  }
  return total;
}

double binary_objective(const ContrastiveBatch& batch, const PartitionMatrix& p, double lambda2) {
  const Similarities s = similarities(batch);
  std::vector<std::uint8_t> local(batch.size());
  for (std::size_t i = 0; i < local.size(); ++i) local[i] = p.assignment.at(batch.sample_index(i));
  return binary_objective(s, local, lambda2);
}

Step2Evaluation step2_fused(const Tensor& a, const Tensor& pos, const Tensor& logits,
                            double lambda2, const Barrier& barrier) {
  const std::size_t n = pos.rows();
  if (a.rows() != n || a.cols() != 2 * n || pos.cols() != 1 || logits.rows() != n ||
      logits.cols() != 1) {
    throw DimensionError("step2_fused: shapes " + a.shape_string() + ", " + pos.shape_string() +
                         ", " + logits.shape_string());
  }
  if (!(lambda2 >= 0.0)) throw DomainError("step2_fused: lambda2 must be non-negative");

  Tensor e(n, 2 * n);
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = a.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    m[i] = mx;
    auto er = e.row(i);
    for (std::size_t c = 0; c < 2 * n; ++c) er[c] = std::exp(row[c] - mx);
  }

  std::vector<double> w1(n), w2(n);
  for (std::size_t j = 0; j < n; ++j) {
    w1[j] = 1.0 / (1.0 + std::exp(-logits[j]));
    w2[j] = 1.0 / (1.0 + std::exp(logits[j]));
  }

  Step2Evaluation out;
  out.grad = Tensor(n, 1);
  std::vector<double> z(n), lse(n), mean(n), dw(n);
  for (int k = 0; k < 2; ++k) {
    const std::vector<double>& w = k == 0 ? w1 : w2;
    double mass = 0.0;
    for (double v : w) mass += v;
    for (std::size_t i = 0; i < n; ++i) {
      const auto er = e.row(i);
      const auto ar = a.row(i);
      double zi = 0.0, si = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double left = j == i ? 0.0 : w[j] * er[j];
        const double right = w[j] * er[n + j];
        zi += left + right;
        si += left * ar[j] + right * ar[n + j];
      }
      z[i] = zi;
      lse[i] = m[i] + std::log(zi);
      mean[i] = si / zi;
    }
    double nce = 0.0, g = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nce += w[i] * (lse[i] - pos[i]);
      g += w[i] * (mean[i] - pos[i]);
    }
    nce /= mass;
    g /= mass;
    const double gap = 1.0 + barrier.epsilon - mass;
    const double softplus = gap > 0 ? gap + std::log1p(std::exp(-gap)) : std::log1p(std::exp(gap));
    const double barrier_slope = 1.0 / (1.0 + std::exp(-gap));
    out.objective += nce + lambda2 * g * g - barrier.mu * softplus;

    const double two_lg = 2.0 * lambda2 * g;
    for (std::size_t j = 0; j < n; ++j) {
      dw[j] = (lse[j] - pos[j] - nce) / mass + two_lg * (mean[j] - pos[j] - g) / mass +
              barrier.mu * barrier_slope;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double alpha = w[i] / (mass * z[i]);
      const double beta = two_lg * alpha;
      const auto er = e.row(i);
      const auto ar = a.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        double contrib = er[n + j] * (alpha + beta * (ar[n + j] - mean[i]));
        if (j != i) contrib += er[j] * (alpha + beta * (ar[j] - mean[i]));
        dw[j] += contrib;
      }
    }
    const double sign = k == 0 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < n; ++j) out.grad[j] += sign * dw[j] * w1[j] * w2[j];
  }
  return out;
}

}  // namespace ipirm
