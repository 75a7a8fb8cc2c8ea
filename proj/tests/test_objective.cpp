#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ipirm/error.hpp"
#include "ipirm/objective.hpp"
#include "support/gradcheck.hpp"

using namespace ipirm;
using ipirm::testing::gradcheck;
using ipirm::testing::random_tensor;

namespace {

Tensor unit_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g;
  Tensor t(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (double& v : t.row(i)) {
      v = g(rng);
      sq += v * v;
    }
    for (double& v : t.row(i)) v /= std::sqrt(sq);
  }
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Literal transcription: for each anchor x in the subset,
// -log exp(x.x*/tau) / sum over (subset anchors and subset views, minus x) of exp(x.c/tau),
// averaged over the subset.
double literal_subset_loss(const Tensor& z, const Tensor& zs, const std::vector<bool>& in,
                           double tau, double theta = 1.0) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (!in[i]) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < z.rows(); ++j) {
      if (!in[j]) continue;
      if (j != i) denom += std::exp(theta * dot(z.row(i), z.row(j)) / tau);
      denom += std::exp(theta * dot(z.row(i), zs.row(j)) / tau);
    }
    total += -std::log(std::exp(theta * dot(z.row(i), zs.row(i)) / tau) / denom);
    ++count;
  }
  return total / static_cast<double>(count);
}

// Soft version of the same sum with candidate weights w_j.
double literal_soft_loss(const Tensor& z, const Tensor& zs, const std::vector<double>& w,
                         double tau, double theta) {
  double total = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < z.rows(); ++j) {
      if (j != i) denom += w[j] * std::exp(theta * dot(z.row(i), z.row(j)) / tau);
      denom += w[j] * std::exp(theta * dot(z.row(i), zs.row(j)) / tau);
    }
    total += w[i] * (-theta * dot(z.row(i), zs.row(i)) / tau + std::log(denom));
    mass += w[i];
  }
  return total / mass;
}

Tensor column(const std::vector<double>& v) { return Tensor::column(v); }

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace

TEST_CASE("subset InfoNCE equals the literal transcription on every subset for N <= 8") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> tau_dist(0.1, 1.0);
  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t n = 2; n <= 8; ++n) {
    for (int rep = 0; rep < 3; ++rep) {
      const double tau = tau_dist(rng);
      Tape tape;
      const Tensor z = unit_rows(rng, n, 3);
      const Tensor zs = unit_rows(rng, n, 3);
      const ContrastiveBatch batch{tape.constant(z), tape.constant(zs), tau, {}};
      const Similarities s = similarities(batch);
      for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        std::vector<bool> in(n);
        std::vector<double> w(n);
        std::size_t members = 0;
        for (std::size_t i = 0; i < n; ++i) {
          in[i] = (mask >> i) & 1u;
          w[i] = in[i] ? 1.0 : 0.0;
          members += in[i];
        }
        if (members < 2) continue;
        const double got = subset_info_nce(s, tape.constant(column(w))).value().item();
        const double want = literal_subset_loss(z, zs, in, tau);
        worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
        ++checked;
      }
    }
  }
  CHECK(checked > 700);
  CHECK(worst <= 1e-12);
}

TEST_CASE("soft weights and theta follow the weighted transcription") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    Tape tape;
    const Tensor z = unit_rows(rng, 5, 4);
    const Tensor zs = unit_rows(rng, 5, 4);
    std::vector<double> w(5);
    for (double& v : w) v = 0.3 + 0.7 * u(rng);
    const double theta = 0.5 + u(rng);
    const ContrastiveBatch batch{tape.constant(z), tape.constant(zs), 0.5, {}};
    const double got = subset_info_nce(batch, tape.constant(column(w)), theta).value().item();
    CHECK(close(got, literal_soft_loss(z, zs, w, 0.5, theta), 1e-12));
  }
}

TEST_CASE("closed forms") {
  SUBCASE("identical embeddings give log K and zero penalty") {
    Tape tape;
    Tensor z(6, 3, 0.0);
    for (std::size_t i = 0; i < 6; ++i) z(i, 1) = 1.0;
    const ContrastiveBatch batch{tape.constant(z), tape.constant(z), 0.5, {}};
    const Var w = tape.constant(column({1, 1, 0, 1, 0, 1}));
    // 4 members: 3 other anchors + 4 views
    CHECK(subset_info_nce(batch, w).value().item() == doctest::Approx(std::log(7.0)).epsilon(1e-14));
    CHECK(std::abs(grad_theta(batch, w).value().item()) < 1e-14);
    CHECK(std::abs(irm_penalty(batch, w).value().item()) < 1e-28);
  }
  SUBCASE("aligned positive and orthogonal negatives") {
    Tape tape;
    const std::size_t n = 4;
    const Tensor e = Tensor::identity(n);
    const ContrastiveBatch batch{tape.constant(e), tape.constant(e), 0.5, {}};
    const Var w = tape.constant(Tensor(n, 1, 1.0));
    const double k = 2.0 * n - 1.0;
    const double expected = -2.0 + std::log(std::exp(2.0) + (k - 1.0));
    CHECK(subset_info_nce(batch, w).value().item() == doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("a weak positive gives a positive theta gradient") {
    Tape tape;
    const Tensor z = Tensor::from_rows({{1, 0}, {1, 0}, {0, 1}});
    const Tensor zs = Tensor::from_rows({{0, 1}, {0, 1}, {1, 0}});
    const ContrastiveBatch batch{tape.constant(z), tape.constant(zs), 0.5, {}};
    CHECK(grad_theta(batch, tape.constant(Tensor(3, 1, 1.0))).value().item() > 0.0);
  }
}

TEST_CASE("theta gradient matches finite differences in theta on 100 batches") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    Tape tape;
    const ContrastiveBatch batch{tape.constant(unit_rows(rng, 6, 4)),
                                 tape.constant(unit_rows(rng, 6, 4)), 0.2 + 0.8 * u(rng), {}};
    std::vector<double> w(6);
    for (double& v : w) v = rep % 2 ? (u(rng) < 0.6 ? 1.0 : 0.0) : u(rng);
    w[0] = w[1] = 1.0;
    const Similarities s = similarities(batch);
    const Var wv = tape.constant(column(w));
    const double h = 1e-6;
    const double numeric = (subset_info_nce(s, wv, 1.0 + h).value().item() -
                            subset_info_nce(s, wv, 1.0 - h).value().item()) /
                           (2.0 * h);
    const double analytic = grad_theta(s, wv).value().item();
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-3));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("penalty is the squared theta gradient and permutation invariant") {
  std::mt19937_64 rng(14);
  Tape tape;
  const Tensor z = unit_rows(rng, 8, 3);
  const Tensor zs = unit_rows(rng, 8, 3);
  const ContrastiveBatch batch{tape.constant(z), tape.constant(zs), 0.5, {}};
  const Var w = tape.constant(column({1, 0, 1, 1, 0, 1, 0, 0}));
  const double g = grad_theta(batch, w).value().item();
  CHECK(std::abs(irm_penalty(batch, w).value().item() - g * g) <= 1e-14);

  // Subset {0,2,3,5} and a second batch where the same pairs sit at other rows.
  const std::vector<std::size_t> perm{5, 3, 0, 2, 1, 4, 6, 7};
  const ContrastiveBatch moved{tape.constant(z.select_rows(perm)),
                               tape.constant(zs.select_rows(perm)), 0.5, {}};
  const Var w2 = tape.constant(column({1, 1, 1, 1, 0, 0, 0, 0}));
  CHECK(irm_penalty(moved, w2).value().item() ==
        doctest::Approx(irm_penalty(batch, w).value().item()).epsilon(1e-12));
}

TEST_CASE("degenerate subsets and malformed batches are rejected") {
  Tape tape;
  const Tensor e = Tensor::identity(3);
  const ContrastiveBatch batch{tape.constant(e), tape.constant(e), 0.5, {}};
  CHECK_THROWS_AS(subset_info_nce(batch, tape.constant(column({1, 0, 0}))), DegenerateSubsetError);
  CHECK_THROWS_AS(grad_theta(batch, tape.constant(column({0.5, 0.5, 0}))), DegenerateSubsetError);
  const ContrastiveBatch not_unit{tape.constant(Tensor(3, 3, 1.0)), tape.constant(e), 0.5, {}};
  CHECK_THROWS_AS(similarities(not_unit), DomainError);
  const ContrastiveBatch cold{tape.constant(e), tape.constant(e), 0.0, {}};
  CHECK_THROWS_AS(similarities(cold), DomainError);
}

TEST_CASE("step-1 loss") {
  std::mt19937_64 rng(15);
  Tape tape;
  const std::size_t n = 8;
  const ContrastiveBatch batch{tape.constant(unit_rows(rng, n, 4)),
                               tape.constant(unit_rows(rng, n, 4)), 0.5, {}};
  const double lambda1 = 0.2;

  SUBCASE("trivial partition is penalized full-batch InfoNCE") {
    PartitionSet set(n, 5);
    const Step1Terms t = step1_loss(batch, set, lambda1);
    const Var ones = tape.constant(Tensor(n, 1, 1.0));
    const double full = subset_info_nce(batch, ones).value().item();
    const double pen = irm_penalty(batch, ones).value().item();
    CHECK(t.loss.value().item() == doctest::Approx(full + lambda1 * pen).epsilon(1e-14));
    CHECK(t.penalties.size() == 1);
  }
  SUBCASE("two partitions decompose into four subset terms") {
    PartitionMatrix a{{1, 1, 2, 2, 1, 2, 1, 2}};
    PartitionMatrix b{{2, 1, 1, 1, 2, 2, 2, 1}};
    const std::vector<PartitionMatrix> parts{a, b};
    double expected = 0.0;
    for (const auto& p : parts) {
      for (std::uint8_t k : {1, 2}) {
        const Var w = tape.constant(p.weights(k));
        expected += subset_info_nce(batch, w).value().item() +
                    lambda1 * irm_penalty(batch, w).value().item();
      }
    }
    CHECK(close(step1_loss(batch, parts, lambda1).loss.value().item(), expected, 1e-12));

    double plain = 0.0;
    for (const auto& p : parts) {
      for (std::uint8_t k : {1, 2}) {
        plain += subset_info_nce(batch, tape.constant(p.weights(k))).value().item();
      }
    }
    CHECK(close(step1_loss(batch, parts, 0.0).loss.value().item(), plain, 1e-12));

    const std::vector<PartitionMatrix> swapped{a.swapped(), b};
    CHECK(close(step1_loss(batch, swapped, lambda1).loss.value().item(), expected, 1e-12));
  }
  SUBCASE("batch rows map to dataset indices and thin subsets are skipped") {
    PartitionMatrix p{{1, 2, 2, 1, 1, 2, 2, 2, 1, 1}};
    ContrastiveBatch sub = batch;
    sub.indices = {0, 3, 4, 8, 9, 1, 2, 5};
    const std::vector<PartitionMatrix> parts{p};
    const Step1Terms t = step1_loss(sub, parts, lambda1);
    CHECK(t.penalties.size() == 2);
    PartitionMatrix lone{{1, 2, 1, 1, 1, 1, 1, 1, 1, 1}};
    const std::vector<PartitionMatrix> one{lone};
    sub.indices = {0, 1, 2, 3, 4, 5, 6, 7};
    CHECK(step1_loss(sub, one, lambda1).penalties.size() == 1);
  }
  SUBCASE("empty partition list is a usage error") {
    CHECK_THROWS_AS(step1_loss(batch, std::span<const PartitionMatrix>{}, lambda1), UsageError);
  }
}

TEST_CASE("step-1 loss gradients match finite differences through normalization") {
  std::mt19937_64 rng(16);
  const Tensor raw = random_tensor(rng, 6, 3);
  const Tensor raw_star = random_tensor(rng, 6, 3);
  const std::vector<PartitionMatrix> parts{PartitionMatrix{{1, 2, 1, 2, 1, 2}},
                                           PartitionMatrix{{1, 1, 1, 2, 2, 2}}};
  auto f = [&](Tape&, const std::vector<Var>& p) {
    const ContrastiveBatch b{ops::l2_normalize_rows(p[0]), ops::l2_normalize_rows(p[1]), 0.5, {}};
    return step1_loss(b, parts, 0.7).loss;
  };
  CHECK(gradcheck(f, {raw, raw_star}).max_rel_err < 1e-5);
}

TEST_CASE("step-2 objective") {
  std::mt19937_64 rng(17);
  const std::size_t n = 10;
  Tape tape;
  const ContrastiveBatch batch{tape.constant(unit_rows(rng, n, 4)),
                               tape.constant(unit_rows(rng, n, 4)), 0.5, {}};
  const Similarities s = similarities(batch);

  SUBCASE("zero logits make both subsets equal") {
    const Var half = tape.constant(Tensor(n, 1, 0.5));
    const double term = subset_info_nce(s, half).value().item() +
                        0.5 * irm_penalty(s, half).value().item();
    const double barrier = 10.0 * std::log1p(std::exp(1.5 - 5.0));
    CHECK(step2_objective(s, tape.constant(Tensor(n, 1, 0.0)), 0.5).value().item() ==
          doctest::Approx(2.0 * (term - barrier)).epsilon(1e-13));
  }
  SUBCASE("lambda2 = 0 without barrier is two soft InfoNCE terms") {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Tensor logits(n, 1);
    for (double& v : logits.data()) v = u(rng);
    Tensor w1(n, 1), w2(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      w1[i] = 1.0 / (1.0 + std::exp(-logits[i]));
      w2[i] = 1.0 / (1.0 + std::exp(logits[i]));
    }
    const double expected = subset_info_nce(s, tape.constant(w1)).value().item() +
                            subset_info_nce(s, tape.constant(w2)).value().item();
    CHECK(step2_objective(s, tape.constant(logits), 0.0, Barrier{0.0, 0.5}).value().item() ==
          doctest::Approx(expected).epsilon(1e-13));
  }
  SUBCASE("gradient in the logits matches finite differences") {
    const Tensor logits = random_tensor(rng, n, 1, -1.5, 1.5);
    const Tensor sim = s.logits.value();
    const Tensor pos = s.positives.value();
    auto f = [&](Tape& t, const std::vector<Var>& p) {
      return step2_objective(Similarities{t.constant(sim), t.constant(pos)}, p[0], 0.5);
    };
    CHECK(gradcheck(f, {logits}).max_rel_err < 1e-5);
  }
  SUBCASE("binary evaluation agrees with the taped subset terms") {
    const PartitionMatrix p{{1, 2, 2, 1, 1, 2, 1, 2, 2, 1}};
    double expected = 0.0;
    for (std::uint8_t k : {1, 2}) {
      const Var w = tape.constant(p.weights(k));
      expected += subset_info_nce(s, w).value().item() + 0.5 * irm_penalty(s, w).value().item();
    }
    CHECK(close(binary_objective(s, p.assignment, 0.5), expected, 1e-12));
    CHECK(close(binary_objective(batch, p.swapped(), 0.5), expected, 1e-12));
  }
}

TEST_CASE("planted split beats a random balanced split") {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> noise(0.0, 0.05);
  const std::size_t n = 16;
  auto planted = [&](std::size_t i) { return i % 2 == 0 ? 1.0 : -1.0; };
  auto make = [&] {
    Tensor t(n, 4);
    for (std::size_t i = 0; i < n; ++i) {
      t(i, 0) = planted(i);
      double sq = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        t(i, j) += noise(rng);
        sq += t(i, j) * t(i, j);
      }
      for (double& v : t.row(i)) v /= std::sqrt(sq);
    }
    return t;
  };
  Tape tape;
  const ContrastiveBatch batch{tape.constant(make()), tape.constant(make()), 0.5, {}};
  PartitionMatrix truth;
  for (std::size_t i = 0; i < n; ++i) truth.assignment.push_back(i % 2 == 0 ? 1 : 2);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (int rep = 0; rep < 20; ++rep) {
    std::shuffle(order.begin(), order.end(), rng);
    PartitionMatrix random_split;
    random_split.assignment.assign(n, 2);
    for (std::size_t i = 0; i < n / 2; ++i) random_split.assignment[order[i]] = 1;
    if (random_split == truth || random_split == truth.swapped()) continue;
    CHECK(binary_objective(batch, truth, 0.5) > binary_objective(batch, random_split, 0.5));
  }
}

TEST_CASE("objective values stay finite for unit rows down to tau = 0.05") {
  std::mt19937_64 rng(19);
  for (int rep = 0; rep < 20; ++rep) {
    Tape tape;
    const ContrastiveBatch batch{tape.constant(unit_rows(rng, 12, 3)),
                                 tape.constant(unit_rows(rng, 12, 3)), 0.05, {}};
    const Var logits = tape.constant(random_tensor(rng, 12, 1, -8.0, 8.0));
    CHECK(std::isfinite(step2_objective(batch, logits, 0.5).value().item()));
    CHECK(std::isfinite(step1_loss(batch, PartitionSet(12, 5), 0.2).loss.value().item()));
  }
}

TEST_CASE("candidate weights layout") {
  Tape tape;
  const Var w = tape.constant(column({0.2, 0.7, 1.0}));
  const Tensor cw = candidate_weights(w).value();
  const Tensor expected = Tensor::from_rows({{0.0, 0.7, 1.0, 0.2, 0.7, 1.0},
                                             {0.2, 0.0, 1.0, 0.2, 0.7, 1.0},
                                             {0.2, 0.7, 0.0, 0.2, 0.7, 1.0}});
  CHECK(cw == expected);
}

TEST_CASE("fused step-2 evaluation agrees with the taped objective") {
  std::mt19937_64 rng(20);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 5 + rep % 7;
    Tape tape;
    const ContrastiveBatch batch{tape.constant(unit_rows(rng, n, 4)),
                                 tape.constant(unit_rows(rng, n, 4)), rep % 3 ? 0.5 : 0.1, {}};
    const Similarities s = similarities(batch);
    const Tensor logits = random_tensor(rng, n, 1, -3.0, 3.0);
    const double lambda2 = rep % 4 ? 0.5 : 0.0;
    const Barrier barrier{rep % 2 ? 10.0 : 0.0, 0.5};
    const Var l = tape.leaf(logits, true);
    const Var obj = step2_objective(s, l, lambda2, barrier);
    const Tensor taped_grad = backward(tape, obj).at(l);
    const Step2Evaluation fused =
        step2_fused(s.logits.value(), s.positives.value(), logits, lambda2, barrier);
    CHECK(close(fused.objective, obj.value().item(), 1e-12));
    for (std::size_t i = 0; i < n; ++i) CHECK(close(fused.grad[i], taped_grad[i], 1e-10));
  }
}
