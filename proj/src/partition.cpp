#include "ipirm/partition.hpp"

#include <numeric>
#include <string>

#include "ipirm/adam.hpp"
#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {

namespace {

Step2Evaluation evaluate(const Tensor& sim_logits, const Tensor& positives, const Tensor& logits,
                         const AscentConfig& config) {
  return step2_fused(sim_logits, positives, logits, config.lambda2, config.barrier);
}

void adam_ascend(Tensor& logits, const Tensor& grad, AdamState& state, const AdamConfig& adam) {
  Tensor descent = grad;
  for (double& v : descent.data()) v = -v;
  Tensor* params[] = {&logits};
  adam_step(params, std::span<const Tensor>(&descent, 1), state, adam);
}

bool better(double objective, std::size_t restart, const AscentResult& best, bool have_best) {
  if (!have_best) return true;
  if (objective != best.objective) return objective > best.objective;
  return restart < best.restart;
}

std::pair<Tensor, Tensor> similarity_values(const Tensor& z, const Tensor& z_star, double tau) {
  Tape tape;
  const ContrastiveBatch batch{tape.constant(z), tape.constant(z_star), tau, {}};
  const Similarities s = similarities(batch);
  return {s.logits.value(), s.positives.value()};
}

}  // namespace

void AscentConfig::validate() const {
  if (steps == 0) throw ConfigError("partition ascent: steps must be at least 1");
  if (restarts == 0) throw ConfigError("partition ascent: restarts must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("partition ascent: lr must be positive");
  if (!(lambda2 >= 0.0)) throw ConfigError("partition ascent: lambda2 must be non-negative");
  if (!(barrier.mu >= 0.0) || !(barrier.epsilon >= 0.0)) {
    throw ConfigError("partition ascent: barrier mu and epsilon must be non-negative");
  }
}

AscentResult ascend(const SoftPartition& soft, const ContrastiveBatch& batch,
                    const AscentConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t n = batch.size();
  if (soft.size() != n || soft.logits.cols() != 1) {
    throw DimensionError("ascend: soft partition over " + std::to_string(soft.size()) +
                         " samples for a batch of " + std::to_string(n));
  }
  const Similarities s = similarities(batch);
  const Tensor& sim = s.logits.value();
  const Tensor& pos = s.positives.value();
  const AdamConfig adam{config.lr};

  AscentResult best;
  bool have_best = false;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    SoftPartition current = r == 0 ? soft : init_soft(derive_seed(seed, {r}), n);
    const Tensor* shape[] = {&current.logits};
    AdamState state = AdamState::zeros_like(shape);
    std::vector<double> trajectory;
    trajectory.reserve(config.steps + 1);
    for (std::size_t step = 0; step < config.steps; ++step) {
      const Step2Evaluation v = evaluate(sim, pos, current.logits, config);
      trajectory.push_back(v.objective);
      adam_ascend(current.logits, v.grad, state, adam);
    }
    const double final_objective = evaluate(sim, pos, current.logits, config).objective;
    trajectory.push_back(final_objective);
    if (better(final_objective, r, best, have_best)) {
      best = AscentResult{std::move(current), final_objective, r, std::move(trajectory)};
      have_best = true;
    }
  }
  return best;
}

AscentResult ascend_minibatched(const Tensor& z, const Tensor& z_star, double temperature,
                                const AscentConfig& config, std::size_t batch_size,
                                std::uint64_t seed) {
  config.validate();
  const std::size_t n = z.rows();
  if (batch_size < 4 || batch_size > n) {
    throw ConfigError("partition ascent: batch size " + std::to_string(batch_size) +
                      " must lie in [4, " + std::to_string(n) + "]");
  }
  const AdamConfig adam{config.lr};

  // Batches covering every row once; a short tail is folded into the last batch.
  auto cover = [&](Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t begin = 0; begin + batch_size <= n; begin += batch_size) {
      batches.emplace_back(order.begin() + begin, order.begin() + begin + batch_size);
    }
    const std::size_t tail = n % batch_size;
    if (tail != 0) {
      if (tail >= 4 || batches.empty()) {
        batches.emplace_back(order.end() - tail, order.end());
      } else {
        batches.back().insert(batches.back().end(), order.end() - tail, order.end());
      }
    }
    return batches;
  };

  auto batch_value = [&](const std::vector<std::size_t>& rows, const Tensor& logits) {
    const auto [sim, pos] = similarity_values(z.select_rows(rows), z_star.select_rows(rows),
                                              temperature);
    return evaluate(sim, pos, logits.select_rows(rows), config);
  };

  Rng eval_rng = make_rng(seed, {0xe7a1});
  const auto eval_batches = cover(eval_rng);

  AscentResult best;
  bool have_best = false;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    SoftPartition current = init_soft(derive_seed(seed, {r}), n);
    const Tensor* shape[] = {&current.logits};
    AdamState state = AdamState::zeros_like(shape);
    std::vector<double> trajectory;
    for (std::size_t pass = 0; pass < config.steps; ++pass) {
      Rng rng = make_rng(seed, {r, pass, 0xba7c});
      double total = 0.0;
      const auto batches = cover(rng);
      for (const auto& rows : batches) {
        const Step2Evaluation v = batch_value(rows, current.logits);
        total += v.objective;
        Tensor grad(n, 1);
        for (std::size_t i = 0; i < rows.size(); ++i) grad[rows[i]] = v.grad[i];
        adam_ascend(current.logits, grad, state, adam);
      }
      trajectory.push_back(total / static_cast<double>(batches.size()));
    }
    double total = 0.0;
    for (const auto& rows : eval_batches) total += batch_value(rows, current.logits).objective;
    const double final_objective = total / static_cast<double>(eval_batches.size());
    trajectory.push_back(final_objective);
    if (better(final_objective, r, best, have_best)) {
      best = AscentResult{std::move(current), final_objective, r, std::move(trajectory)};
      have_best = true;
    }
  }
  return best;
}

BruteForceResult brute_force_partition(const ContrastiveBatch& batch, double lambda2) {
  const std::size_t n = batch.size();
  if (n > 16) {
    throw DimensionError("brute_force_partition: N = " + std::to_string(n) +
                         " exceeds the exhaustive limit of 16");
  }
  if (n < 4) {
    throw DegeneratePartitionError("brute_force_partition: N = " + std::to_string(n) +
                                   " admits no bipartition with both sides >= 2");
  }
  const Similarities s = similarities(batch);
  BruteForceResult best;
  bool have_best = false;
  std::vector<std::uint8_t> assignment(n);
  // Bit i-1 of mask puts sample i in subset 2; sample 0 stays in subset 1.
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::size_t second = 0;
    assignment[0] = 1;
    for (std::size_t i = 1; i < n; ++i) {
      assignment[i] = (mask >> (i - 1)) & 1u ? 2 : 1;
      second += assignment[i] == 2;
    }
    if (second < 2 || n - second < 2) continue;
    const double value = binary_objective(s, assignment, lambda2);
    ++best.evaluated;
    if (!have_best || value > best.objective) {
      best.objective = value;
      best.partition.assignment = assignment;
      have_best = true;
    }
  }
  best.partition.objective = best.objective;
  return best;
}

}  // namespace ipirm
