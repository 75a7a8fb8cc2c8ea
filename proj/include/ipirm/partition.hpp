#ifndef IPIRM_PARTITION_HPP
#define IPIRM_PARTITION_HPP

#include <cstdint>
#include <vector>

#include "ipirm/objective.hpp"
#include "ipirm/partition_set.hpp"

namespace ipirm {

struct AscentConfig {
  std::size_t steps = 300;
  double lr = 0.05;
  std::size_t restarts = 4;
  double lambda2 = 0.5;
  Barrier barrier;

  void validate() const;
};

struct AscentResult {
  SoftPartition soft;
  double objective = 0.0;
  std::size_t restart = 0;
  /// Objective of the winning restart before each step and after the last.
  std::vector<double> trajectory;
};

/// Adam ascent on the logits of the soft Step-2 objective over fixed
/// embeddings. Restart 0 starts from `soft`, restart r > 0 from
/// init_soft(derive_seed(seed, {r}), N). The winner is the highest final
/// objective, ties going to the lower restart index.
AscentResult ascend(const SoftPartition& soft, const ContrastiveBatch& batch,
                    const AscentConfig& config, std::uint64_t seed);

/// Ascent over a large embedding set using random row batches of
/// `batch_size` per step. Restarts are compared by the soft objective averaged
/// over a fixed cover of the rows by batches.
AscentResult ascend_minibatched(const Tensor& z, const Tensor& z_star, double temperature,
                                const AscentConfig& config, std::size_t batch_size,
                                std::uint64_t seed);

struct BruteForceResult {
  PartitionMatrix partition;
  double objective = 0.0;
  std::size_t evaluated = 0;
};

/// Exhaustive maximizer of the binary Step-2 objective over bipartitions with
/// both sides of size >= 2 (sample 0 pinned to subset 1). Requires N <= 16.
BruteForceResult brute_force_partition(const ContrastiveBatch& batch, double lambda2);

}  // namespace ipirm

#endif  // IPIRM_PARTITION_HPP
