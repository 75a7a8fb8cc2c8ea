#ifndef IPIRM_PARTITION_SET_HPP
#define IPIRM_PARTITION_SET_HPP

#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <vector>

#include "ipirm/tensor.hpp"

namespace ipirm {

/// One logit per sample; subset-1 membership weight is sigmoid(logit).
struct SoftPartition {
  Tensor logits;  // N x 1

  std::size_t size() const { return logits.rows(); }
  Tensor weights() const;
};

/// Binary bipartition, subsets labelled 1 and 2.
struct PartitionMatrix {
  std::vector<std::uint8_t> assignment;
  std::int64_t iteration = 0;
  double objective = 0.0;

  std::size_t size() const { return assignment.size(); }
  std::size_t count(std::uint8_t subset) const;
  /// Throws DegeneratePartitionError unless both subsets have at least two members.
  void validate() const;
  PartitionMatrix swapped() const;
  /// Membership weights of subset k for the given rows, as an N x 1 column.
  Tensor weights(std::uint8_t subset, std::span<const std::size_t> rows) const;
  Tensor weights(std::uint8_t subset) const;

  friend bool operator==(const PartitionMatrix&, const PartitionMatrix&) = default;
};

/// FIFO set of partitions. The trivial partition (every sample in subset 1)
/// is always present, occupies one slot of the capacity and is never evicted.
class PartitionSet {
 public:
  PartitionSet(std::size_t sample_count, std::size_t capacity);

  std::size_t sample_count() const { return sample_count_; }
  std::size_t capacity() const { return capacity_; }
  /// Including the trivial partition.
  std::size_t size() const { return 1 + learned_.size(); }
  const std::deque<PartitionMatrix>& learned() const { return learned_; }
  /// Trivial partition first, then learned ones oldest first.
  std::vector<PartitionMatrix> all() const;

  void push(PartitionMatrix p);

  friend bool operator==(const PartitionSet&, const PartitionSet&) = default;

 private:
  std::size_t sample_count_;
  std::size_t capacity_;
  std::deque<PartitionMatrix> learned_;
};

PartitionMatrix trivial_partition(std::size_t n);

/// Logits uniform in (-0.1, 0.1). Requires n >= 4.
SoftPartition init_soft(std::uint64_t seed, std::size_t n);

/// Subset 1 iff weight > 0.5; a weight of exactly 0.5 goes to subset 1 for
/// even indices and subset 2 for odd ones. Validates the result.
PartitionMatrix threshold(const SoftPartition& soft, std::int64_t iteration = 0);

/// CSV "sample_index,subset,weight,iteration", one row per sample and partition.
/// `weights` may be empty (binary weights are written then).
void write_partition_csv(const std::filesystem::path& path,
                         std::span<const PartitionMatrix> partitions,
                         std::span<const SoftPartition> weights = {});

}  // namespace ipirm

#endif  // IPIRM_PARTITION_SET_HPP
