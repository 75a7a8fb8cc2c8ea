#include "ipirm/partition_set.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

#include "ipirm/autodiff.hpp"
#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {

Tensor SoftPartition::weights() const { return apply_unary(logits, Unary::sigmoid); }

std::size_t PartitionMatrix::count(std::uint8_t subset) const {
  std::size_t n = 0;
  for (std::uint8_t a : assignment) n += a == subset;
  return n;
}

void PartitionMatrix::validate() const {
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != 1 && assignment[i] != 2) {
      throw DegeneratePartitionError("partition: sample " + std::to_string(i) +
                                     " has subset label " + std::to_string(assignment[i]));
    }
  }
  const std::size_t a = count(1);
  const std::size_t b = count(2);
  if (a < 2 || b < 2) {
    throw DegeneratePartitionError("partition: subset sizes " + std::to_string(a) + " and " +
                                   std::to_string(b) + ", both must be at least 2");
  }
}

PartitionMatrix PartitionMatrix::swapped() const {
  PartitionMatrix p = *this;
  for (std::uint8_t& a : p.assignment) a = a == 1 ? 2 : 1;
  return p;
}

Tensor PartitionMatrix::weights(std::uint8_t subset, std::span<const std::size_t> rows) const {
  Tensor w(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) w[i] = assignment.at(rows[i]) == subset ? 1.0 : 0.0;
  return w;
}

Tensor PartitionMatrix::weights(std::uint8_t subset) const {
  Tensor w(assignment.size(), 1);
  for (std::size_t i = 0; i < assignment.size(); ++i) w[i] = assignment[i] == subset ? 1.0 : 0.0;
  return w;
}

PartitionSet::PartitionSet(std::size_t sample_count, std::size_t capacity)
    : sample_count_(sample_count), capacity_(capacity) {
  if (capacity == 0) throw ConfigError("partition set: capacity must be at least 1");
}

std::vector<PartitionMatrix> PartitionSet::all() const {
  std::vector<PartitionMatrix> out;
  out.reserve(size());
  out.push_back(trivial_partition(sample_count_));
  out.insert(out.end(), learned_.begin(), learned_.end());
  return out;
}

void PartitionSet::push(PartitionMatrix p) {
  if (p.size() != sample_count_) {
    throw DimensionError("partition set: partition over " + std::to_string(p.size()) +
                         " samples, set holds " + std::to_string(sample_count_));
  }
  p.validate();
  learned_.push_back(std::move(p));
  while (size() > capacity_) learned_.pop_front();
}

PartitionMatrix trivial_partition(std::size_t n) {
  PartitionMatrix p;
  p.assignment.assign(n, 1);
  return p;
}

SoftPartition init_soft(std::uint64_t seed, std::size_t n) {
  if (n < 4) {
    throw DegeneratePartitionError("init_soft: need at least 4 samples, got " + std::to_string(n));
  }
  Rng rng = make_rng(seed, {0x50f7});
  SoftPartition s{Tensor(n, 1)};
  for (double& v : s.logits.data()) v = uniform(rng, -0.1, 0.1);
  return s;
}

PartitionMatrix threshold(const SoftPartition& soft, std::int64_t iteration) {
  const Tensor w = soft.weights();
  PartitionMatrix p;
  p.iteration = iteration;
  p.assignment.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.5) {
      p.assignment[i] = 1;
    } else if (w[i] < 0.5) {
      p.assignment[i] = 2;
    } else {
      p.assignment[i] = i % 2 == 0 ? 1 : 2;
    }
  }
  p.validate();
  return p;
}

void write_partition_csv(const std::filesystem::path& path,
                         std::span<const PartitionMatrix> partitions,
                         std::span<const SoftPartition> weights) {
  if (!weights.empty() && weights.size() != partitions.size()) {
    throw UsageError("write_partition_csv: one soft partition per partition expected");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "sample_index,subset,weight,iteration\n" << std::setprecision(17);
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    const PartitionMatrix& p = partitions[k];
    const Tensor soft = weights.empty() ? Tensor() : weights[k].weights();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double w = weights.empty() ? (p.assignment[i] == 1 ? 1.0 : 0.0) : soft[i];
      out << i << ',' << static_cast<int>(p.assignment[i]) << ',' << w << ',' << p.iteration
          << '\n';
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace ipirm
