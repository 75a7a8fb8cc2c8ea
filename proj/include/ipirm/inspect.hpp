#ifndef IPIRM_INSPECT_HPP
#define IPIRM_INSPECT_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ipirm/data.hpp"
#include "ipirm/partition_set.hpp"
#include "ipirm/tensor.hpp"

namespace ipirm {

/// Samples of one factor value falling in each subset of one partition.
struct CompositionRow {
  std::size_t partition = 0;
  std::int64_t iteration = 0;
  std::string factor;
  std::uint32_t value = 0;
  std::size_t subset1 = 0;
  std::size_t subset2 = 0;
};

std::vector<CompositionRow> subset_composition(std::span<const PartitionMatrix> partitions,
                                               const FactorTable& factors);
/// "partition,iteration,factor,value,subset1,subset2"
std::string composition_csv(std::span<const CompositionRow> rows);

/// Features for a batch of factor rows (ordered as the table's factors).
using FactorFeatures = std::function<Tensor(const std::vector<std::vector<std::uint32_t>>& rows)>;

/// factors x d. Row f: per-dimension variance of the features as factor f
/// sweeps all its values with the other factors held at each base row,
/// averaged over base rows, then divided by the row maximum.
Tensor variance_heatmap(const FactorTable& factors, std::span<const std::size_t> base_rows,
                        const FactorFeatures& features);

/// ASCII portable graymap (P2), one pixel per entry, 255 = 1.0.
std::string to_pgm(const Tensor& heatmap);

}  // namespace ipirm

#endif  // IPIRM_INSPECT_HPP
