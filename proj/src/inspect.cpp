#include "ipirm/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ipirm/error.hpp"

namespace ipirm {

std::vector<CompositionRow> subset_composition(std::span<const PartitionMatrix> partitions,
                                               const FactorTable& factors) {
  std::vector<CompositionRow> out;
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    const PartitionMatrix& p = partitions[k];
    if (p.size() != factors.count()) {
      throw DimensionError("subset_composition: partition over " + std::to_string(p.size()) +
                           " samples, factor table has " + std::to_string(factors.count()));
    }
    for (std::size_t f = 0; f < factors.factor_count(); ++f) {
      std::uint32_t top = 0;
      for (const auto& row : factors.values) top = std::max(top, row[f]);
      const std::size_t values = std::max<std::size_t>(factors.factors[f].cardinality, top + 1);
      std::vector<CompositionRow> rows(values);
      for (std::uint32_t v = 0; v < values; ++v) {
        rows[v] = CompositionRow{k, p.iteration, factors.factors[f].name, v, 0, 0};
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto& r = rows[factors.values[i][f]];
        (p.assignment[i] == 1 ? r.subset1 : r.subset2) += 1;
      }
      out.insert(out.end(), rows.begin(), rows.end());
    }
  }
  return out;
}

std::string composition_csv(std::span<const CompositionRow> rows) {
  std::ostringstream o;
  o << "partition,iteration,factor,value,subset1,subset2\n";
  for (const auto& r : rows) {
    o << r.partition << ',' << r.iteration << ',' << r.factor << ',' << r.value << ',' << r.subset1
      << ',' << r.subset2 << '\n';
  }
  return o.str();
}

Tensor variance_heatmap(const FactorTable& factors, std::span<const std::size_t> base_rows,
                        const FactorFeatures& features) {
  if (base_rows.empty()) throw UsageError("variance_heatmap: no base rows");
  const std::size_t nf = factors.factor_count();
  Tensor out;
  for (std::size_t f = 0; f < nf; ++f) {
    const std::size_t values = factors.factors[f].cardinality;
    for (std::size_t b : base_rows) {
      if (b >= factors.count()) throw UsageError("variance_heatmap: base row out of range");
      std::vector<std::vector<std::uint32_t>> sweep(values, factors.values[b]);
      for (std::uint32_t v = 0; v < values; ++v) sweep[v][f] = v;
      const Tensor z = features(sweep);
      if (z.rows() != values) throw DimensionError("variance_heatmap: feature callback row count");
      if (out.empty()) out = Tensor(nf, z.cols());
      for (std::size_t d = 0; d < z.cols(); ++d) {
        double mean = 0.0;
        for (std::size_t v = 0; v < values; ++v) mean += z(v, d);
        mean /= static_cast<double>(values);
        double var = 0.0;
        for (std::size_t v = 0; v < values; ++v) var += (z(v, d) - mean) * (z(v, d) - mean);
        out(f, d) += var / static_cast<double>(values) / static_cast<double>(base_rows.size());
      }
    }
  }
  for (std::size_t f = 0; f < out.rows(); ++f) {
    const auto row = out.row(f);
    const double top = *std::max_element(row.begin(), row.end());
    if (top > 0.0) {
      for (double& v : row) v /= top;
    }
  }
  return out;
}

std::string to_pgm(const Tensor& heatmap) {
  std::ostringstream o;
  o << "P2\n" << heatmap.cols() << ' ' << heatmap.rows() << "\n255\n";
  for (std::size_t r = 0; r < heatmap.rows(); ++r) {
    for (std::size_t c = 0; c < heatmap.cols(); ++c) {
      const double v = std::clamp(heatmap(r, c), 0.0, 1.0);
      o << (c ? " " : "") << static_cast<int>(std::lround(255.0 * v));
    }
    o << '\n';
  }
  return o.str();
}

}  // namespace ipirm
