#ifndef IPIRM_OBJECTIVE_HPP
#define IPIRM_OBJECTIVE_HPP

#include <span>
#include <vector>

#include "ipirm/autodiff.hpp"
#include "ipirm/partition_set.hpp"

namespace ipirm {

/// Anchor embeddings z and their augmented views z*, both N x d with unit
/// rows, on one tape. `indices` maps rows to dataset samples (identity when
/// empty) so partition columns can be restricted to the batch.
struct ContrastiveBatch {
  Var z;
  Var z_star;
  double temperature = 0.5;
  std::vector<std::size_t> indices;

  std::size_t size() const { return z.rows(); }
  std::size_t sample_index(std::size_t row) const { return indices.empty() ? row : indices[row]; }
};

/// Checks shapes, unit rows (to 1e-6) and temperature; throws DimensionError
/// or DomainError.
void validate(const ContrastiveBatch& batch);

/// Similarities shared by every subset term of a batch.
struct Similarities {
  Var logits;     // N x 2N: [z z^T, z z*^T] / tau
  Var positives;  // N x 1:  s_ii* / tau
};

Similarities similarities(const ContrastiveBatch& batch);

/// Candidate weights for the N x 2N logits: entry (i, j) is w_j for j != i,
/// entry (i, N + j) is w_j. w is N x 1.
Var candidate_weights(const Var& w);

/// Weighted mean over anchors of -theta s_ii*/tau + log sum_c w_c exp(theta s_ic/tau).
/// Throws DegenerateSubsetError when sum(w) <= 1.
Var subset_info_nce(const Similarities& s, const Var& w, double theta = 1.0);
Var subset_info_nce(const ContrastiveBatch& batch, const Var& w, double theta = 1.0);

/// d subset_info_nce / d theta at theta = 1, as a differentiable expression.
Var grad_theta(const Similarities& s, const Var& w);
Var grad_theta(const ContrastiveBatch& batch, const Var& w);

Var irm_penalty(const Similarities& s, const Var& w);
Var irm_penalty(const ContrastiveBatch& batch, const Var& w);

struct Step1Terms {
  Var loss;
  std::vector<double> penalties;  // one per non-skipped subset
};

/// Sum over partitions and both subsets of InfoNCE + lambda1 * penalty,
/// skipping batch-subsets with mass <= 1.
Step1Terms step1_loss(const ContrastiveBatch& batch, std::span<const PartitionMatrix> partitions,
                      double lambda1);
Step1Terms step1_loss(const ContrastiveBatch& batch, const PartitionSet& partitions,
                      double lambda1);

struct Barrier {
  double mu = 10.0;
  double epsilon = 0.5;
};

/// Soft Step-2 objective in the logits (N x 1): both subset terms with
/// lambda2-weighted penalties, minus a mass barrier on each subset.
Var step2_objective(const ContrastiveBatch& batch, const Var& logits, double lambda2,
                    const Barrier& barrier = {});
Var step2_objective(const Similarities& s, const Var& logits, double lambda2,
                    const Barrier& barrier = {});

struct Step2Evaluation {
  double objective = 0.0;
  Tensor grad;  // d objective / d logits, N x 1
};

/// Hand-derived value and logit gradient of step2_objective from similarity
/// values, sharing one exponential per similarity entry across both subsets.
/// Agrees with the taped objective to rounding.
Step2Evaluation step2_fused(const Tensor& sim_logits, const Tensor& positives,
                            const Tensor& logits, double lambda2, const Barrier& barrier = {});

/// Step-2 objective of a binary partition, without barrier. Evaluated from
/// similarity values only; nothing is recorded. assignment holds 1 or 2 per row.
double binary_objective(const Similarities& s, std::span<const std::uint8_t> assignment,
                        double lambda2);
double binary_objective(const ContrastiveBatch& batch, const PartitionMatrix& p, double lambda2);

}  // namespace ipirm

#endif  // IPIRM_OBJECTIVE_HPP
