#ifndef IPIRM_METRICS_HPP
#define IPIRM_METRICS_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ipirm/data.hpp"
#include "ipirm/tensor.hpp"

namespace ipirm {

enum class BinningMode { equal_width, quantile };

/// Encoder features plus ground truth and a train/test split of their rows.
struct EvalBundle {
  Tensor features;  // N x d
  FactorTable factors;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  /// Disjoint in-range splits, finite features, one factor row per feature row.
  void validate() const;
};

/// Seeded disjoint split with the 3:1 train:test ratio of the CMNIST protocol.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> eval_split(std::size_t n,
                                                                          std::uint64_t seed);

struct MetricSettings {
  std::size_t bins = 20;
  BinningMode binning = BinningMode::equal_width;
  std::size_t knn_k = 20;
  std::size_t probe_iterations = 2000;
  double probe_tolerance = 1e-6;
  /// Inverse regularization strength of the DCI and explicitness probes.
  double probe_c = 1.0;
  /// Grid and fold count of the cross-validated LR probe.
  std::size_t cv_cs = 10;
  std::size_t cv_folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
  std::string describe() const;
};

// ---- mutual information ----

/// Bin index per entry. A constant input lands in bin 0.
std::vector<std::uint32_t> discretize(std::span<const double> values, std::size_t bins,
                                      BinningMode mode);

/// Plug-in estimate in nats.
double mutual_info_discrete(std::span<const double> feature, std::span<const std::uint32_t> factor,
                            std::size_t bins, BinningMode mode = BinningMode::equal_width);

double entropy_discrete(std::span<const std::uint32_t> labels);

/// d x F matrix of MI between feature dimensions and factors over all rows.
Tensor mutual_info_matrix(const Tensor& features, const FactorTable& factors, std::size_t bins,
                          BinningMode mode);

// ---- scores ----

struct Modularity {
  double score = 0.0;
  std::vector<double> per_dimension;  // 1 - delta_i
};
Modularity modularity_from_mi(const Tensor& mi);
Modularity modularity_score(const EvalBundle& bundle, const MetricSettings& settings);

struct FactorScores {
  double score = 0.0;
  std::vector<double> per_factor;
  std::vector<std::string> warnings;
};

FactorScores explicitness_auc(const EvalBundle& bundle, const MetricSettings& settings);
FactorScores dci_informativeness(const EvalBundle& bundle, const MetricSettings& settings);
FactorScores irs_score(const EvalBundle& bundle, const MetricSettings& settings);
FactorScores lr_probe_accuracy(const EvalBundle& bundle, const MetricSettings& settings);
FactorScores knn_accuracy(const EvalBundle& bundle, std::size_t k);

/// Area under the ROC curve with ties counted half.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

// ---- probe ----

/// Multinomial logistic regression on features whitened with training
/// statistics; fit by accelerated gradient descent from zero weights.
class SoftmaxProbe {
 public:
  /// l2 multiplies 0.5 * |W|^2 added to the mean cross-entropy.
  SoftmaxProbe(const Tensor& x, std::span<const std::uint32_t> y, std::size_t classes, double l2,
               std::size_t iterations, double tolerance);

  /// n x classes probabilities.
  Tensor predict_proba(const Tensor& x) const;
  std::vector<std::uint32_t> predict(const Tensor& x) const;
  std::size_t iterations_run() const { return iterations_run_; }

 private:
  Tensor mean_;
  Tensor transform_;  // d x kept
  Tensor weights_;    // kept x classes
  Tensor bias_;       // 1 x classes
  std::size_t iterations_run_ = 0;
};

// ---- report ----

struct MetricsReport {
  double dci = 0.0;
  double irs = 0.0;
  double mod = 0.0;
  double exp = 0.0;
  double lr = 0.0;
  double knn = 0.0;
  std::vector<std::string> factor_names;
  std::vector<double> dci_per_factor, irs_per_factor, exp_per_factor, lr_per_factor, knn_per_factor;
  std::vector<double> mod_per_dimension;
  std::vector<std::string> warnings;
  std::string settings;

  /// Mean of the six headline scores.
  double average() const;
};

MetricsReport evaluate_metrics(const EvalBundle& bundle, const MetricSettings& settings);

/// "method,metric,factor,value": per-factor rows, then an "all" row per
/// metric, then the Average row.
std::string report_csv(std::span<const std::pair<std::string, MetricsReport>> reports);
void write_report_csv(const std::filesystem::path& path,
                      std::span<const std::pair<std::string, MetricsReport>> reports);

/// Methods x {DCI, IRS, MOD, EXP, LR, kNN, Average} text table.
std::string summary_table(std::span<const std::pair<std::string, MetricsReport>> reports);

}  // namespace ipirm

#endif  // IPIRM_METRICS_HPP
