#include "ipirm/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Tensor& t) {
  return Eigen::Map<const Mat>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                               static_cast<Eigen::Index>(t.cols()));
}

Tensor from_eigen(const Mat& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  Eigen::Map<Mat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::size_t class_count(const FactorTable& t, std::size_t f) {
  std::uint32_t top = 0;
  for (const auto& row : t.values) top = std::max(top, row[f]);
  return std::max<std::size_t>(t.factors[f].cardinality, std::size_t{top} + 1);
}

std::vector<std::uint32_t> labels_at(const FactorTable& t, std::size_t f,
                                     std::span<const std::size_t> rows) {
  std::vector<std::uint32_t> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = t.values[rows[i]][f];
  return out;
}

void require_two_train_classes(const EvalBundle& b) {
  for (std::size_t f = 0; f < b.factors.factor_count(); ++f) {
    const auto y = labels_at(b.factors, f, b.train);
    if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) {
      throw DataError("factor '" + b.factors.factors[f].name +
                      "' has a single class in the train split");
    }
  }
}

double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

// ---- bundle ----

void EvalBundle::validate() const {
  if (features.rows() != factors.count()) {
    throw DimensionError("eval bundle: " + std::to_string(features.rows()) + " feature rows but " +
                         std::to_string(factors.count()) + " factor rows");
  }
  if (factors.factor_count() == 0) throw UsageError("eval bundle: no factors");
  if (train.empty() || test.empty()) throw UsageError("eval bundle: empty train or test split");
  std::vector<std::uint8_t> seen(features.rows(), 0);
  for (const auto* split : {&train, &test}) {
    for (std::size_t i : *split) {
      if (i >= features.rows()) {
        throw UsageError("eval bundle: split index " + std::to_string(i) + " out of range");
      }
      if (seen[i]++) {
        throw UsageError("eval bundle: index " + std::to_string(i) + " appears twice in the splits");
      }
    }
  }
  if (!features.all_finite()) throw DomainError("eval bundle: non-finite feature values");
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> eval_split(std::size_t n,
                                                                          std::uint64_t seed) {
  if (n < 2) throw UsageError("eval split needs at least 2 samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {0xe5a1});
  shuffle(order, rng);
  const std::size_t train = std::clamp<std::size_t>((3 * n + 2) / 4, 1, n - 1);
  std::vector<std::size_t> a(order.begin(), order.begin() + train);
  std::vector<std::size_t> b(order.begin() + train, order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

void MetricSettings::validate() const {
  if (bins < 2) throw ConfigError("metrics.bins must be at least 2");
  if (knn_k == 0) throw ConfigError("metrics.knn_k must be at least 1");
  if (probe_iterations == 0) throw ConfigError("metrics.probe_iterations must be at least 1");
  if (!(probe_tolerance > 0.0)) throw ConfigError("metrics.probe_tolerance must be positive");
  if (!(probe_c > 0.0)) throw ConfigError("metrics.probe_c must be positive");
  if (cv_cs == 0) throw ConfigError("metrics.cv_cs must be at least 1");
  if (cv_folds < 2) throw ConfigError("metrics.cv_folds must be at least 2");
}

std::string MetricSettings::describe() const {
  std::ostringstream o;
  o << "bins=" << bins << ";binning=" << (binning == BinningMode::quantile ? "quantile" : "equal_width")
    << ";knn_k=" << knn_k << ";probe_iterations=" << probe_iterations
    << ";probe_tolerance=" << fmt(probe_tolerance) << ";probe_c=" << fmt(probe_c)
    << ";cv_cs=" << cv_cs << ";cv_folds=" << cv_folds << ";seed=" << seed;
  return o.str();
}

// ---- mutual information ----

std::vector<std::uint32_t> discretize(std::span<const double> values, std::size_t bins,
                                      BinningMode mode) {
  if (bins < 2) throw UsageError("discretize: bins must be at least 2");
  const std::size_t n = values.size();
  std::vector<std::uint32_t> out(n, 0);
  if (n == 0) return out;
  if (mode == BinningMode::equal_width) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double width = *hi - *lo;
    if (!(width > 0.0)) return out;
    for (std::size_t i = 0; i < n; ++i) {
      const double b = std::floor((values[i] - *lo) / width * static_cast<double>(bins));
      out[i] = static_cast<std::uint32_t>(std::min<double>(b, static_cast<double>(bins - 1)));
    }
    return out;
  }
  // Quantile: equal values share the bin of their first rank.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::size_t first = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0 && values[order[r]] != values[order[r - 1]]) first = r;
    out[order[r]] = static_cast<std::uint32_t>(first * bins / n);
  }
  return out;
}

double entropy_discrete(std::span<const std::uint32_t> labels) {
  std::map<std::uint32_t, std::size_t> counts;
  for (auto l : labels) ++counts[l];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double mutual_info_discrete(std::span<const double> feature, std::span<const std::uint32_t> factor,
                            std::size_t bins, BinningMode mode) {
  if (feature.size() != factor.size()) {
    throw DimensionError("mutual_info_discrete: " + std::to_string(feature.size()) +
                         " feature values vs " + std::to_string(factor.size()) + " labels");
  }
  if (feature.empty()) return 0.0;
  const auto x = discretize(feature, bins, mode);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> joint;
  std::map<std::uint32_t, std::size_t> px, pf;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ++joint[{x[i], factor[i]}];
    ++px[x[i]];
    ++pf[factor[i]];
  }
  const double n = static_cast<double>(x.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pxy = static_cast<double>(c) / n;
    const double a = static_cast<double>(px[key.first]) / n;
    const double b = static_cast<double>(pf[key.second]) / n;
    mi += pxy * std::log(pxy / (a * b));
  }
  return std::max(mi, 0.0);
}

Tensor mutual_info_matrix(const Tensor& features, const FactorTable& factors, std::size_t bins,
                          BinningMode mode) {
  if (features.rows() != factors.count()) {
    throw DimensionError("mutual_info_matrix: feature and factor row counts differ");
  }
  const std::size_t d = features.cols();
  Tensor out(d, factors.factor_count());
  std::vector<double> column(features.rows());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t r = 0; r < features.rows(); ++r) column[r] = features(r, i);
    for (std::size_t f = 0; f < factors.factor_count(); ++f) {
      out(i, f) = mutual_info_discrete(column, factors.column(f), bins, mode);
    }
  }
  return out;
}

// ---- modularity ----

Modularity modularity_from_mi(const Tensor& mi) {
  const std::size_t factors = mi.cols();
  if (factors < 2) throw UsageError("modularity needs at least 2 factors");
  Modularity out;
  out.per_dimension.resize(mi.rows());
  for (std::size_t i = 0; i < mi.rows(); ++i) {
    const auto row = mi.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const double theta = row[best];
    if (!(theta > 0.0)) {
      out.per_dimension[i] = 1.0;
      continue;
    }
    double dev = 0.0;
    for (std::size_t f = 0; f < factors; ++f) {
      const double t = f == best ? theta : 0.0;
      dev += (row[f] - t) * (row[f] - t);
    }
    const double delta = dev / (theta * theta * static_cast<double>(factors - 1));
    out.per_dimension[i] = clamp01(1.0 - delta);
  }
  out.score = mi.rows() ? mean(out.per_dimension) : 1.0;
  return out;
}

Modularity modularity_score(const EvalBundle& bundle, const MetricSettings& settings) {
  bundle.validate();
  return modularity_from_mi(
      mutual_info_matrix(bundle.features, bundle.factors, settings.bins, settings.binning));
}

// ---- probe ----

SoftmaxProbe::SoftmaxProbe(const Tensor& x, std::span<const std::uint32_t> y, std::size_t classes,
                           double l2, std::size_t iterations, double tolerance) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  if (n == 0 || y.size() != x.rows()) throw DimensionError("SoftmaxProbe: bad training shapes");
  if (classes < 2) throw UsageError("SoftmaxProbe: need at least 2 classes");
  for (auto v : y) {
    if (v >= classes) throw UsageError("SoftmaxProbe: label out of range");
  }
  const Mat raw = to_eigen(x);
  const Eigen::RowVectorXd mu = raw.colwise().mean();
  const Mat centered = raw.rowwise() - mu;
  const Mat cov = centered.transpose() * centered / static_cast<double>(n);

  // Whitening makes the fit equivariant to invertible affine maps of x.
  const Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Vec lambda = eig.eigenvalues();
  const double top = lambda.size() ? lambda.maxCoeff() : 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    if (lambda[j] > 1e-10 * top && lambda[j] > 1e-300) keep.push_back(j);
  }
  const auto m = static_cast<Eigen::Index>(keep.size());
  Mat transform(raw.cols(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    transform.col(j) = eig.eigenvectors().col(keep[j]) / std::sqrt(lambda[keep[j]]);
  }
  const Mat z = centered * transform;

  const auto k = static_cast<Eigen::Index>(classes);
  Mat onehot = Mat::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[i]) = 1.0;

  // Lipschitz bound of the mean cross-entropy gradient: softmax curvature <= 1/2.
  Mat design(n, m + 1);
  design.leftCols(m) = z;
  design.col(m).setOnes();
  const Mat gram = design.transpose() * design / static_cast<double>(n);
  const double lipschitz =
      0.5 * Eigen::SelfAdjointEigenSolver<Mat>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff() + l2;
  const double step = 1.0 / lipschitz;

  // theta = [W; b] as (m + 1) x k.
  Mat theta = Mat::Zero(m + 1, k);
  Mat previous = theta;
  Mat grad(m + 1, k);
  auto gradient = [&](const Mat& at) {
    Mat logits = design * at;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top_logit = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - top_logit).exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    grad = design.transpose() * (logits - onehot) / static_cast<double>(n);
    grad.topRows(m) += l2 * at.topRows(m);
  };
  for (std::size_t it = 1; it <= iterations; ++it) {
    const double momentum = static_cast<double>(it - 1) / static_cast<double>(it + 2);
    const Mat look = theta + momentum * (theta - previous);
    gradient(look);
    previous = theta;
    theta = look - step * grad;
    iterations_run_ = it;
    if (grad.cwiseAbs().maxCoeff() < tolerance) break;
  }

  mean_ = from_eigen(mu);
  transform_ = from_eigen(transform);
  weights_ = from_eigen(theta.topRows(m));
  bias_ = from_eigen(theta.bottomRows(1));
}

Tensor SoftmaxProbe::predict_proba(const Tensor& x) const {
  const Mat raw = to_eigen(x);
  const Mat z = (raw.rowwise() - to_eigen(mean_).row(0)) * to_eigen(transform_);
  Mat logits = z * to_eigen(weights_);
  logits.rowwise() += to_eigen(bias_).row(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - top).exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
  return from_eigen(logits);
}

std::vector<std::uint32_t> SoftmaxProbe::predict(const Tensor& x) const {
  const Tensor p = predict_proba(x);
  std::vector<std::uint32_t> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

// ---- explicitness / informativeness / LR ----

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw DimensionError("roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw UsageError("roc_auc: needs both positive and negative samples");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

FactorScores explicitness_auc(const EvalBundle& bundle, const MetricSettings& settings) {
  bundle.validate();
  require_two_train_classes(bundle);
  const Tensor xtrain = bundle.features.select_rows(bundle.train);
  const Tensor xtest = bundle.features.select_rows(bundle.test);
  const double l2 = 1.0 / (settings.probe_c * static_cast<double>(bundle.train.size()));
  FactorScores out;
  for (std::size_t f = 0; f < bundle.factors.factor_count(); ++f) {
    const auto ytrain = labels_at(bundle.factors, f, bundle.train);
    const auto ytest = labels_at(bundle.factors, f, bundle.test);
    std::vector<double> aucs;
    for (std::uint32_t c = 0; c < class_count(bundle.factors, f); ++c) {
      std::vector<std::uint8_t> pos(ytest.size());
      std::size_t count = 0;
      for (std::size_t i = 0; i < ytest.size(); ++i) count += pos[i] = ytest[i] == c;
      const std::string tag = "factor '" + bundle.factors.factors[f].name + "' class " + std::to_string(c);
      if (count == 0 || count == ytest.size()) {
        out.warnings.push_back("explicitness: " + tag + " skipped, one-sided in the test split");
        continue;
      }
      std::vector<std::uint32_t> binary(ytrain.size());
      std::size_t train_pos = 0;
      for (std::size_t i = 0; i < ytrain.size(); ++i) train_pos += binary[i] = ytrain[i] == c;
      if (train_pos == 0 || train_pos == ytrain.size()) {
        out.warnings.push_back("explicitness: " + tag + " skipped, one-sided in the train split");
        continue;
      }
      const SoftmaxProbe probe(xtrain, binary, 2, l2, settings.probe_iterations, settings.probe_tolerance);
      const Tensor p = probe.predict_proba(xtest);
      std::vector<double> scores(p.rows());
      for (std::size_t i = 0; i < p.rows(); ++i) scores[i] = p(i, 1);
      aucs.push_back(roc_auc(scores, pos));
    }
    out.per_factor.push_back(aucs.empty() ? 0.5 : clamp01(mean(aucs)));
  }
  out.score = mean(out.per_factor);
  return out;
}

FactorScores dci_informativeness(const EvalBundle& bundle, const MetricSettings& settings) {
  bundle.validate();
  require_two_train_classes(bundle);
  const Tensor xtrain = bundle.features.select_rows(bundle.train);
  const Tensor xtest = bundle.features.select_rows(bundle.test);
  const double l2 = 1.0 / (settings.probe_c * static_cast<double>(bundle.train.size()));
  FactorScores out;
  for (std::size_t f = 0; f < bundle.factors.factor_count(); ++f) {
    const SoftmaxProbe probe(xtrain, labels_at(bundle.factors, f, bundle.train),
                             class_count(bundle.factors, f), l2, settings.probe_iterations,
                             settings.probe_tolerance);
    out.per_factor.push_back(accuracy(probe.predict(xtest), labels_at(bundle.factors, f, bundle.test)));
  }
  out.score = mean(out.per_factor);
  return out;
}

FactorScores lr_probe_accuracy(const EvalBundle& bundle, const MetricSettings& settings) {
  bundle.validate();
  require_two_train_classes(bundle);
  const std::size_t folds = std::min(settings.cv_folds, bundle.train.size());
  std::vector<double> cs(settings.cv_cs);
  for (std::size_t j = 0; j < cs.size(); ++j) {
    const double t = cs.size() == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(cs.size() - 1);
    cs[j] = std::pow(10.0, -4.0 + 8.0 * t);
  }
  std::vector<std::size_t> order(bundle.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(settings.seed, {0xcf01d});
  shuffle(order, rng);

  const Tensor xtrain = bundle.features.select_rows(bundle.train);
  const Tensor xtest = bundle.features.select_rows(bundle.test);
  FactorScores out;
  for (std::size_t f = 0; f < bundle.factors.factor_count(); ++f) {
    const auto ytrain = labels_at(bundle.factors, f, bundle.train);
    const std::size_t classes = class_count(bundle.factors, f);
    std::size_t best = 0;
    double best_acc = -1.0;
    for (std::size_t j = 0; j < cs.size(); ++j) {
      double total = 0.0;
      for (std::size_t k = 0; k < folds; ++k) {
        std::vector<std::size_t> fit_rows, held_rows;
        for (std::size_t i = 0; i < order.size(); ++i) (i % folds == k ? held_rows : fit_rows).push_back(order[i]);
        std::vector<std::uint32_t> yfit(fit_rows.size()), yheld(held_rows.size());
        for (std::size_t i = 0; i < fit_rows.size(); ++i) yfit[i] = ytrain[fit_rows[i]];
        for (std::size_t i = 0; i < held_rows.size(); ++i) yheld[i] = ytrain[held_rows[i]];
        const double l2 = 1.0 / (cs[j] * static_cast<double>(fit_rows.size()));
        const SoftmaxProbe probe(xtrain.select_rows(fit_rows), yfit, classes, l2,
                                 settings.probe_iterations, settings.probe_tolerance);
        total += accuracy(probe.predict(xtrain.select_rows(held_rows)), yheld);
      }
      if (total / static_cast<double>(folds) > best_acc) {
        best_acc = total / static_cast<double>(folds);
        best = j;
      }
    }
    const double l2 = 1.0 / (cs[best] * static_cast<double>(bundle.train.size()));
    const SoftmaxProbe probe(xtrain, ytrain, classes, l2, settings.probe_iterations,
                             settings.probe_tolerance);
    out.per_factor.push_back(accuracy(probe.predict(xtest), labels_at(bundle.factors, f, bundle.test)));
  }
  out.score = mean(out.per_factor);
  return out;
}

// ---- IRS ----

FactorScores irs_score(const EvalBundle& bundle, const MetricSettings& settings) {
  bundle.validate();
  const Tensor& z = bundle.features;
  const FactorTable& table = bundle.factors;
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  const std::size_t nf = table.factor_count();
  const Tensor mi = mutual_info_matrix(z, table, settings.bins, settings.binning);

  std::vector<std::size_t> owner(d, nf);
  for (std::size_t i = 0; i < d; ++i) {
    const auto row = mi.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (row[best] > 0.0) owner[i] = best;
  }

  FactorScores out;
  for (std::size_t j = 0; j < nf; ++j) {
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < d; ++i) {
      if (owner[i] == j) dims.push_back(i);
    }
    if (dims.empty() && d > 0) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < d; ++i) {
        if (mi(i, j) > mi(best, j)) best = i;
      }
      dims.push_back(best);
    }
    auto project = [&](std::size_t r) {
      Vec v(static_cast<Eigen::Index>(dims.size()));
      for (std::size_t t = 0; t < dims.size(); ++t) v[static_cast<Eigen::Index>(t)] = z(r, dims[t]);
      return v;
    };

    Vec global = Vec::Zero(static_cast<Eigen::Index>(dims.size()));
    for (std::size_t r = 0; r < n; ++r) global += project(r);
    global /= static_cast<double>(n);
    double scale = 0.0;
    for (std::size_t r = 0; r < n; ++r) scale = std::max(scale, (project(r) - global).norm());

    // target value -> nuisance realization -> (sum, count)
    std::map<std::uint32_t, std::map<std::vector<std::uint32_t>, std::pair<Vec, std::size_t>>> groups;
    std::map<std::uint32_t, std::size_t> sizes;
    for (std::size_t r = 0; r < n; ++r) {
      const auto& row = table.values[r];
      std::vector<std::uint32_t> nuisance;
      for (std::size_t g = 0; g < nf; ++g) {
        if (g != j) nuisance.push_back(row[g]);
      }
      auto [it, fresh] = groups[row[j]].try_emplace(
          std::move(nuisance), Vec::Zero(static_cast<Eigen::Index>(dims.size())), 0);
      it->second.first += project(r);
      ++it->second.second;
      ++sizes[row[j]];
    }

    double weighted = 0.0;
    std::size_t counted = 0;
    for (const auto& [value, realizations] : groups) {
      const std::size_t size = sizes[value];
      if (size < 2) {
        out.warnings.push_back("irs: factor '" + table.factors[j].name + "' value " +
                               std::to_string(value) + " has a single sample, excluded");
        continue;
      }
      Vec group_mean = Vec::Zero(static_cast<Eigen::Index>(dims.size()));
      for (const auto& [_, acc] : realizations) group_mean += acc.first;
      group_mean /= static_cast<double>(size);
      double worst = 0.0;
      for (const auto& [_, acc] : realizations) {
        worst = std::max(worst, (acc.first / static_cast<double>(acc.second) - group_mean).norm());
      }
      const double normalized = scale > 0.0 ? std::min(1.0, worst / scale) : 0.0;
      weighted += static_cast<double>(size) * normalized;
      counted += size;
    }
    out.per_factor.push_back(counted ? clamp01(1.0 - weighted / static_cast<double>(counted)) : 1.0);
  }
  out.score = mean(out.per_factor);
  return out;
}

// ---- kNN ----

FactorScores knn_accuracy(const EvalBundle& bundle, std::size_t k) {
  bundle.validate();
  if (k == 0 || k > bundle.train.size()) {
    throw UsageError("knn: k = " + std::to_string(k) + " must lie in [1, " +
                     std::to_string(bundle.train.size()) + "]");
  }
  auto unit = [&](std::span<const std::size_t> rows) {
    Mat m = to_eigen(bundle.features.select_rows(rows));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double norm = m.row(i).norm();
      if (norm > 0.0) m.row(i) /= norm;
    }
    return m;
  };
  const Mat train = unit(bundle.train);
  const Mat test = unit(bundle.test);
  const std::size_t nf = bundle.factors.factor_count();
  std::vector<std::size_t> hits(nf, 0);
  std::vector<std::size_t> order(bundle.train.size());

  for (Eigen::Index q = 0; q < test.rows(); ++q) {
    const Vec sims = train * test.row(q).transpose();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const auto ia = static_cast<Eigen::Index>(a);
                        const auto ib = static_cast<Eigen::Index>(b);
                        return sims[ia] != sims[ib] ? sims[ia] > sims[ib] : a < b;
                      });
    for (std::size_t f = 0; f < nf; ++f) {
      std::map<std::uint32_t, std::pair<std::size_t, double>> votes;  // count, distance sum
      for (std::size_t t = 0; t < k; ++t) {
        auto& v = votes[bundle.factors.values[bundle.train[order[t]]][f]];
        ++v.first;
        v.second += 1.0 - sims[static_cast<Eigen::Index>(order[t])];
      }
      std::uint32_t winner = 0;
      std::size_t best_count = 0;
      double best_mean = 0.0;
      for (const auto& [label, v] : votes) {
        const double mean_distance = v.second / static_cast<double>(v.first);
        if (v.first > best_count || (v.first == best_count && mean_distance < best_mean)) {
          winner = label;
          best_count = v.first;
          best_mean = mean_distance;
        }
      }
      hits[f] += winner == bundle.factors.values[bundle.test[static_cast<std::size_t>(q)]][f];
    }
  }
  FactorScores out;
  for (std::size_t f = 0; f < nf; ++f) {
    out.per_factor.push_back(static_cast<double>(hits[f]) / static_cast<double>(bundle.test.size()));
  }
  out.score = mean(out.per_factor);
  return out;
}

// ---- report ----

double MetricsReport::average() const { return (dci + irs + mod + exp + lr + knn) / 6.0; }

MetricsReport evaluate_metrics(const EvalBundle& bundle, const MetricSettings& settings) {
  settings.validate();
  bundle.validate();
  MetricsReport r;
  r.settings = settings.describe();
  for (const FactorSpec& f : bundle.factors.factors) r.factor_names.push_back(f.name);

  auto take = [&](const FactorScores& s, double& score, std::vector<double>& per) {
    score = s.score;
    per = s.per_factor;
    r.warnings.insert(r.warnings.end(), s.warnings.begin(), s.warnings.end());
  };
  take(dci_informativeness(bundle, settings), r.dci, r.dci_per_factor);
  take(irs_score(bundle, settings), r.irs, r.irs_per_factor);
  const Modularity m = modularity_score(bundle, settings);
  r.mod = m.score;
  r.mod_per_dimension = m.per_dimension;
  take(explicitness_auc(bundle, settings), r.exp, r.exp_per_factor);
  take(lr_probe_accuracy(bundle, settings), r.lr, r.lr_per_factor);
  take(knn_accuracy(bundle, std::min(settings.knn_k, bundle.train.size())), r.knn, r.knn_per_factor);
  return r;
}

std::string report_csv(std::span<const std::pair<std::string, MetricsReport>> reports) {
  std::ostringstream o;
  o << "method,metric,factor,value\n";
  for (const auto& [method, r] : reports) {
    auto per_factor = [&](const char* metric, const std::vector<double>& values) {
      for (std::size_t f = 0; f < values.size(); ++f) {
        o << method << ',' << metric << ',' << r.factor_names.at(f) << ',' << fmt(values[f]) << '\n';
      }
    };
    per_factor("DCI", r.dci_per_factor);
    per_factor("IRS", r.irs_per_factor);
    for (std::size_t i = 0; i < r.mod_per_dimension.size(); ++i) {
      o << method << ",MOD,dim" << i << ',' << fmt(r.mod_per_dimension[i]) << '\n';
    }
    per_factor("EXP", r.exp_per_factor);
    per_factor("LR", r.lr_per_factor);
    per_factor("kNN", r.knn_per_factor);
    const std::pair<const char*, double> totals[] = {{"DCI", r.dci}, {"IRS", r.irs}, {"MOD", r.mod},
                                                     {"EXP", r.exp}, {"LR", r.lr},   {"kNN", r.knn},
                                                     {"Average", r.average()}};
    for (const auto& [metric, value] : totals) o << method << ',' << metric << ",all," << fmt(value) << '\n';
  }
  return o.str();
}

void write_report_csv(const std::filesystem::path& path,
                      std::span<const std::pair<std::string, MetricsReport>> reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << report_csv(reports);
  if (!out) throw DataError("failed writing " + path.string());
}

std::string summary_table(std::span<const std::pair<std::string, MetricsReport>> reports) {
  std::size_t width = 6;
  for (const auto& [method, _] : reports) width = std::max(width, method.size());
  std::ostringstream o;
  auto pad = [&](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  o << pad("Method", width);
  for (const char* h : {"DCI", "IRS", "MOD", "EXP", "LR", "kNN", "Average"}) o << "  " << pad(h, 7);
  o << '\n';
  for (const auto& [method, r] : reports) {
    o << pad(method, width);
    for (double v : {r.dci, r.irs, r.mod, r.exp, r.lr, r.knn, r.average()}) o << "  " << pad(fixed(v, 4), 7);
    o << '\n';
  }
  return o.str();
}

}  // namespace ipirm
