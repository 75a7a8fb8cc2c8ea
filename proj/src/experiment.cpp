#include "ipirm/experiment.hpp"

#include <algorithm>
#include <filesystem>

#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {
namespace {

namespace fs = std::filesystem;

Dataset first_rows(const Dataset& d, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return Dataset{d.images.select(rows), d.factors.select(rows)};
}

Dataset cmnist_from(const fs::path& images, const fs::path& labels, double rho,
                    std::uint64_t seed) {
  const ImageBatch gray = load_idx_images(images);
  const auto y = load_idx_labels(labels);
  if (y.size() != gray.count()) {
    throw DataError("IDX image/label count mismatch: " + std::to_string(gray.count()) + " vs " +
                    std::to_string(y.size()));
  }
  return colorize_cmnist(gray, y, rho, seed);
}

}  // namespace

Dataset build_train_dataset(const ExperimentConfig& c) {
  if (c.kind == DatasetKind::factorworld) return generate_factorworld(c.dataset);
  Dataset d = cmnist_from(c.idx_images, c.idx_labels, c.dataset.rho, c.dataset.seed);
  return first_rows(d, 0, std::min(c.dataset.count, d.images.count()));
}

Dataset build_eval_dataset(const ExperimentConfig& c) {
  const std::uint64_t seed = derive_seed(c.dataset.seed, {0xe7a1});
  if (c.kind == DatasetKind::factorworld) {
    DatasetSpec s = c.dataset;
    s.count = c.eval_count;
    s.seed = seed;
    return generate_factorworld(s);
  }
  if (!c.eval_idx_images.empty() && !c.eval_idx_labels.empty()) {
    Dataset d = cmnist_from(c.eval_idx_images, c.eval_idx_labels, c.dataset.rho, seed);
    return first_rows(d, 0, std::min(c.eval_count, d.images.count()));
  }
  Dataset d = cmnist_from(c.idx_images, c.idx_labels, c.dataset.rho, seed);
  const std::size_t n = d.images.count();
  return first_rows(d, n - std::min(c.eval_count, n), n);
}

MetricsReport evaluate_encoder(const ExperimentConfig& c, const Model& model, const Dataset& eval) {
  FactorTable table = eval.factors;
  mask_color_factors(table, c.train.augmentation);
  table = table.evaluable_only();
  if (table.factor_count() < 2) {
    throw ConfigError(
        "evaluation needs at least two evaluable factors; color factors are excluded while "
        "augment.color_jitter > 0");
  }
  auto [train_rows, test_rows] = eval_split(eval.images.count(), c.metrics.seed);
  const EvalBundle bundle{encode(model.encoder, eval.images.pixels), table, train_rows, test_rows};
  return evaluate_metrics(bundle, c.metrics);
}

}  // namespace ipirm
