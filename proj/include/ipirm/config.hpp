#ifndef IPIRM_CONFIG_HPP
#define IPIRM_CONFIG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ipirm/data.hpp"
#include "ipirm/metrics.hpp"
#include "ipirm/trainer.hpp"

namespace ipirm {

enum class DatasetKind { factorworld, cmnist };

/// Everything one experiment needs, addressed as "section.key = value".
struct ExperimentConfig {
  DatasetKind kind = DatasetKind::factorworld;
  DatasetSpec dataset;
  std::size_t eval_count = 4000;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;
  std::filesystem::path eval_idx_images;
  std::filesystem::path eval_idx_labels;
  TrainConfig train = TrainConfig::desk();
  MetricSettings metrics;
  std::filesystem::path out_dir = "runs";

  /// Desk defaults: correlated FactorWorld (shape/color, rho 0.9), N = 8192.
  static ExperimentConfig defaults();

  /// Throws ConfigError for unknown keys (naming the nearest valid key) and
  /// for unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Master seed for data, training and evaluation.
  void set_seed(std::uint64_t seed);

  /// Copies the dataset image shape into the architecture, then validates.
  void resolve();
  void validate() const;

  /// Every key with its value, one "key = value" line each, in table order.
  std::string resolved_text() const;
};

const std::vector<std::string>& config_keys();
std::string nearest_key(const std::string& key);

/// Lines "section.key = value"; '#' starts a comment.
ExperimentConfig parse_config(const std::string& text,
                              ExperimentConfig base = ExperimentConfig::defaults());
ExperimentConfig load_config(const std::filesystem::path& path);

/// Value of `key` in a "key = value" listing such as TrainConfig::describe().
std::string lookup_value(const std::string& listing, const std::string& key);

}  // namespace ipirm

#endif  // IPIRM_CONFIG_HPP
