#ifndef IPIRM_EXPERIMENT_HPP
#define IPIRM_EXPERIMENT_HPP

#include "ipirm/config.hpp"
#include "ipirm/metrics.hpp"
#include "ipirm/trainer.hpp"

namespace ipirm {

/// Training split described by the config. CMNIST keeps the first
/// dataset.count samples of the IDX files.
Dataset build_train_dataset(const ExperimentConfig& config);

/// Held-out split. FactorWorld: an independent draw of eval_count samples
/// from the same generator. CMNIST: the eval IDX files, or the tail of the
/// training files when none are given.
Dataset build_eval_dataset(const ExperimentConfig& config);

/// Encoder features of the eval images against the evaluable factors.
/// ConfigError when fewer than two factors remain evaluable.
MetricsReport evaluate_encoder(const ExperimentConfig& config, const Model& model,
                               const Dataset& eval);

}  // namespace ipirm

#endif  // IPIRM_EXPERIMENT_HPP
