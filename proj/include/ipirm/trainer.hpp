#ifndef IPIRM_TRAINER_HPP
#define IPIRM_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ipirm/adam.hpp"
#include "ipirm/data.hpp"
#include "ipirm/model.hpp"
#include "ipirm/partition.hpp"

namespace ipirm {

enum class TrainMode { ipirm, simclr };

const char* mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& text);

/// Struct defaults follow the published hyperparameters where they exist;
/// desk() rescales the budget for a single laptop core.
struct TrainConfig {
  TrainMode mode = TrainMode::ipirm;
  double lambda1 = 0.2;
  double lambda2 = 0.5;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  double encoder_lr = 1e-3;
  double head_lr = 1e-3;
  std::size_t refresh_interval = 30;
  std::size_t partition_capacity = 5;
  double temperature = 0.5;
  Architecture arch;
  AugmentationConfig augmentation;
  /// Step-2 search over the full training set; steps counts passes over the rows.
  AscentConfig ascent{20, 0.05, 2, 0.5, {}};
  std::size_t ascent_batch = 256;
  std::size_t refresh_attempts = 3;
  std::uint64_t seed = 0;

  static TrainConfig desk();
  void validate() const;
  /// key=value lines, one per field, in a fixed order.
  std::string describe() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double penalty_mean = 0.0;
  bool refresh = false;
  double objective = 0.0;  // thresholded Step-2 objective, refresh epochs only
  double baseline = 0.0;   // same objective for a random balanced split
  double wall_seconds = 0.0;  // in memory only

  friend bool operator==(const EpochRecord& a, const EpochRecord& b);
};

struct RunHistory {
  std::vector<EpochRecord> records;

  /// CSV "epoch,loss,penalty_mean,refresh_flag,objective"; the objective is
  /// empty on epochs without a refresh.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  friend bool operator==(const RunHistory&, const RunHistory&) = default;
};

struct TrainState {
  Model model;
  AdamState encoder_opt;
  AdamState head_opt;
  PartitionSet partitions{0, 1};
  RunHistory history;
  std::size_t next_epoch = 0;

  friend bool operator==(const TrainState& a, const TrainState& b);
};

/// Seeded permutation for the epoch cut into batches of `batch` (last one short).
std::vector<std::vector<std::size_t>> minibatch_schedule(std::size_t n, std::size_t batch,
                                                         std::uint64_t seed, std::size_t epoch);

TrainState init_state(const TrainConfig& config, const Dataset& dataset);

/// Progress hook called after every finished epoch.
using EpochHook = std::function<void(const TrainState&)>;

/// Trains epochs [state.next_epoch, until).
void run_epochs(TrainState& state, const TrainConfig& config, const Dataset& dataset,
                std::size_t until, const EpochHook& hook = {});

TrainState train(const TrainConfig& config, const Dataset& dataset, const EpochHook& hook = {});

/// Whether a Step-2 refresh runs at the start of `epoch`.
bool refresh_due(const TrainConfig& config, std::size_t epoch);

/// Frozen-encoder projections of two augmented views of every sample.
std::pair<Tensor, Tensor> step2_views(const Model& model, const TrainConfig& config,
                                      const ImageBatch& images, std::size_t epoch);

/// Step-1 gradient pass of one minibatch; exposed for tests.
struct BatchStep {
  double loss = 0.0;
  std::vector<double> penalties;
};
BatchStep train_batch(TrainState& state, const TrainConfig& config, const ImageBatch& images,
                      std::span<const std::size_t> rows, std::size_t epoch, std::size_t batch);

// ---- checkpoints ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "IPIRMCKP", version, architecture descriptor, config description, then
/// little-endian float64 payloads for parameters, running statistics,
/// optimizer moments, the partition set and the run history.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& config);
std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state, const TrainConfig& config);

struct Checkpoint {
  TrainState state;
  Architecture arch;
  std::string config_text;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace ipirm

#endif  // IPIRM_TRAINER_HPP
