#ifndef IPIRM_DATA_HPP
#define IPIRM_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ipirm/tensor.hpp"

namespace ipirm {

struct FactorSpec {
  std::string name;
  std::size_t cardinality = 2;

  friend bool operator==(const FactorSpec&, const FactorSpec&) = default;
};

enum class SamplingMode { sampled, exhaustive };

/// Generative description of a FactorWorld dataset.
///
/// Supported factor names: shape (square, disc, cross), color (palette of up
/// to six hues, needs 3 channels), pos_x, pos_y, scale. The correlated pair,
/// when set, couples two factors: with probability rho the second takes the
/// "aligned" value (first mod its cardinality), otherwise it is uniform.
/// Exhaustive mode enumerates the full grid and ignores count and rho.
struct DatasetSpec {
  std::vector<FactorSpec> factors{{"shape", 3}, {"color", 3}, {"scale", 3}, {"pos_x", 4}};
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::string style = "factorworld";
  double rho = 0.0;
  std::optional<std::pair<std::string, std::string>> correlated_pair;
  std::size_t count = 8192;
  SamplingMode mode = SamplingMode::sampled;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t grid_size() const;
};

/// Images as rows of a N x (H*W*C) tensor in HWC order, values in [0, 1].
struct ImageBatch {
  Tensor pixels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t count() const { return pixels.rows(); }
  std::size_t pixel_count() const { return height * width * channels; }
  ImageBatch select(std::span<const std::size_t> indices) const;
};

/// Ground-truth factor values. Used only for evaluation and inspection.
struct FactorTable {
  std::vector<FactorSpec> factors;
  std::vector<std::vector<std::uint32_t>> values;  // values[sample][factor]
  std::vector<bool> evaluable;

  std::size_t count() const { return values.size(); }
  std::size_t factor_count() const { return factors.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::vector<std::uint32_t> column(std::size_t factor) const;
  /// Subtable with only the evaluable factors.
  FactorTable evaluable_only() const;
  FactorTable select(std::span<const std::size_t> indices) const;
};

struct Dataset {
  ImageBatch images;
  FactorTable factors;
};

/// Deterministic FactorWorld renderer. Identical factor rows give identical
/// pixels.
Dataset generate_factorworld(const DatasetSpec& spec);

/// Renders one factor row (ordered as spec.factors) into `out`.
void render_factorworld(const DatasetSpec& spec, std::span<const std::uint32_t> factor_row,
                        std::span<double> out);

struct AugmentationConfig {
  std::size_t translate_radius = 1;  // pixels
  double noise_stddev = 0.05;
  double color_jitter = 0.4;  // in [0, 1]
  bool crop_rescale = false;

  void validate() const;
  bool is_identity() const {
    return translate_radius == 0 && noise_stddev == 0.0 && color_jitter == 0.0 && !crop_rescale;
  }
};

/// Per-sample random translation (zero fill), optional crop-and-rescale,
/// per-channel color jitter and Gaussian pixel noise, clipped to [0, 1].
/// Sample i draws from a stream derived from (seed, i).
ImageBatch augment(const ImageBatch& batch, const AugmentationConfig& config, std::uint64_t seed);

/// Marks factors whose name contains "color" as not evaluable when the
/// augmentation jitters color.
void mask_color_factors(FactorTable& table, const AugmentationConfig& config);

// ---- IDX ----

struct IdxArray {
  std::uint8_t type_code = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

/// Parses a big-endian IDX file: two zero bytes, type code, rank, then one
/// uint32 per dimension and the payload. Only unsigned-byte payloads (0x08)
/// are accepted.
IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(std::span<const std::uint8_t> bytes);

/// Rank-3 IDX image file, pixels scaled to [0, 1], single channel.
ImageBatch load_idx_images(const std::filesystem::path& path);
/// Rank-1 IDX label file.
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

/// Colors grayscale digits: red for 0-4 and green for 5-9 with probability
/// rho, the other color otherwise. Output has 3 channels and factors
/// (digit, color) with color 0 = red, 1 = green.
Dataset colorize_cmnist(const ImageBatch& gray, std::span<const std::uint8_t> labels, double rho,
                        std::uint64_t seed);

// ---- export ----

/// Writes images.f64 (little-endian float64, row-major), factors.csv
/// ("index,<factor names>") and dataset.meta.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ipirm

#endif  // IPIRM_DATA_HPP
