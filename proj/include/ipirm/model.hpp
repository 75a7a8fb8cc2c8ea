#ifndef IPIRM_MODEL_HPP
#define IPIRM_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ipirm/autodiff.hpp"
#include "ipirm/data.hpp"

namespace ipirm {

enum class Activation { none, relu };

/// Encoder family plus the shapes it needs.
///
///   cmnist-mlp       28x28x3 -> 256 -> 256 -> feature_dim
///   factorworld-mlp  HxWxC -> hidden... -> feature_dim
///   small-conv       two 4x4/stride-2 convolutions, global average pool, FC
struct Architecture {
  std::string name = "factorworld-mlp";
  std::size_t input_height = 16;
  std::size_t input_width = 16;
  std::size_t input_channels = 3;
  std::vector<std::size_t> hidden{128, 128};
  std::size_t feature_dim = 10;
  std::size_t head_hidden = 64;
  std::size_t embedding_dim = 32;
  Activation hidden_activation = Activation::relu;
  bool use_bias = true;

  static Architecture cmnist_mlp();
  std::size_t input_size() const { return input_height * input_width * input_channels; }
  void validate() const;
  /// One line of key=value pairs; parsed back by from_descriptor.
  std::string descriptor() const;
  static Architecture from_descriptor(const std::string& text);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

enum class LayerKind { dense, conv, avg_pool };

struct Layer {
  LayerKind kind = LayerKind::dense;
  Tensor weight;  // dense: in x out; conv: (k*k*cin) x cout
  Tensor bias;    // 1 x out, empty when the architecture has no biases
  Activation activation = Activation::none;
  ConvGeometry conv;
  std::size_t pool_window = 0;
};

/// Encoder phi: images to features.
struct EncoderParams {
  Architecture arch;
  std::vector<Layer> layers;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

/// feature_dim -> head_hidden (batch norm, ReLU) -> embedding_dim.
struct ProjectionHead {
  Tensor w1, b1, gamma, beta, w2, b2;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  /// Folds a training batch's pre-normalization activations into the
  /// running statistics (unbiased variance).
  void update_running_stats(const Tensor& pre_norm);
};

struct Model {
  EncoderParams encoder;
  ProjectionHead head;

  /// Encoder parameters followed by head parameters; running statistics are
  /// state, not parameters.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
};

/// Fan-in uniform init, deterministic in seed.
EncoderParams init_encoder(const Architecture& arch, std::uint64_t seed);
ProjectionHead init_head(const Architecture& arch, std::uint64_t seed);
Model init_model(const Architecture& arch, std::uint64_t seed);

/// Parameters bound as tape leaves, in Model::parameters() order.
struct Binding {
  std::vector<Var> encoder;
  std::vector<Var> head;
};

Binding bind(Tape& tape, const Model& model, bool trainable);

Var encode(const EncoderParams& params, std::span<const Var> bound, const Var& images);

struct HeadOutput {
  Var embeddings;  // unit rows
  Var pre_norm;    // first affine output, for running statistics
};

enum class NormMode { batch, running };

HeadOutput project_and_normalize(const ProjectionHead& head, std::span<const Var> bound,
                                 const Var& features, NormMode mode);

/// Untaped evaluation-mode passes.
Tensor encode(const EncoderParams& params, const Tensor& images);

struct Projection {
  Tensor embeddings;
  std::size_t zero_rows = 0;  // rows whose head output fell under the epsilon guard
};
Projection project_and_normalize(const ProjectionHead& head, const Tensor& features);

}  // namespace ipirm

#endif  // IPIRM_MODEL_HPP
