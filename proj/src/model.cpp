#include "ipirm/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {

namespace {

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "none"; }

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) {
    throw ConfigError("architecture: " + key + " expects an integer, got '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
  return out;
}

Tensor fan_in_uniform(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (double& v : t.data()) v = uniform(rng, -bound, bound);
  return t;
}

Layer dense_layer(Rng& rng, std::size_t in, std::size_t out, Activation act, bool bias) {
  Layer l;
  l.kind = LayerKind::dense;
  l.weight = fan_in_uniform(rng, in, out, in);
  if (bias) l.bias = fan_in_uniform(rng, 1, out, in);
  l.activation = act;
  return l;
}

Layer conv_layer(Rng& rng, const ConvGeometry& geo, Activation act, bool bias) {
  Layer l;
  l.kind = LayerKind::conv;
  l.conv = geo;
  l.weight = fan_in_uniform(rng, geo.patch_size(), geo.out_channels, geo.patch_size());
  if (bias) l.bias = fan_in_uniform(rng, 1, geo.out_channels, geo.patch_size());
  l.activation = act;
  return l;
}

Var activate(const Var& x, Activation a) { return a == Activation::relu ? ops::relu(x) : x; }

Tape& tape_of(const Var& v) { return *const_cast<Tape*>(v.tape()); }

}  // namespace

Architecture Architecture::cmnist_mlp() {
  Architecture a;
  a.name = "cmnist-mlp";
  a.input_height = 28;
  a.input_width = 28;
  a.input_channels = 3;
  a.hidden = {256, 256};
  return a;
}

void Architecture::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw ConfigError("architecture: input dimensions must be positive");
  }
  if (feature_dim == 0 || head_hidden == 0 || embedding_dim == 0) {
    throw ConfigError("architecture: feature_dim, head_hidden and embedding_dim must be positive");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("architecture: hidden widths must be positive");
  }
  if (name == "cmnist-mlp") {
    if (input_height != 28 || input_width != 28 || input_channels != 3) {
      throw ConfigError("architecture: cmnist-mlp expects 28x28x3 input, got " +
                        std::to_string(input_height) + "x" + std::to_string(input_width) + "x" +
                        std::to_string(input_channels));
    }
  } else if (name == "factorworld-mlp") {
  } else if (name == "small-conv") {
    if (hidden.size() != 2) {
      throw ConfigError("architecture: small-conv needs exactly two hidden channel counts");
    }
    if (input_height != input_width || input_height % 4 != 0) {
      throw ConfigError("architecture: small-conv needs a square input with side divisible by 4");
    }
  } else {
    throw ConfigError("architecture: unknown descriptor '" + name +
                      "' (expected cmnist-mlp, factorworld-mlp or small-conv)");
  }
}

std::string Architecture::descriptor() const {
  std::ostringstream out;
  out << "name=" << name << ";input=" << input_height << 'x' << input_width << 'x'
      << input_channels << ";hidden=" << join_sizes(hidden) << ";feature_dim=" << feature_dim
      << ";head_hidden=" << head_hidden << ";embedding_dim=" << embedding_dim
      << ";activation=" << activation_name(hidden_activation) << ";bias=" << (use_bias ? 1 : 0);
  return out.str();
}

Architecture Architecture::from_descriptor(const std::string& text) {
  Architecture a;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("architecture: malformed field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "name") {
      a.name = value;
    } else if (key == "input") {
      const auto dims = [&] {
        std::vector<std::size_t> d;
        std::stringstream parts(value);
        std::string item;
        while (std::getline(parts, item, 'x')) d.push_back(parse_size(key, item));
        return d;
      }();
      if (dims.size() != 3) throw ConfigError("architecture: input expects HxWxC, got '" + value + "'");
      a.input_height = dims[0];
      a.input_width = dims[1];
      a.input_channels = dims[2];
    } else if (key == "hidden") {
      a.hidden = parse_sizes(key, value);
    } else if (key == "feature_dim") {
      a.feature_dim = parse_size(key, value);
    } else if (key == "head_hidden") {
      a.head_hidden = parse_size(key, value);
    } else if (key == "embedding_dim") {
      a.embedding_dim = parse_size(key, value);
    } else if (key == "activation") {
      if (value == "relu") {
        a.hidden_activation = Activation::relu;
      } else if (value == "none") {
        a.hidden_activation = Activation::none;
      } else {
        throw ConfigError("architecture: activation must be relu or none, got '" + value + "'");
      }
    } else if (key == "bias") {
      if (value != "0" && value != "1") throw ConfigError("architecture: bias must be 0 or 1");
      a.use_bias = value == "1";
    } else {
      throw ConfigError("architecture: unknown field '" + key + "'");
    }
  }
  a.validate();
  return a;
}

std::vector<Tensor*> EncoderParams::parameters() {
  std::vector<Tensor*> out;
  for (Layer& l : layers) {
    if (l.kind == LayerKind::avg_pool) continue;
    out.push_back(&l.weight);
    if (!l.bias.empty()) out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> EncoderParams::parameters() const {
  std::vector<const Tensor*> out;
  for (const Layer& l : layers) {
    if (l.kind == LayerKind::avg_pool) continue;
    out.push_back(&l.weight);
    if (!l.bias.empty()) out.push_back(&l.bias);
  }
  return out;
}

std::vector<Tensor*> ProjectionHead::parameters() {
  std::vector<Tensor*> out{&w1};
  if (!b1.empty()) out.push_back(&b1);
  out.insert(out.end(), {&gamma, &beta, &w2});
  if (!b2.empty()) out.push_back(&b2);
  return out;
}

std::vector<const Tensor*> ProjectionHead::parameters() const {
  std::vector<const Tensor*> out{&w1};
  if (!b1.empty()) out.push_back(&b1);
  out.insert(out.end(), {&gamma, &beta, &w2});
  if (!b2.empty()) out.push_back(&b2);
  return out;
}

void ProjectionHead::update_running_stats(const Tensor& pre_norm) {
  const std::size_t n = pre_norm.rows();
  if (n < 2 || pre_norm.cols() != running_mean.cols()) {
    throw DimensionError("update_running_stats: need at least two rows of width " +
                         std::to_string(running_mean.cols()) + ", got " +
                         pre_norm.shape_string());
  }
  for (std::size_t j = 0; j < pre_norm.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += pre_norm(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = pre_norm(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n - 1);
    running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean;
    running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var;
  }
}

std::vector<Tensor*> Model::parameters() {
  auto out = encoder.parameters();
  const auto h = head.parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  auto out = encoder.parameters();
  const auto h = head.parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

EncoderParams init_encoder(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  EncoderParams p;
  p.arch = arch;
  const Activation act = arch.hidden_activation;
  std::uint64_t index = 0;
  auto next_rng = [&] { return make_rng(seed, {0xe4c0de, index++}); };

  if (arch.name == "small-conv") {
    ConvGeometry g1{arch.input_height, arch.input_width, arch.input_channels, arch.hidden[0], 4, 2, 1};
    ConvGeometry g2{g1.out_height(), g1.out_width(), arch.hidden[0], arch.hidden[1], 4, 2, 1};
    auto r1 = next_rng();
    p.layers.push_back(conv_layer(r1, g1, act, arch.use_bias));
    auto r2 = next_rng();
    p.layers.push_back(conv_layer(r2, g2, act, arch.use_bias));
    Layer pool;
    pool.kind = LayerKind::avg_pool;
    pool.conv = ConvGeometry{g2.out_height(), g2.out_width(), arch.hidden[1], arch.hidden[1], 0, 1, 0};
    pool.pool_window = g2.out_height();
    p.layers.push_back(pool);
    auto r3 = next_rng();
    p.layers.push_back(dense_layer(r3, arch.hidden[1], arch.feature_dim, Activation::none,
                                   arch.use_bias));
    return p;
  }

  std::size_t in = arch.input_size();
  for (std::size_t width : arch.hidden) {
    auto rng = next_rng();
    p.layers.push_back(dense_layer(rng, in, width, act, arch.use_bias));
    in = width;
  }
  auto rng = next_rng();
  p.layers.push_back(dense_layer(rng, in, arch.feature_dim, Activation::none, arch.use_bias));
  return p;
}

ProjectionHead init_head(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ProjectionHead h;
  auto r1 = make_rng(seed, {0x4ead, 0});
  h.w1 = fan_in_uniform(r1, arch.feature_dim, arch.head_hidden, arch.feature_dim);
  if (arch.use_bias) h.b1 = fan_in_uniform(r1, 1, arch.head_hidden, arch.feature_dim);
  h.gamma = Tensor(1, arch.head_hidden, 1.0);
  h.beta = Tensor(1, arch.head_hidden, 0.0);
  h.running_mean = Tensor(1, arch.head_hidden, 0.0);
  h.running_var = Tensor(1, arch.head_hidden, 1.0);
  auto r2 = make_rng(seed, {0x4ead, 1});
  h.w2 = fan_in_uniform(r2, arch.head_hidden, arch.embedding_dim, arch.head_hidden);
  if (arch.use_bias) h.b2 = fan_in_uniform(r2, 1, arch.embedding_dim, arch.head_hidden);
  return h;
}

Model init_model(const Architecture& arch, std::uint64_t seed) {
  return Model{init_encoder(arch, seed), init_head(arch, seed)};
}

Binding bind(Tape& tape, const Model& model, bool trainable) {
  Binding b;
  for (const Tensor* t : model.encoder.parameters()) b.encoder.push_back(tape.leaf(*t, trainable));
  for (const Tensor* t : model.head.parameters()) b.head.push_back(tape.leaf(*t, trainable));
  return b;
}

Var encode(const EncoderParams& params, std::span<const Var> bound, const Var& images) {
  if (images.cols() != params.arch.input_size()) {
    throw DimensionError("encode: expected " + std::to_string(params.arch.input_size()) +
                         " input columns, got " + images.value().shape_string());
  }
  if (bound.size() != params.parameters().size()) {
    throw UsageError("encode: binding does not match the encoder parameters");
  }
  Var x = images;
  std::size_t k = 0;
  for (const Layer& l : params.layers) {
    switch (l.kind) {
      case LayerKind::dense: {
        x = ops::matmul(x, bound[k++]);
        if (!l.bias.empty()) x = ops::add_row(x, bound[k++]);
        break;
      }
      case LayerKind::conv: {
        const Var& w = bound[k++];
        const Var b = l.bias.empty() ? tape_of(images).constant(Tensor(1, l.conv.out_channels))
                                     : bound[k++];
        x = ops::conv2d(x, w, b, l.conv);
        break;
      }
      case LayerKind::avg_pool:
        x = ops::avg_pool(x, l.conv.height, l.conv.width, l.conv.in_channels, l.pool_window);
        break;
    }
    x = activate(x, l.activation);
  }
  return x;
}

HeadOutput project_and_normalize(const ProjectionHead& head, std::span<const Var> bound,
                                 const Var& features, NormMode mode) {
  if (bound.size() != head.parameters().size()) {
    throw UsageError("project_and_normalize: binding does not match the head parameters");
  }
  if (features.cols() != head.w1.rows()) {
    throw DimensionError("project_and_normalize: expected " + std::to_string(head.w1.rows()) +
                         " feature columns, got " + features.value().shape_string());
  }
  std::size_t k = 0;
  Var h = ops::matmul(features, bound[k++]);
  if (!head.b1.empty()) h = ops::add_row(h, bound[k++]);
  const Var& gamma = bound[k++];
  const Var& beta = bound[k++];
  const Var pre_norm = h;
  Tape& tape = tape_of(features);
  if (mode == NormMode::batch) {
    h = ops::batch_norm(h, gamma, beta, head.epsilon);
  } else {
    Tensor shift(1, head.running_mean.cols());
    Tensor inv_std(1, head.running_var.cols());
    for (std::size_t j = 0; j < shift.cols(); ++j) {
      shift[j] = -head.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(head.running_var[j] + head.epsilon);
    }
    h = ops::mul_row(ops::add_row(h, tape.constant(shift)), tape.constant(inv_std));
    h = ops::add_row(ops::mul_row(h, gamma), beta);
  }
  h = ops::relu(h);
  h = ops::matmul(h, bound[k++]);
  if (!head.b2.empty()) h = ops::add_row(h, bound[k++]);
  return HeadOutput{ops::l2_normalize_rows(h), pre_norm};
}

Tensor encode(const EncoderParams& params, const Tensor& images) {
  Tape tape;
  std::vector<Var> bound;
  for (const Tensor* t : params.parameters()) bound.push_back(tape.constant(*t));
  return encode(params, bound, tape.constant(images)).value();
}

Projection project_and_normalize(const ProjectionHead& head, const Tensor& features) {
  Tape tape;
  std::vector<Var> bound;
  for (const Tensor* t : head.parameters()) bound.push_back(tape.constant(*t));
  const HeadOutput out =
      project_and_normalize(head, bound, tape.constant(features), NormMode::running);
  Projection p{out.embeddings.value(), 0};
  for (std::size_t i = 0; i < p.embeddings.rows(); ++i) {
    double sq = 0.0;
    for (double v : p.embeddings.row(i)) sq += v * v;
    if (sq < 0.25) ++p.zero_rows;
  }
  return p;
}

}  // namespace ipirm
