#include "ipirm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "ipirm/error.hpp"

namespace ipirm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) out.push_back(trim(part));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("bad value '" + value + "' for " + key + ": expected " + expected);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  bad_value(key, v, "true/false or 1/0");
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field size_field(std::string key, T ExperimentConfig::*section, std::size_t T::*member) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) { (c.*section).*member = to_u64(key, v); },
          [=](const ExperimentConfig& c) { return std::to_string((c.*section).*member); }};
}

template <typename T>
Field double_field(std::string key, T ExperimentConfig::*section, double T::*member) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) { (c.*section).*member = to_double(key, v); },
          [=](const ExperimentConfig& c) { return num((c.*section).*member); }};
}

Field path_field(std::string key, std::filesystem::path ExperimentConfig::*member) {
  return {key, [=](ExperimentConfig& c, const std::string& v) { c.*member = v; },
          [=](const ExperimentConfig& c) { return (c.*member).string(); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"dataset.kind",
                 [](C& c, const std::string& v) {
                   if (v == "factorworld") c.kind = DatasetKind::factorworld;
                   else if (v == "cmnist") c.kind = DatasetKind::cmnist;
                   else bad_value("dataset.kind", v, "factorworld or cmnist");
                 },
                 [](const C& c) { return std::string(c.kind == DatasetKind::cmnist ? "cmnist" : "factorworld"); }});
    f.push_back({"dataset.factors",
                 [](C& c, const std::string& v) {
                   std::vector<FactorSpec> out;
                   for (const auto& item : split(v, ',')) {
                     const auto colon = item.find(':');
                     if (colon == std::string::npos) bad_value("dataset.factors", v, "name:cardinality,...");
                     out.push_back({trim(item.substr(0, colon)), to_u64("dataset.factors", trim(item.substr(colon + 1)))});
                   }
                   c.dataset.factors = std::move(out);
                 },
                 [](const C& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.dataset.factors.size(); ++i) {
                     out += (i ? "," : "") + c.dataset.factors[i].name + ":" +
                            std::to_string(c.dataset.factors[i].cardinality);
                   }
                   return out;
                 }});
    f.push_back(size_field("dataset.height", &C::dataset, &DatasetSpec::height));
    f.push_back(size_field("dataset.width", &C::dataset, &DatasetSpec::width));
    f.push_back(size_field("dataset.channels", &C::dataset, &DatasetSpec::channels));
    f.push_back(double_field("dataset.rho", &C::dataset, &DatasetSpec::rho));
    f.push_back({"dataset.correlated_pair",
                 [](C& c, const std::string& v) {
                   if (v == "none") {
                     c.dataset.correlated_pair.reset();
                     return;
                   }
                   const auto parts = split(v, ',');
                   if (parts.size() != 2) bad_value("dataset.correlated_pair", v, "two factor names or none");
                   c.dataset.correlated_pair = std::pair{parts[0], parts[1]};
                 },
                 [](const C& c) {
                   return c.dataset.correlated_pair
                              ? c.dataset.correlated_pair->first + "," + c.dataset.correlated_pair->second
                              : std::string("none");
                 }});
    f.push_back(size_field("dataset.count", &C::dataset, &DatasetSpec::count));
    f.push_back({"dataset.mode",
                 [](C& c, const std::string& v) {
                   if (v == "sampled") c.dataset.mode = SamplingMode::sampled;
                   else if (v == "exhaustive") c.dataset.mode = SamplingMode::exhaustive;
                   else bad_value("dataset.mode", v, "sampled or exhaustive");
                 },
                 [](const C& c) {
                   return std::string(c.dataset.mode == SamplingMode::exhaustive ? "exhaustive" : "sampled");
                 }});
    f.push_back({"dataset.seed", [](C& c, const std::string& v) { c.dataset.seed = to_u64("dataset.seed", v); },
                 [](const C& c) { return std::to_string(c.dataset.seed); }});
    f.push_back({"dataset.eval_count",
                 [](C& c, const std::string& v) { c.eval_count = to_u64("dataset.eval_count", v); },
                 [](const C& c) { return std::to_string(c.eval_count); }});
    f.push_back(path_field("dataset.idx_images", &C::idx_images));
    f.push_back(path_field("dataset.idx_labels", &C::idx_labels));
    f.push_back(path_field("dataset.eval_idx_images", &C::eval_idx_images));
    f.push_back(path_field("dataset.eval_idx_labels", &C::eval_idx_labels));

    f.push_back({"augment.translate_radius",
                 [](C& c, const std::string& v) {
                   c.train.augmentation.translate_radius = to_u64("augment.translate_radius", v);
                 },
                 [](const C& c) { return std::to_string(c.train.augmentation.translate_radius); }});
    f.push_back({"augment.noise_stddev",
                 [](C& c, const std::string& v) {
                   c.train.augmentation.noise_stddev = to_double("augment.noise_stddev", v);
                 },
                 [](const C& c) { return num(c.train.augmentation.noise_stddev); }});
    f.push_back({"augment.color_jitter",
                 [](C& c, const std::string& v) {
                   c.train.augmentation.color_jitter = to_double("augment.color_jitter", v);
                 },
                 [](const C& c) { return num(c.train.augmentation.color_jitter); }});
    f.push_back({"augment.crop_rescale",
                 [](C& c, const std::string& v) {
                   c.train.augmentation.crop_rescale = to_bool("augment.crop_rescale", v);
                 },
                 [](const C& c) { return std::string(c.train.augmentation.crop_rescale ? "true" : "false"); }});

    f.push_back({"train.mode", [](C& c, const std::string& v) { c.train.mode = parse_mode(v); },
                 [](const C& c) { return std::string(mode_name(c.train.mode)); }});
    f.push_back(double_field("train.lambda1", &C::train, &TrainConfig::lambda1));
    f.push_back(double_field("train.lambda2", &C::train, &TrainConfig::lambda2));
    f.push_back(size_field("train.epochs", &C::train, &TrainConfig::epochs));
    f.push_back(size_field("train.batch_size", &C::train, &TrainConfig::batch_size));
    f.push_back(double_field("train.encoder_lr", &C::train, &TrainConfig::encoder_lr));
    f.push_back(double_field("train.head_lr", &C::train, &TrainConfig::head_lr));
    f.push_back(size_field("train.refresh_interval", &C::train, &TrainConfig::refresh_interval));
    f.push_back(size_field("train.partition_capacity", &C::train, &TrainConfig::partition_capacity));
    f.push_back(double_field("train.temperature", &C::train, &TrainConfig::temperature));
    f.push_back({"train.seed", [](C& c, const std::string& v) { c.train.seed = to_u64("train.seed", v); },
                 [](const C& c) { return std::to_string(c.train.seed); }});

    f.push_back({"partition.steps", [](C& c, const std::string& v) { c.train.ascent.steps = to_u64("partition.steps", v); },
                 [](const C& c) { return std::to_string(c.train.ascent.steps); }});
    f.push_back({"partition.lr", [](C& c, const std::string& v) { c.train.ascent.lr = to_double("partition.lr", v); },
                 [](const C& c) { return num(c.train.ascent.lr); }});
    f.push_back({"partition.restarts",
                 [](C& c, const std::string& v) { c.train.ascent.restarts = to_u64("partition.restarts", v); },
                 [](const C& c) { return std::to_string(c.train.ascent.restarts); }});
    f.push_back(size_field("partition.batch_size", &C::train, &TrainConfig::ascent_batch));
    f.push_back(size_field("partition.attempts", &C::train, &TrainConfig::refresh_attempts));
    f.push_back({"partition.barrier_mu",
                 [](C& c, const std::string& v) { c.train.ascent.barrier.mu = to_double("partition.barrier_mu", v); },
                 [](const C& c) { return num(c.train.ascent.barrier.mu); }});
    f.push_back({"partition.barrier_epsilon",
                 [](C& c, const std::string& v) {
                   c.train.ascent.barrier.epsilon = to_double("partition.barrier_epsilon", v);
                 },
                 [](const C& c) { return num(c.train.ascent.barrier.epsilon); }});

    f.push_back({"model.arch", [](C& c, const std::string& v) { c.train.arch.name = v; },
                 [](const C& c) { return c.train.arch.name; }});
    f.push_back({"model.hidden",
                 [](C& c, const std::string& v) {
                   std::vector<std::size_t> out;
                   for (const auto& item : split(v, ',')) out.push_back(to_u64("model.hidden", item));
                   c.train.arch.hidden = std::move(out);
                 },
                 [](const C& c) { return join_sizes(c.train.arch.hidden); }});
    f.push_back({"model.feature_dim",
                 [](C& c, const std::string& v) { c.train.arch.feature_dim = to_u64("model.feature_dim", v); },
                 [](const C& c) { return std::to_string(c.train.arch.feature_dim); }});
    f.push_back({"model.head_hidden",
                 [](C& c, const std::string& v) { c.train.arch.head_hidden = to_u64("model.head_hidden", v); },
                 [](const C& c) { return std::to_string(c.train.arch.head_hidden); }});
    f.push_back({"model.embedding_dim",
                 [](C& c, const std::string& v) { c.train.arch.embedding_dim = to_u64("model.embedding_dim", v); },
                 [](const C& c) { return std::to_string(c.train.arch.embedding_dim); }});
    f.push_back({"model.activation",
                 [](C& c, const std::string& v) {
                   if (v == "relu") c.train.arch.hidden_activation = Activation::relu;
                   else if (v == "none") c.train.arch.hidden_activation = Activation::none;
                   else bad_value("model.activation", v, "relu or none");
                 },
                 [](const C& c) {
                   return std::string(c.train.arch.hidden_activation == Activation::relu ? "relu" : "none");
                 }});
    f.push_back({"model.bias", [](C& c, const std::string& v) { c.train.arch.use_bias = to_bool("model.bias", v); },
                 [](const C& c) { return std::string(c.train.arch.use_bias ? "true" : "false"); }});

    f.push_back(size_field("metrics.bins", &C::metrics, &MetricSettings::bins));
    f.push_back({"metrics.binning",
                 [](C& c, const std::string& v) {
                   if (v == "equal_width") c.metrics.binning = BinningMode::equal_width;
                   else if (v == "quantile") c.metrics.binning = BinningMode::quantile;
                   else bad_value("metrics.binning", v, "equal_width or quantile");
                 },
                 [](const C& c) {
                   return std::string(c.metrics.binning == BinningMode::quantile ? "quantile" : "equal_width");
                 }});
    f.push_back(size_field("metrics.knn_k", &C::metrics, &MetricSettings::knn_k));
    f.push_back(size_field("metrics.probe_iterations", &C::metrics, &MetricSettings::probe_iterations));
    f.push_back(double_field("metrics.probe_tolerance", &C::metrics, &MetricSettings::probe_tolerance));
    f.push_back(double_field("metrics.probe_c", &C::metrics, &MetricSettings::probe_c));
    f.push_back(size_field("metrics.cv_cs", &C::metrics, &MetricSettings::cv_cs));
    f.push_back(size_field("metrics.cv_folds", &C::metrics, &MetricSettings::cv_folds));
    f.push_back({"metrics.seed", [](C& c, const std::string& v) { c.metrics.seed = to_u64("metrics.seed", v); },
                 [](const C& c) { return std::to_string(c.metrics.seed); }});

    f.push_back(path_field("output.dir", &C::out_dir));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  const std::string near = nearest_key(key);
  throw ConfigError("unknown config key '" + key + "'" +
                    (near.empty() ? std::string() : " (did you mean '" + near + "'?)"));
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.dataset.count = 8192;
  c.dataset.rho = 0.9;
  c.dataset.correlated_pair = std::pair<std::string, std::string>{"shape", "color"};
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, trim(value));
}

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

void ExperimentConfig::set_seed(std::uint64_t seed) {
  dataset.seed = seed;
  train.seed = seed;
  metrics.seed = seed;
}

void ExperimentConfig::resolve() {
  if (kind == DatasetKind::cmnist) {
    dataset.height = 28;
    dataset.width = 28;
    dataset.channels = 3;
  }
  train.arch.input_height = dataset.height;
  train.arch.input_width = dataset.width;
  train.arch.input_channels = dataset.channels;
  validate();
}

void ExperimentConfig::validate() const {
  if (kind == DatasetKind::factorworld) dataset.validate();
  if (kind == DatasetKind::cmnist && (idx_images.empty() || idx_labels.empty())) {
    throw ConfigError("dataset.kind = cmnist needs dataset.idx_images and dataset.idx_labels");
  }
  if (eval_count < 8) throw ConfigError("dataset.eval_count must be at least 8");
  train.validate();
  metrics.validate();
}

std::string ExperimentConfig::resolved_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::string nearest_key(const std::string& key) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const std::string& k : config_keys()) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected 'section.key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      base.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

std::string lookup_value(const std::string& listing, const std::string& key) {
  std::istringstream in(listing);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && trim(line.substr(0, eq)) == key) return trim(line.substr(eq + 1));
  }
  throw FormatError("listing has no key '" + key + "'");
}

}  // namespace ipirm
