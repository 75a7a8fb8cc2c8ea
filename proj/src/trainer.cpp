#include "ipirm/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <utility>

#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool same_model(const Model& a, const Model& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(*pa[i] == *pb[i])) return false;
  }
  return a.encoder.arch == b.encoder.arch && a.head.running_mean == b.head.running_mean &&
         a.head.running_var == b.head.running_var;
}

std::vector<std::vector<std::size_t>> cover(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch) {
    const std::size_t end = std::min(n, begin + batch);
    out.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return out;
}

// Mean binary Step-2 objective over batches in which both subsets have >= 2 rows.
double mean_binary_objective(const Tensor& z, const Tensor& zs, double tau,
                             std::span<const std::uint8_t> assignment, double lambda2,
                             const std::vector<std::vector<std::size_t>>& batches) {
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& rows : batches) {
    std::vector<std::uint8_t> local(rows.size());
    std::size_t ones = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      local[i] = assignment[rows[i]];
      ones += local[i] == 1;
    }
    if (ones < 2 || rows.size() - ones < 2) continue;
    Tape tape;
    const ContrastiveBatch batch{tape.constant(z.select_rows(rows)),
                                 tape.constant(zs.select_rows(rows)), tau, {}};
    total += binary_objective(similarities(batch), local, lambda2);
    ++used;
  }
  return used ? total / static_cast<double>(used) : std::nan("");
}

// ---- binary io ----

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u64(t.rows());
    u64(t.cols());
    for (double v : t.data()) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const std::uint64_t r = u64();
    const std::uint64_t c = u64();
    if (c != 0 && r > (bytes_.size() - pos_) / 8 / c) need(r * c * 8);
    Tensor t(r, c);
    for (double& v : t.data()) v = f64();
    return t;
  }
  void tensor_into(Tensor& target, const char* what) {
    Tensor t = tensor();
    if (!t.same_shape(target)) {
      throw FormatError(std::string("checkpoint: ") + what + " has shape " + t.shape_string() +
                        ", expected " + target.shape_string());
    }
    target = std::move(t);
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) {
      throw TruncationError("checkpoint truncated at byte " + std::to_string(pos_) + ": need " +
                            std::to_string(n) + " more bytes, " +
                            std::to_string(bytes_.size() - pos_) + " left");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kEvalCovers = 4;

constexpr char kMagic[8] = {'I', 'P', 'I', 'R', 'M', 'C', 'K', 'P'};

void write_adam(Writer& w, const AdamState& s) {
  w.u64(s.step);
  w.u64(s.m.size());
  for (const Tensor& t : s.m) w.tensor(t);
  for (const Tensor& t : s.v) w.tensor(t);
}

AdamState read_adam(Reader& r) {
  AdamState s;
  s.step = r.u64();
  const std::uint64_t n = r.u64();
  if (n > 4096) throw FormatError("checkpoint: implausible optimizer tensor count");
  for (std::uint64_t i = 0; i < n; ++i) s.m.push_back(r.tensor());
  for (std::uint64_t i = 0; i < n; ++i) s.v.push_back(r.tensor());
  return s;
}

}  // namespace

const char* mode_name(TrainMode mode) { return mode == TrainMode::ipirm ? "ipirm" : "simclr"; }

TrainMode parse_mode(const std::string& text) {
  if (text == "ipirm") return TrainMode::ipirm;
  if (text == "simclr") return TrainMode::simclr;
  throw ConfigError("train.mode must be ipirm or simclr, got '" + text + "'");
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 120;
  c.refresh_interval = 20;
  return c;
}

void TrainConfig::validate() const {
  if (!(lambda1 >= 0.0)) throw ConfigError("train.lambda1 must be non-negative");
  if (!(lambda2 >= 0.0)) throw ConfigError("train.lambda2 must be non-negative");
  if (epochs == 0) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (!(encoder_lr > 0.0) || !(head_lr > 0.0)) throw ConfigError("train learning rates must be positive");
  if (refresh_interval == 0) throw ConfigError("train.refresh_interval must be at least 1");
  if (partition_capacity == 0) throw ConfigError("train.partition_capacity must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be positive");
  if (ascent_batch < 4) throw ConfigError("partition.batch_size must be at least 4");
  if (refresh_attempts == 0) throw ConfigError("partition.attempts must be at least 1");
  arch.validate();
  augmentation.validate();
  ascent.validate();
}

std::string TrainConfig::describe() const {
  std::ostringstream o;
  o << "train.mode = " << mode_name(mode) << '\n'
    << "train.lambda1 = " << fmt(lambda1) << '\n'
    << "train.lambda2 = " << fmt(lambda2) << '\n'
    << "train.epochs = " << epochs << '\n'
    << "train.batch_size = " << batch_size << '\n'
    << "train.encoder_lr = " << fmt(encoder_lr) << '\n'
    << "train.head_lr = " << fmt(head_lr) << '\n'
    << "train.refresh_interval = " << refresh_interval << '\n'
    << "train.partition_capacity = " << partition_capacity << '\n'
    << "train.temperature = " << fmt(temperature) << '\n'
    << "train.seed = " << seed << '\n'
    << "partition.steps = " << ascent.steps << '\n'
    << "partition.lr = " << fmt(ascent.lr) << '\n'
    << "partition.restarts = " << ascent.restarts << '\n'
    << "partition.batch_size = " << ascent_batch << '\n'
    << "partition.attempts = " << refresh_attempts << '\n'
    << "partition.barrier_mu = " << fmt(ascent.barrier.mu) << '\n'
    << "partition.barrier_epsilon = " << fmt(ascent.barrier.epsilon) << '\n'
    << "model.arch = " << arch.descriptor() << '\n'
    << "augment.translate_radius = " << augmentation.translate_radius << '\n'
    << "augment.noise_stddev = " << fmt(augmentation.noise_stddev) << '\n'
    << "augment.color_jitter = " << fmt(augmentation.color_jitter) << '\n'
    << "augment.crop_rescale = " << (augmentation.crop_rescale ? 1 : 0) << '\n';
  return o.str();
}

bool operator==(const EpochRecord& a, const EpochRecord& b) {
  auto same = [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); };
  return a.epoch == b.epoch && same(a.loss, b.loss) && same(a.penalty_mean, b.penalty_mean) &&
         a.refresh == b.refresh && same(a.objective, b.objective) && same(a.baseline, b.baseline);
}

std::string RunHistory::to_csv() const {
  std::ostringstream o;
  o << "epoch,loss,penalty_mean,refresh_flag,objective\n";
  for (const EpochRecord& r : records) {
    o << r.epoch << ',' << fmt(r.loss) << ',' << fmt(r.penalty_mean) << ',' << (r.refresh ? 1 : 0)
      << ',';
    if (r.refresh) o << fmt(r.objective);
    o << '\n';
  }
  return o.str();
}

void RunHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << to_csv();
  if (!out) throw DataError("failed writing " + path.string());
}

bool operator==(const TrainState& a, const TrainState& b) {
  return same_model(a.model, b.model) && a.encoder_opt == b.encoder_opt &&
         a.head_opt == b.head_opt && a.partitions == b.partitions && a.history == b.history &&
         a.next_epoch == b.next_epoch;
}

std::vector<std::vector<std::size_t>> minibatch_schedule(std::size_t n, std::size_t batch,
                                                         std::uint64_t seed, std::size_t epoch) {
  if (batch == 0 || batch > n) {
    throw ConfigError("batch size " + std::to_string(batch) + " must lie in [1, " +
                      std::to_string(n) + "]");
  }
  Rng rng = make_rng(seed, {0x5c4ed, epoch});
  return cover(n, batch, rng);
}

TrainState init_state(const TrainConfig& config, const Dataset& dataset) {
  config.validate();
  const ImageBatch& images = dataset.images;
  if (images.count() == 0) throw DataError("training set is empty");
  if (images.height != config.arch.input_height || images.width != config.arch.input_width ||
      images.channels != config.arch.input_channels) {
    throw ConfigError("architecture expects " + std::to_string(config.arch.input_height) + "x" +
                      std::to_string(config.arch.input_width) + "x" +
                      std::to_string(config.arch.input_channels) + " images, dataset has " +
                      std::to_string(images.height) + "x" + std::to_string(images.width) + "x" +
                      std::to_string(images.channels));
  }
  if (config.batch_size > images.count()) {
    throw ConfigError("train.batch_size " + std::to_string(config.batch_size) +
                      " exceeds the dataset size " + std::to_string(images.count()));
  }
  TrainState s;
  s.model = init_model(config.arch, derive_seed(config.seed, {0x30de1}));
  s.encoder_opt = AdamState::zeros_like(std::as_const(s.model.encoder).parameters());
  s.head_opt = AdamState::zeros_like(std::as_const(s.model.head).parameters());
  s.partitions = PartitionSet(images.count(), config.partition_capacity);
  return s;
}

bool refresh_due(const TrainConfig& config, std::size_t epoch) {
  return config.mode == TrainMode::ipirm && epoch > 0 && epoch % config.refresh_interval == 0 &&
         epoch < config.epochs;
}

std::pair<Tensor, Tensor> step2_views(const Model& model, const TrainConfig& config,
                                      const ImageBatch& images, std::size_t epoch) {
  Tensor views[2];
  const std::size_t n = images.count();
  const std::size_t chunk = 1024;
  for (std::size_t v = 0; v < 2; ++v) {
    const ImageBatch aug =
        augment(images, config.augmentation, derive_seed(config.seed, {0x5e2, epoch, v}));
    Tensor out(n, config.arch.embedding_dim);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      const std::size_t end = std::min(n, begin + chunk);
      std::vector<std::size_t> rows(end - begin);
      std::iota(rows.begin(), rows.end(), begin);
      const Tensor feats = encode(model.encoder, aug.pixels.select_rows(rows));
      const Projection p = project_and_normalize(model.head, feats);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = p.embeddings.row(i);
        std::copy(src.begin(), src.end(), out.row(begin + i).begin());
      }
    }
    views[v] = std::move(out);
  }
  return {std::move(views[0]), std::move(views[1])};
}

BatchStep train_batch(TrainState& state, const TrainConfig& config, const ImageBatch& images,
                      std::span<const std::size_t> rows, std::size_t epoch, std::size_t batch) {
  const std::size_t b = rows.size();
  const ImageBatch subset = images.select(rows);
  const ImageBatch v0 =
      augment(subset, config.augmentation, derive_seed(config.seed, {0xa09, epoch, batch, 0}));
  const ImageBatch v1 =
      augment(subset, config.augmentation, derive_seed(config.seed, {0xa09, epoch, batch, 1}));

  Tape tape;
  const Binding bound = bind(tape, state.model, true);
  const Var x = ops::concat_rows(tape.constant(v0.pixels), tape.constant(v1.pixels));
  const Var features = encode(state.model.encoder, bound.encoder, x);
  const HeadOutput head =
      project_and_normalize(state.model.head, bound.head, features, NormMode::batch);

  ContrastiveBatch cb{ops::slice_rows(head.embeddings, 0, b), ops::slice_rows(head.embeddings, b, b),
                      config.temperature, std::vector<std::size_t>(rows.begin(), rows.end())};
  Step1Terms terms;
  if (config.mode == TrainMode::simclr) {
    const std::vector<PartitionMatrix> trivial{trivial_partition(images.count())};
    terms = step1_loss(cb, trivial, 0.0);
  } else {
    terms = step1_loss(cb, state.partitions, config.lambda1);
  }
  const GradientMap grads = backward(tape, terms.loss);

  auto update = [&](const std::vector<Var>& vars, std::vector<Tensor*> params, AdamState& opt,
                    double lr) {
    std::vector<Tensor> g;
    g.reserve(vars.size());
    for (const Var& v : vars) g.push_back(grads.at(v));
    adam_step(params, g, opt, AdamConfig{lr});
  };
  update(bound.encoder, state.model.encoder.parameters(), state.encoder_opt, config.encoder_lr);
  update(bound.head, state.model.head.parameters(), state.head_opt, config.head_lr);
  state.model.head.update_running_stats(head.pre_norm.value());

  return {terms.loss.value().item(), std::move(terms.penalties)};
}

void run_epochs(TrainState& state, const TrainConfig& config, const Dataset& dataset,
                std::size_t until, const EpochHook& hook) {
  config.validate();
  const ImageBatch& images = dataset.images;
  const std::size_t n = images.count();
  if (state.partitions.sample_count() != n) {
    throw ConfigError("training state covers " + std::to_string(state.partitions.sample_count()) +
                      " samples, dataset has " + std::to_string(n));
  }
  AscentConfig ascent = config.ascent;
  ascent.lambda2 = config.lambda2;

  for (std::size_t epoch = state.next_epoch; epoch < until; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord record;
    record.epoch = epoch;

    if (refresh_due(config, epoch)) {
      const auto [z, zs] = step2_views(state.model, config, images, epoch);
      // Several covers, so the comparison measures the split rather than one batching.
      std::vector<std::vector<std::size_t>> eval_batches;
      for (std::size_t k = 0; k < kEvalCovers; ++k) {
        Rng eval_rng = make_rng(config.seed, {0xc0e7, epoch, k});
        for (auto& rows : cover(n, std::min(config.ascent_batch, n), eval_rng)) {
          eval_batches.push_back(std::move(rows));
        }
      }
      for (std::size_t attempt = 0; attempt < config.refresh_attempts; ++attempt) {
        const AscentResult found =
            ascend_minibatched(z, zs, config.temperature, ascent, std::min(config.ascent_batch, n),
                               derive_seed(config.seed, {0x5e2a, epoch, attempt}));
        try {
          PartitionMatrix p = threshold(found.soft, static_cast<std::int64_t>(epoch));
          p.objective = mean_binary_objective(z, zs, config.temperature, p.assignment,
                                              config.lambda2, eval_batches);
          std::vector<std::uint8_t> balanced(n, 2);
          std::vector<std::size_t> order(n);
          std::iota(order.begin(), order.end(), 0);
          Rng rng = make_rng(config.seed, {0xba1a, epoch});
          shuffle(order, rng);
          for (std::size_t i = 0; i < n / 2; ++i) balanced[order[i]] = 1;
          record.refresh = true;
          record.objective = p.objective;
          record.baseline = mean_binary_objective(z, zs, config.temperature, balanced,
                                                  config.lambda2, eval_batches);
          state.partitions.push(std::move(p));
          break;
        } catch (const DegeneratePartitionError& e) {
          std::cerr << "epoch " << epoch << ": partition attempt " << attempt
                    << " degenerate (" << e.what() << ")\n";
        }
      }
      if (!record.refresh) {
        std::cerr << "epoch " << epoch << ": refresh skipped after " << config.refresh_attempts
                  << " degenerate attempts\n";
      }
    }

    double loss_sum = 0.0;
    double penalty_sum = 0.0;
    std::size_t batches = 0;
    std::size_t penalties = 0;
    const auto schedule = minibatch_schedule(n, config.batch_size, config.seed, epoch);
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      if (schedule[k].size() < 2) continue;
      const BatchStep step = train_batch(state, config, images, schedule[k], epoch, k);
      if (!std::isfinite(step.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(k));
      }
      loss_sum += step.loss;
      ++batches;
      for (double p : step.penalties) penalty_sum += p;
      penalties += step.penalties.size();
    }
    record.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    record.penalty_mean = penalties ? penalty_sum / static_cast<double>(penalties) : 0.0;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.records.push_back(record);
    state.next_epoch = epoch + 1;
    if (hook) hook(state);
  }
}

TrainState train(const TrainConfig& config, const Dataset& dataset, const EpochHook& hook) {
  TrainState state = init_state(config, dataset);
  run_epochs(state, config, dataset, config.epochs, hook);
  return state;
}

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state, const TrainConfig& config) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.text(state.model.encoder.arch.descriptor());
  w.text(config.describe());
  w.u64(state.next_epoch);

  const auto params = state.model.parameters();
  w.u64(params.size());
  for (const Tensor* t : params) w.tensor(*t);
  w.tensor(state.model.head.running_mean);
  w.tensor(state.model.head.running_var);
  write_adam(w, state.encoder_opt);
  write_adam(w, state.head_opt);

  const PartitionSet& ps = state.partitions;
  w.u64(ps.sample_count());
  w.u64(ps.capacity());
  w.u64(ps.learned().size());
  for (const PartitionMatrix& p : ps.learned()) {
    w.u64(static_cast<std::uint64_t>(p.iteration));
    w.f64(p.objective);
    for (std::uint8_t a : p.assignment) w.u8(a);
  }

  w.u64(state.history.records.size());
  for (const EpochRecord& r : state.history.records) {
    w.u64(r.epoch);
    w.f64(r.loss);
    w.f64(r.penalty_mean);
    w.u8(r.refresh ? 1 : 0);
    w.f64(r.objective);
    w.f64(r.baseline);
  }
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& config) {
  const auto bytes = serialize_checkpoint(state, config);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 4) {
    throw TruncationError("checkpoint truncated: " + std::to_string(bytes.size()) +
                          " bytes, header needs 12");
  }
  for (std::size_t i = 0; i < sizeof kMagic; ++i) {
    if (bytes[i] != static_cast<std::uint8_t>(kMagic[i])) {
      throw FormatError("checkpoint: bad magic at offset " + std::to_string(i));
    }
  }
  Reader r(bytes.subspan(sizeof kMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  try {
    ck.arch = Architecture::from_descriptor(r.text());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad architecture descriptor: ") + e.what());
  }
  ck.config_text = r.text();
  TrainState& s = ck.state;
  s.next_epoch = r.u64();
  s.model = init_model(ck.arch, 0);

  const auto params = s.model.parameters();
  if (r.u64() != params.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (Tensor* t : params) r.tensor_into(*t, "parameter");
  r.tensor_into(s.model.head.running_mean, "running mean");
  r.tensor_into(s.model.head.running_var, "running variance");
  s.encoder_opt = read_adam(r);
  s.head_opt = read_adam(r);

  const std::uint64_t samples = r.u64();
  const std::uint64_t capacity = r.u64();
  const std::uint64_t learned = r.u64();
  if (capacity == 0 || learned >= capacity) throw FormatError("checkpoint: bad partition set header");
  s.partitions = PartitionSet(samples, capacity);
  for (std::uint64_t k = 0; k < learned; ++k) {
    PartitionMatrix p;
    p.iteration = static_cast<std::int64_t>(r.u64());
    p.objective = r.f64();
    p.assignment.resize(samples);
    for (std::uint8_t& a : p.assignment) a = r.u8();
    try {
      s.partitions.push(std::move(p));
    } catch (const NumericError& e) {
      throw FormatError(std::string("checkpoint: invalid stored partition: ") + e.what());
    }
  }

  const std::uint64_t records = r.u64();
  for (std::uint64_t k = 0; k < records; ++k) {
    EpochRecord rec;
    rec.epoch = r.u64();
    rec.loss = r.f64();
    rec.penalty_mean = r.f64();
    rec.refresh = r.u8() != 0;
    rec.objective = r.f64();
    rec.baseline = r.f64();
    s.history.records.push_back(rec);
  }
  if (!r.done()) {
    throw FormatError("checkpoint: trailing bytes after offset " +
                      std::to_string(sizeof kMagic + r.offset()));
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace ipirm
