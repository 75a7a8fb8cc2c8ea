#include "ipirm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ipirm/config.hpp"
#include "ipirm/error.hpp"
#include "ipirm/experiment.hpp"
#include "ipirm/inspect.hpp"
#include "ipirm/random.hpp"

namespace ipirm {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string verb;
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint;
  std::string mode;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool resume = false;
  bool dry_run = false;
  std::size_t seeds = 1;
};

struct Run {
  ExperimentConfig cfg;
  fs::path out;
  fs::path data;
};

Run resolve_run(const Options& o) {
  Run r;
  r.cfg = o.config_path.empty() ? ExperimentConfig::defaults() : load_config(o.config_path);
  for (const std::string& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string t) {
      const auto b = t.find_first_not_of(" \t");
      const auto e = t.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : t.substr(b, e - b + 1);
    };
    r.cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (o.seed_given) r.cfg.set_seed(o.seed);
  if (!o.mode.empty()) r.cfg.train.mode = parse_mode(o.mode);
  if (const char* env = std::getenv("IPIRM_OUT_DIR"); env && *env) r.cfg.out_dir = env;
  if (!o.out_dir.empty()) r.cfg.out_dir = o.out_dir;
  r.cfg.resolve();
  r.out = r.cfg.out_dir;
  r.data = o.data_dir.empty() ? r.out / "data" : fs::path(o.data_dir);
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

// ---- datasets ----

Dataset load_split(const fs::path& dir) {
  if (!fs::exists(dir / "dataset.meta")) {
    throw DataError("no dataset at " + dir.string() + " (run 'generate' first or pass --data)");
  }
  return load_dataset(dir);
}

void check_dims(const Dataset& d, const Architecture& arch, const std::string& what) {
  if (d.images.height != arch.input_height || d.images.width != arch.input_width ||
      d.images.channels != arch.input_channels) {
    std::ostringstream m;
    m << what << " images are " << d.images.height << "x" << d.images.width << "x"
      << d.images.channels << " but the encoder '" << arch.name << "' expects "
      << arch.input_height << "x" << arch.input_width << "x" << arch.input_channels;
    throw DataError(m.str());
  }
}

fs::path mode_dir(const Run& r, TrainMode mode) { return r.out / mode_name(mode); }

fs::path checkpoint_path(const Options& o, const Run& r) {
  return o.checkpoint.empty() ? mode_dir(r, r.cfg.train.mode) / "checkpoint.bin"
                              : fs::path(o.checkpoint);
}

std::string refresh_plan(const TrainConfig& t) {
  std::string s;
  for (std::size_t e = 0; e < t.epochs; ++e) {
    if (refresh_due(t, e)) s += (s.empty() ? "" : ",") + std::to_string(e);
  }
  return s.empty() ? "none" : s;
}

void print_plan(std::ostream& out, const Options& o, const Run& r) {
  out << "plan: " << o.verb << "\n";
  out << "  output: " << r.out.string() << "\n";
  out << "  data: " << r.data.string()
      << (fs::exists(r.data / "train" / "dataset.meta") ? " (present)" : " (absent)") << "\n";
  out << "  mode: " << mode_name(r.cfg.train.mode) << "\n";
  out << "  refresh epochs: " << refresh_plan(r.cfg.train) << "\n";
  if (o.verb == "compare") out << "  seeds: " << o.seeds << "\n";
  out << "resolved config:\n" << r.cfg.resolved_text();
}

void print_epoch(std::ostream& out, const EpochRecord& rec) {
  out << "epoch " << rec.epoch << " loss " << std::setprecision(6) << rec.loss << " penalty "
      << rec.penalty_mean;
  if (rec.refresh) out << " refresh objective " << rec.objective << " baseline " << rec.baseline;
  out << "\n" << std::flush;
}

// ---- verbs ----

int cmd_generate(const Run& r, std::ostream& out) {
  const Dataset train = build_train_dataset(r.cfg);
  const Dataset eval = build_eval_dataset(r.cfg);
  save_dataset(train, r.data / "train");
  save_dataset(eval, r.data / "eval");
  write_text(r.data / "generate.config", r.cfg.resolved_text());
  out << "wrote " << train.images.count() << " train and " << eval.images.count()
      << " eval samples to " << r.data.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const Run& r, std::ostream& out) {
  const Dataset train = load_split(r.data / "train");
  check_dims(train, r.cfg.train.arch, "training");
  const TrainConfig& tc = r.cfg.train;
  const fs::path dir = mode_dir(r, tc.mode);
  const fs::path ckpt = dir / "checkpoint.bin";

  TrainState state;
  if (o.resume) {
    if (!fs::exists(ckpt)) throw DataError("--resume: no checkpoint at " + ckpt.string());
    Checkpoint ck = load_checkpoint(ckpt);
    if (ck.config_text != tc.describe()) {
      throw ConfigError("--resume: checkpoint " + ckpt.string() +
                        " was written with a different training config");
    }
    state = std::move(ck.state);
    out << "resuming at epoch " << state.next_epoch << "\n";
  } else {
    state = init_state(tc, train);
  }
  write_text(dir / "train.config", r.cfg.resolved_text());
  run_epochs(state, tc, train, tc.epochs, [&](const TrainState& s) {
    print_epoch(out, s.history.records.back());
    save_checkpoint(ckpt, s, tc);
    s.history.write_csv(dir / "history.csv");
  });
  save_checkpoint(ckpt, state, tc);
  state.history.write_csv(dir / "history.csv");
  out << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, const Run& r, std::ostream& out) {
  const fs::path ckpt = checkpoint_path(o, r);
  const Checkpoint ck = load_checkpoint(ckpt);
  const Dataset eval = load_split(r.data / "eval");
  check_dims(eval, ck.arch, "evaluation");
  const std::string method = lookup_value(ck.config_text, "train.mode");
  const MetricsReport report = evaluate_encoder(r.cfg, ck.state.model, eval);
  const std::pair<std::string, MetricsReport> row{method, report};
  const fs::path dir = r.out / method;
  write_report_csv(dir / "metrics.csv", {&row, 1});
  std::string summary = summary_table({&row, 1});
  for (const auto& w : report.warnings) summary += "warning: " + w + "\n";
  summary += "settings:\n" + report.settings;
  write_text(dir / "summary.txt", summary);
  write_text(dir / "eval.config", r.cfg.resolved_text());
  out << summary_table({&row, 1});
  return kExitOk;
}

int cmd_inspect(const Options& o, const Run& r, std::ostream& out) {
  const fs::path ckpt = checkpoint_path(o, r);
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto& learned = ck.state.partitions.learned();
  if (learned.empty()) {
    throw DataError("checkpoint " + ckpt.string() +
                    " holds no learned partitions (train with train.mode = ipirm past the first "
                    "refresh)");
  }
  const Dataset train = load_split(r.data / "train");
  const std::vector<PartitionMatrix> parts(learned.begin(), learned.end());
  const fs::path dir = r.out / lookup_value(ck.config_text, "train.mode") / "inspect";
  fs::create_directories(dir);
  write_partition_csv(dir / "partitions.csv", parts);
  write_text(dir / "inspect.config", r.cfg.resolved_text());
  write_text(dir / "composition.csv", composition_csv(subset_composition(parts, train.factors)));
  out << "wrote " << parts.size() << " partitions to " << dir.string() << "\n";

  if (r.cfg.kind != DatasetKind::factorworld) {
    out << "heatmap skipped: CMNIST has no generator to perturb\n";
    return kExitOk;
  }
  check_dims(train, ck.arch, "training");
  DatasetSpec spec = r.cfg.dataset;
  spec.factors = train.factors.factors;
  const FactorFeatures features = [&](const std::vector<std::vector<std::uint32_t>>& rows) {
    Tensor images(rows.size(), ck.arch.input_size());
    for (std::size_t i = 0; i < rows.size(); ++i) render_factorworld(spec, rows[i], images.row(i));
    return encode(ck.state.model.encoder, images);
  };
  std::vector<std::size_t> base(train.factors.count());
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = i;
  Rng rng = make_rng(r.cfg.train.seed, {0x1a5e});
  std::shuffle(base.begin(), base.end(), rng);
  base.resize(std::min<std::size_t>(base.size(), 32));
  std::sort(base.begin(), base.end());
  const Tensor heat = variance_heatmap(train.factors, base, features);
  write_text(dir / "heatmap.pgm", to_pgm(heat));
  std::ostringstream csv;
  csv << "factor";
  for (std::size_t d = 0; d < heat.cols(); ++d) csv << ",dim" << d;
  csv << "\n" << std::setprecision(17);
  for (std::size_t f = 0; f < heat.rows(); ++f) {
    csv << train.factors.factors[f].name;
    for (std::size_t d = 0; d < heat.cols(); ++d) csv << "," << heat(f, d);
    csv << "\n";
  }
  write_text(dir / "heatmap.csv", csv.str());
  out << "wrote heatmap (" << heat.rows() << " factors x " << heat.cols() << " dims)\n";
  return kExitOk;
}

TrainState train_model(const ExperimentConfig& c, const Dataset& train, std::ostream& out) {
  check_dims(train, c.train.arch, "training");
  TrainState s = init_state(c.train, train);
  run_epochs(s, c.train, train, c.train.epochs,
             [&](const TrainState& st) { print_epoch(out, st.history.records.back()); });
  return s;
}

MetricsReport mean_report(std::span<const MetricsReport> rs) {
  MetricsReport m;
  for (const auto& r : rs) {
    m.dci += r.dci / rs.size();
    m.irs += r.irs / rs.size();
    m.mod += r.mod / rs.size();
    m.exp += r.exp / rs.size();
    m.lr += r.lr / rs.size();
    m.knn += r.knn / rs.size();
  }
  return m;
}

int cmd_compare(const Options& o, const Run& r, std::ostream& out) {
  if (o.seeds == 0) throw ConfigError("--seeds must be at least 1");
  const std::uint64_t base_seed = r.cfg.train.seed;
  const fs::path dir = r.out / "compare";
  std::vector<MetricsReport> simclr, ipirm;
  std::ostringstream paired;
  paired << "seed,simclr_average,ipirm_average,difference\n" << std::setprecision(17);
  std::size_t wins = 0;
  for (std::size_t k = 0; k < o.seeds; ++k) {
    ExperimentConfig c = r.cfg;
    c.set_seed(base_seed + k);
    const Dataset train = build_train_dataset(c);
    const Dataset eval = build_eval_dataset(c);
    const fs::path seed_dir = dir / ("seed" + std::to_string(c.train.seed));
    fs::create_directories(seed_dir);
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (TrainMode mode : {TrainMode::simclr, TrainMode::ipirm}) {
      c.train.mode = mode;
      out << "seed " << c.train.seed << " " << mode_name(mode) << "\n" << std::flush;
      const TrainState s = train_model(c, train, out);
      rows.emplace_back(mode_name(mode), evaluate_encoder(c, s.model, eval));
      s.history.write_csv(seed_dir / (std::string(mode_name(mode)) + "_history.csv"));
    }
    write_report_csv(seed_dir / "metrics.csv", rows);
    simclr.push_back(rows[0].second);
    ipirm.push_back(rows[1].second);
    const double a = rows[0].second.average(), b = rows[1].second.average();
    wins += b > a ? 1 : 0;
    paired << c.train.seed << ',' << a << ',' << b << ',' << b - a << '\n';
    out << summary_table(rows);
  }
  const std::vector<std::pair<std::string, MetricsReport>> means{
      {"simclr", mean_report(simclr)}, {"ipirm", mean_report(ipirm)}};
  std::ostringstream summary;
  summary << "mean over " << o.seeds << " seed(s) from " << base_seed << "\n"
          << summary_table(means) << "ipirm wins " << wins << "/" << o.seeds
          << " seed-paired comparisons; mean Average difference " << std::fixed
          << std::setprecision(4) << means[1].second.average() - means[0].second.average() << "\n";
  write_text(dir / "paired.csv", paired.str());
  write_text(dir / "summary.txt", summary.str());
  write_text(dir / "compare.config", r.cfg.resolved_text());
  out << summary.str();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"IP-IRM desk laboratory", "ipirm"};
  app.require_subcommand(1, 1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "config file (section.key = value lines)");
    sub->add_option("--out", o.out_dir, "output directory (overrides IPIRM_OUT_DIR and output.dir)");
    sub->add_option("--data", o.data_dir, "dataset directory (default <out>/data)");
    sub->add_option("--set", o.sets, "override one config key: key=value");
    sub->add_option("--seed", o.seed, "master seed for data, training and evaluation")
        ->each([&](const std::string&) { o.seed_given = true; });
    sub->add_option("--mode", o.mode, "ipirm or simclr (overrides train.mode)");
    sub->add_flag("--dry-run", o.dry_run, "print the resolved plan and exit without writing");
  };
  CLI::App* gen = app.add_subcommand("generate", "write train and eval datasets");
  CLI::App* trn = app.add_subcommand("train", "train an encoder");
  CLI::App* evl = app.add_subcommand("eval", "disentanglement metrics of a checkpoint");
  CLI::App* ins = app.add_subcommand("inspect", "partition dumps and variance heatmap");
  CLI::App* cmp = app.add_subcommand("compare", "simclr vs ipirm with matched seeds");
  for (CLI::App* sub : {gen, trn, evl, ins, cmp}) common(sub);
  trn->add_flag("--resume", o.resume, "continue from <out>/<mode>/checkpoint.bin");
  for (CLI::App* sub : {evl, ins}) {
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out>/<mode>/checkpoint.bin)");
  }
  cmp->add_option("--seeds", o.seeds, "number of consecutive seeds");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (CLI::App* sub : app.get_subcommands()) o.verb = sub->get_name();

  try {
    const Run r = resolve_run(o);
    if (o.dry_run) {
      print_plan(out, o, r);
      return kExitOk;
    }
    if (o.verb == "generate") return cmd_generate(r, out);
    if (o.verb == "train") return cmd_train(o, r, out);
    if (o.verb == "eval") return cmd_eval(o, r, out);
    if (o.verb == "inspect") return cmd_inspect(o, r, out);
    return cmd_compare(o, r, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace ipirm
