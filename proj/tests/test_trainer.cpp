#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "ipirm/error.hpp"
#include "ipirm/trainer.hpp"

using namespace ipirm;

namespace {

const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    DatasetSpec spec;
    spec.factors = {{"shape", 3}, {"color", 3}, {"pos_x", 4}};
    spec.count = 96;
    spec.seed = 4;
    return generate_factorworld(spec);
  }();
  return ds;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.arch.hidden = {24};
  c.arch.feature_dim = 6;
  c.arch.head_hidden = 12;
  c.arch.embedding_dim = 8;
  c.epochs = 4;
  c.batch_size = 32;
  c.refresh_interval = 2;
  c.partition_capacity = 3;
  c.ascent.steps = 40;
  c.ascent.restarts = 2;
  c.ascent_batch = 48;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("minibatch schedule") {
  const auto s = minibatch_schedule(10, 4, 1, 0);
  REQUIRE(s.size() == 3);
  CHECK(s[0].size() == 4);
  CHECK(s[1].size() == 4);
  CHECK(s[2].size() == 2);
  std::vector<std::size_t> all;
  for (const auto& b : s) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK(minibatch_schedule(10, 4, 1, 0) == s);
  CHECK_FALSE(minibatch_schedule(10, 4, 1, 1) == s);
  CHECK_THROWS_AS(minibatch_schedule(10, 11, 1, 0), ConfigError);
}

TEST_CASE("refresh schedule") {
  TrainConfig c = tiny_config();
  CHECK_FALSE(refresh_due(c, 0));
  CHECK_FALSE(refresh_due(c, 1));
  CHECK(refresh_due(c, 2));
  CHECK_FALSE(refresh_due(c, 4));  // past the last epoch
  c.mode = TrainMode::simclr;
  CHECK_FALSE(refresh_due(c, 2));
}

TEST_CASE("config validation") {
  TrainConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.lambda1 = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.refresh_interval = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.arch.input_height = 28;
  CHECK_THROWS_AS(init_state(c, tiny_dataset()), ConfigError);
  c = tiny_config();
  c.batch_size = 1000;
  CHECK_THROWS_AS(init_state(c, tiny_dataset()), ConfigError);
  CHECK(parse_mode("simclr") == TrainMode::simclr);
  CHECK_THROWS_AS(parse_mode("byol"), ConfigError);
  CHECK(TrainConfig::desk().refresh_interval == 20);
  CHECK(TrainConfig{}.refresh_interval == 30);
}

TEST_CASE("ipirm with lambda1 = 0 and no refresh is bit-identical to simclr") {
  TrainConfig a = tiny_config();
  a.lambda1 = 0.0;
  a.epochs = 3;
  a.refresh_interval = 100;
  TrainConfig b = a;
  b.mode = TrainMode::simclr;
  const TrainState sa = train(a, tiny_dataset());
  const TrainState sb = train(b, tiny_dataset());
  CHECK(sa.model.parameters().size() == sb.model.parameters().size());
  CHECK(sa == sb);
  CHECK(sa.history.to_csv() == sb.history.to_csv());
}

TEST_CASE("training is deterministic and refreshes beat a random split") {
  const TrainConfig c = tiny_config();
  const TrainState a = train(c, tiny_dataset());
  const TrainState b = train(c, tiny_dataset());
  CHECK(a == b);
  CHECK(a.history.to_csv() == b.history.to_csv());
  CHECK(serialize_checkpoint(a, c) == serialize_checkpoint(b, c));

  REQUIRE(a.history.records.size() == 4);
  std::size_t refreshes = 0;
  for (const EpochRecord& r : a.history.records) {
    CHECK(std::isfinite(r.loss));
    if (!r.refresh) continue;
    ++refreshes;
    CHECK(r.objective > r.baseline);
  }
  CHECK(refreshes == 1);
  CHECK(a.partitions.size() == 2);
  CHECK(a.partitions.learned().front().iteration == 2);
  // Losses include the IRM penalty and stay positive.
  for (const EpochRecord& r : a.history.records) CHECK(r.loss > 0.0);

  const std::string csv = a.history.to_csv();
  CHECK(csv.rfind("epoch,loss,penalty_mean,refresh_flag,objective\n", 0) == 0);
  CHECK(csv.find("\n0,") != std::string::npos);
}

TEST_CASE("checkpoint round trip and corruption") {
  const TrainConfig c = tiny_config();
  const TrainState s = train(c, tiny_dataset());
  const auto bytes = serialize_checkpoint(s, c);
  const Checkpoint ck = parse_checkpoint(bytes);
  CHECK(ck.state == s);
  CHECK(ck.arch == c.arch);
  CHECK(ck.config_text == c.describe());

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(parse_checkpoint(bad_version), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(parse_checkpoint(trailing), FormatError);

  std::set<std::size_t> cuts{0, 5, 11, 12, 20, 100, bytes.size() / 2, bytes.size() - 1};
  for (std::size_t cut : cuts) {
    CAPTURE(cut);
    const std::span<const std::uint8_t> prefix(bytes.data(), cut);
    CHECK_THROWS_AS(parse_checkpoint(prefix), TruncationError);
  }

  const auto path = std::filesystem::temp_directory_path() / "ipirm_trainer_ck.bin";
  save_checkpoint(path, s, c);
  CHECK(load_checkpoint(path).state == s);
  std::filesystem::remove(path);
}

TEST_CASE("resume from a checkpoint continues the same run") {
  const TrainConfig c = tiny_config();
  const TrainState full = train(c, tiny_dataset());

  TrainState first = init_state(c, tiny_dataset());
  run_epochs(first, c, tiny_dataset(), 3);
  Checkpoint ck = parse_checkpoint(serialize_checkpoint(first, c));
  run_epochs(ck.state, c, tiny_dataset(), c.epochs);
  CHECK(ck.state == full);
}

TEST_CASE("the hook sees every epoch") {
  TrainConfig c = tiny_config();
  c.mode = TrainMode::simclr;
  c.epochs = 2;
  std::vector<std::size_t> seen;
  train(c, tiny_dataset(), [&](const TrainState& s) { seen.push_back(s.next_epoch); });
  CHECK(seen == std::vector<std::size_t>{1, 2});
}

TEST_CASE("refreshes beat a random balanced split across seeds") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    TrainConfig c = tiny_config();
    c.seed = seed;
    c.epochs = 6;
    c.ascent.steps = 150;
    const TrainState s = train(c, tiny_dataset());
    for (const EpochRecord& r : s.history.records) {
      if (!r.refresh) continue;
      CAPTURE(seed);
      CAPTURE(r.epoch);
      CHECK(r.objective > r.baseline);
    }
  }
}
