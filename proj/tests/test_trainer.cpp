#include "codo/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "codo/common.hpp"
#include "codo/shards.hpp"
#include "doctest.h"

using codo::Rng;
using codo::Tensor;
namespace aug = codo::augment;
namespace enc = codo::encoder;
namespace fs = std::filesystem;
namespace tr = codo::trainer;

namespace {

enc::EncoderConfig tiny_encoder() {
  enc::EncoderConfig cfg;
  cfg.image_size = 32;
  cfg.stem_channels = 4;
  cfg.stage_channels = {4, 4, 8, 8};
  cfg.fpn_channels = 8;
  cfg.head_hidden = 16;
  cfg.embed_dim = 8;
  cfg.roi_size = 3;
  return cfg;
}

tr::TrainSettings tiny_settings(int batch = 2, int n_keys = 1, int capacity = 16) {
  tr::TrainSettings s;
  s.encoder = tiny_encoder();
  s.train.batch_size = batch;
  s.train.base_lr = 0.05;
  s.train.epochs = 1;
  s.train.n_keys = n_keys;
  s.train.seed = 7;
  s.queue_capacity = capacity;
  s.key_momentum = 0.99;
  s.config_hash = 0xC0DEC0DEC0DEC0DEULL;
  return s;
}

codo::Image noise_image(int size, Rng& rng) {
  codo::Image img(size, size);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

aug::View random_view(int size, Rng& rng) {
  aug::View v;
  v.image = noise_image(size, rng);
  v.pool_id = "pool------------";
  const double x0 = rng.uniform(0.0, size / 2.0);
  const double y0 = rng.uniform(0.0, size / 2.0);
  v.box = {x0, y0, rng.uniform(x0 + 4.0, static_cast<double>(size)),
           rng.uniform(y0 + 4.0, static_cast<double>(size))};
  return v;
}

aug::ViewSet random_viewset(int size, int n_keys, Rng& rng) {
  aug::ViewSet vs;
  char buf[33];
  std::snprintf(buf, sizeof buf, "%032llx",
                static_cast<unsigned long long>(rng.next_u64()));
  vs.foreground_id = buf;
  vs.crop_checksum = rng.next_u64();
  vs.query = random_view(size, rng);
  for (int k = 0; k < n_keys; ++k) vs.keys.push_back(random_view(size, rng));
  return vs;
}

std::vector<aug::ViewSet> random_batch(int size, int batch, int n_keys, Rng& rng) {
  std::vector<aug::ViewSet> out;
  for (int i = 0; i < batch; ++i) out.push_back(random_viewset(size, n_keys, rng));
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("codo_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_shard(const fs::path& path, int image_size, int n_keys, int n_records,
                 std::uint64_t seed) {
  Rng rng(seed);
  codo::shards::ShardWriter w(path.string(), static_cast<std::uint32_t>(image_size),
                              static_cast<std::uint32_t>(n_keys), 0);
  for (int i = 0; i < n_records; ++i)
    w.write(random_viewset(image_size, n_keys, rng));
  w.close();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("training config validation") {
  tr::TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("epochs") { cfg.epochs = 0; }
  SUBCASE("batch") { cfg.batch_size = 0; }
  SUBCASE("key views") { cfg.n_keys = 2; }
  SUBCASE("lr") { cfg.base_lr = -0.1; }
  SUBCASE("sgd momentum") { cfg.momentum_sgd = 1.0; }
  SUBCASE("snapshot cadence") { cfg.snapshot_every = 0; }
  CHECK_THROWS_AS(cfg.validate(), codo::ValidationError);

  CHECK(tr::lr_schedule_from_string("cosine") == tr::LrSchedule::cosine);
  CHECK(tr::lr_schedule_from_string("step") == tr::LrSchedule::step);
  CHECK_THROWS_AS(tr::lr_schedule_from_string("linear"), codo::ValidationError);
  CHECK(tr::to_string(tr::LrSchedule::step) == "step");
}

TEST_CASE("learning rate schedules") {
  tr::TrainConfig cfg;
  cfg.base_lr = 0.4;
  CHECK(tr::lr_at(cfg, 1, 1000) == doctest::Approx(0.4));
  CHECK(tr::lr_at(cfg, 501, 1000) == doctest::Approx(0.2).epsilon(1e-2));
  CHECK(tr::lr_at(cfg, 1000, 1000) <= 1e-3 * cfg.base_lr);
  CHECK(tr::lr_at(cfg, 100, 100) <= 1e-3 * cfg.base_lr);

  cfg.lr_schedule = tr::LrSchedule::step;
  CHECK(tr::lr_at(cfg, 59, 100) == doctest::Approx(0.4));
  CHECK(tr::lr_at(cfg, 62, 100) == doctest::Approx(0.04));
  CHECK(tr::lr_at(cfg, 86, 100) == doctest::Approx(0.004));

  CHECK_THROWS_AS(tr::lr_at(cfg, 0, 100), std::invalid_argument);
  CHECK_THROWS_AS(tr::lr_at(cfg, 101, 100), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves the query untouched but blends the key") {
  const auto settings = tiny_settings();
  auto state = tr::init_state(settings);
  const enc::Encoder model(settings.encoder);
  const auto query_before = state.pair.query.values;
  const auto key_before = state.pair.key.values;

  Rng data_rng(11);
  const auto batch = random_batch(32, 2, 1, data_rng);
  const auto m = tr::train_step(model, state, batch, settings, 0.0);

  CHECK(m.step == 1);
  CHECK(std::isfinite(m.loss));
  CHECK(m.queue_fill == 2);
  for (std::size_t p = 0; p < query_before.size(); ++p)
    for (std::size_t i = 0; i < query_before[p].data.size(); ++i)
      REQUIRE(state.pair.query.values[p].data[i] == query_before[p].data[i]);

  const double mom = settings.key_momentum;
  for (std::size_t p = 0; p < key_before.size(); ++p)
    for (std::size_t i = 0; i < key_before[p].data.size(); ++i)
      REQUIRE(state.pair.key.values[p].data[i] ==
              mom * key_before[p].data[i] + (1.0 - mom) * query_before[p].data[i]);
}

TEST_CASE("key parameters are the exact momentum blend of the updated query") {
  const auto settings = tiny_settings();
  auto state = tr::init_state(settings);
  const enc::Encoder model(settings.encoder);
  const auto key_before = state.pair.key.values;
  const auto query_before = state.pair.query.values;

  Rng data_rng(12);
  tr::train_step(model, state, random_batch(32, 2, 1, data_rng), settings, 0.05);

  bool query_moved = false;
  const double mom = settings.key_momentum;
  for (std::size_t p = 0; p < key_before.size(); ++p)
    for (std::size_t i = 0; i < key_before[p].data.size(); ++i) {
      const double q_new = state.pair.query.values[p].data[i];
      if (q_new != query_before[p].data[i]) query_moved = true;
      REQUIRE(state.pair.key.values[p].data[i] ==
              mom * key_before[p].data[i] + (1.0 - mom) * q_new);
    }
  CHECK(query_moved);
}

TEST_CASE("queue fill follows min(capacity, steps * batch * n_keys)") {
  SUBCASE("single key view") {
    const auto settings = tiny_settings(2, 1, 8);
    auto state = tr::init_state(settings);
    const enc::Encoder model(settings.encoder);
    Rng data_rng(13);
    for (int t = 1; t <= 6; ++t) {
      const auto m =
          tr::train_step(model, state, random_batch(32, 2, 1, data_rng), settings, 0.0);
      const int expect = std::min(8, t * 2);
      CHECK(m.queue_fill == expect);
      for (const auto& q : state.queues) CHECK(q.size() == expect);
    }
  }
  SUBCASE("three key views") {
    const auto settings = tiny_settings(2, 3, 8);
    auto state = tr::init_state(settings);
    const enc::Encoder model(settings.encoder);
    Rng data_rng(14);
    for (int t = 1; t <= 2; ++t) {
      const auto m =
          tr::train_step(model, state, random_batch(32, 2, 3, data_rng), settings, 0.0);
      CHECK(m.queue_fill == std::min(8, t * 6));
    }
  }
}

TEST_CASE("frozen-encoder loss tracks ln(1 + queue fill) as queues load up") {
  const auto settings = tiny_settings(2, 1, 64);
  auto state = tr::init_state(settings);
  const enc::Encoder model(settings.encoder);
  Rng data_rng(15);

  std::vector<double> losses, bounds;
  double dev_sum = 0.0;
  for (int t = 1; t <= 50; ++t) {
    const int fill_before = std::min(64, (t - 1) * 2);
    const double bound = std::log(1.0 + fill_before);
    const auto m =
        tr::train_step(model, state, random_batch(32, 2, 1, data_rng), settings, 0.0);
    dev_sum += std::abs(m.loss - bound);
    losses.push_back(m.loss);
    bounds.push_back(bound);
  }
  // random unit embeddings give near-uniform logits, so the curve hugs the
  // uniform bound and rises with the fill
  CHECK(dev_sum / 50.0 < 1.0);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double ml = mean(losses), mb = mean(bounds);
  double cov = 0.0, vl = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    cov += (losses[i] - ml) * (bounds[i] - mb);
    vl += (losses[i] - ml) * (losses[i] - ml);
    vb += (bounds[i] - mb) * (bounds[i] - mb);
  }
  CHECK(cov / std::sqrt(vl * vb) > 0.8);
}

TEST_CASE("non-finite loss aborts with the offending foreground ids") {
  const auto settings = tiny_settings();
  auto state = tr::init_state(settings);
  const enc::Encoder model(settings.encoder);
  // poison the last projection bias: normalization layers flush NaN injected
  // further upstream to zero through relu, but this one reaches the loss
  for (std::size_t p = 0; p < state.pair.query.names.size(); ++p)
    if (state.pair.query.names[p] == "head.fc2.b")
      state.pair.query.values[p].data[0] = std::nan("");

  Rng data_rng(16);
  const auto batch = random_batch(32, 2, 1, data_rng);
  try {
    tr::train_step(model, state, batch, settings, 0.01);
    FAIL("expected TrainingDivergedError");
  } catch (const codo::TrainingDivergedError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(batch[0].foreground_id) != std::string::npos);
    CHECK(msg.find(batch[1].foreground_id) != std::string::npos);
  }
}

TEST_CASE("state pack/unpack round trip resumes bit-compatibly") {
  const auto settings = tiny_settings();
  auto state = tr::init_state(settings);
  const enc::Encoder model(settings.encoder);
  Rng data_rng(17);
  for (int t = 0; t < 2; ++t)
    tr::train_step(model, state, random_batch(32, 2, 1, data_rng), settings, 0.03);

  const auto data = tr::pack_state(state, settings);
  auto restored = tr::unpack_state(data, settings);
  CHECK(restored.step == state.step);
  CHECK(restored.rng.snapshot() == state.rng.snapshot());
  for (int p = 0; p < state.pair.query.size(); ++p) {
    REQUIRE(restored.pair.query.values[static_cast<std::size_t>(p)].data ==
            state.pair.query.values[static_cast<std::size_t>(p)].data);
    REQUIRE(restored.pair.key.values[static_cast<std::size_t>(p)].data ==
            state.pair.key.values[static_cast<std::size_t>(p)].data);
    REQUIRE(restored.velocity[static_cast<std::size_t>(p)].data ==
            state.velocity[static_cast<std::size_t>(p)].data);
  }
  for (int l = 0; l < enc::kLevels; ++l)
    REQUIRE(restored.queues[l].snapshot() == state.queues[l].snapshot());

  const auto next = random_batch(32, 2, 1, data_rng);
  const auto ma = tr::train_step(model, state, next, settings, 0.03);
  const auto mb = tr::train_step(model, restored, next, settings, 0.03);
  CHECK(ma.loss == mb.loss);
  CHECK(ma.pos_logit_mean == mb.pos_logit_mean);

  auto bad = data;
  bad.config_hash ^= 1;
  CHECK_THROWS_AS(tr::unpack_state(bad, settings), codo::CheckpointError);
}

TEST_CASE("pretraining runs are deterministic and resumable") {
  auto settings = tiny_settings();
  settings.train.epochs = 4;
  settings.train.snapshot_every = 4;

  const auto shard_dir = fresh_dir("shards");
  write_shard(shard_dir / "part0.codoview", 32, 1, 3, 21);
  write_shard(shard_dir / "part1.codoview", 32, 1, 2, 22);

  const auto dir_a = fresh_dir("run_a");
  const auto res_a =
      tr::run_pretraining(settings, shard_dir.string(), dir_a.string(), {}, true);
  // 5 records, batch 2 -> 2 steps/epoch, 4 epochs
  CHECK(res_a.steps_run == 8);
  CHECK(fs::path(res_a.final_checkpoint).filename() == "ckpt_final.codockpt");
  CHECK(fs::exists(dir_a / "ckpt_00000004.codockpt"));

  SUBCASE("identical reruns produce byte-equal metrics and checkpoints") {
    const auto dir_b = fresh_dir("run_b");
    tr::run_pretraining(settings, shard_dir.string(), dir_b.string(), {}, true);
    CHECK(slurp(dir_a / "metrics.jsonl") == slurp(dir_b / "metrics.jsonl"));
    CHECK(slurp(dir_a / "ckpt_final.codockpt") ==
          slurp(dir_b / "ckpt_final.codockpt"));
  }
  SUBCASE("prefetch mode matches synchronous mode") {
    const auto dir_b = fresh_dir("run_prefetch");
    tr::run_pretraining(settings, shard_dir.string(), dir_b.string(), {}, false);
    CHECK(slurp(dir_a / "metrics.jsonl") == slurp(dir_b / "metrics.jsonl"));
  }
  SUBCASE("resume reproduces the tail of the metrics stream") {
    const auto dir_b = fresh_dir("run_resume");
    const auto res_b = tr::run_pretraining(
        settings, shard_dir.string(), dir_b.string(),
        (dir_a / "ckpt_00000004.codockpt").string(), true);
    CHECK(res_b.steps_run == 4);
    const auto full = lines_of(slurp(dir_a / "metrics.jsonl"));
    const auto tail = lines_of(slurp(dir_b / "metrics.jsonl"));
    REQUIRE(full.size() == 8);
    REQUIRE(tail.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(tail[i] == full[i + 4]);
    CHECK(slurp(dir_a / "ckpt_final.codockpt") ==
          slurp(dir_b / "ckpt_final.codockpt"));
  }
  SUBCASE("metrics lines carry the schedule") {
    const auto all = lines_of(slurp(dir_a / "metrics.jsonl"));
    CHECK(all.front().find("\"step\":1") != std::string::npos);
    CHECK(all.back().find("\"step\":8") != std::string::npos);
    const double lr_last = tr::lr_at(settings.train, 8, 8);
    std::ostringstream expect;
    expect << "\"lr\":" << lr_last;
    CHECK(all.back().find("\"lr\":") != std::string::npos);
  }
}

TEST_CASE("pretraining validates shards against the run config") {
  auto settings = tiny_settings();
  const auto out = fresh_dir("out_validate");

  SUBCASE("missing directory") {
    CHECK_THROWS_AS(tr::run_pretraining(settings, (out / "nope").string(),
                                        out.string()),
                    codo::ValidationError);
  }
  SUBCASE("empty directory") {
    const auto shard_dir = fresh_dir("shards_empty");
    CHECK_THROWS_AS(
        tr::run_pretraining(settings, shard_dir.string(), out.string()),
        codo::ValidationError);
  }
  SUBCASE("wrong image size") {
    const auto shard_dir = fresh_dir("shards_size");
    write_shard(shard_dir / "part0.codoview", 64, 1, 4, 23);
    CHECK_THROWS_AS(
        tr::run_pretraining(settings, shard_dir.string(), out.string()),
        codo::ValidationError);
  }
  SUBCASE("wrong key view count") {
    const auto shard_dir = fresh_dir("shards_keys");
    write_shard(shard_dir / "part0.codoview", 32, 3, 4, 24);
    CHECK_THROWS_AS(
        tr::run_pretraining(settings, shard_dir.string(), out.string()),
        codo::ValidationError);
  }
  SUBCASE("fewer records than a batch") {
    const auto shard_dir = fresh_dir("shards_short");
    write_shard(shard_dir / "part0.codoview", 32, 1, 1, 25);
    CHECK_THROWS_AS(
        tr::run_pretraining(settings, shard_dir.string(), out.string()),
        codo::ValidationError);
  }
}
