#include "codo/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>
#include <utility>

#include "codo/common.hpp"
#include "codo/shards.hpp"
#include "json.hpp"

namespace codo::trainer {

namespace fs = std::filesystem;
namespace con = contrastive;
namespace enc = encoder;

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "step") return LrSchedule::step;
  throw ValidationError("unknown lr_schedule '" + s + "' (expected cosine or step)");
}

std::string to_string(LrSchedule s) {
  return s == LrSchedule::cosine ? "cosine" : "step";
}

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (batch_size < 1) bad.push_back("batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr))
    bad.push_back("base_lr must be finite and >= 0");
  if (!(momentum_sgd >= 0.0 && momentum_sgd < 1.0))
    bad.push_back("momentum_sgd must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) bad.push_back("weight_decay must be >= 0");
  if (epochs < 1) bad.push_back("epochs must be >= 1");
  if (n_keys != 1 && n_keys != 3) bad.push_back("n_keys must be 1 or 3");
  if (snapshot_every < 1) bad.push_back("snapshot_every must be >= 1");
  if (!bad.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ValidationError(msg);
  }
}

void TrainSettings::validate() const {
  std::vector<std::string> bad;
  const auto sub = [&bad](const char* what, const auto& part) {
    try {
      part.validate();
    } catch (const std::exception& e) {
      bad.push_back(std::string(what) + ": " + e.what());
    }
  };
  sub("encoder", encoder);
  sub("train", train);
  sub("loss", loss);
  if (queue_capacity < 1) bad.push_back("queue_capacity must be >= 1");
  if (!(key_momentum >= 0.0 && key_momentum <= 1.0))
    bad.push_back("key_momentum must lie in [0, 1]");
  if (!bad.empty()) {
    std::string msg = "invalid train settings:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ValidationError(msg);
  }
}

TrainState init_state(const TrainSettings& settings) {
  settings.validate();
  Rng rng(settings.train.seed);
  enc::EncoderPair pair =
      enc::make_encoder_pair(settings.encoder, settings.key_momentum, rng);
  std::vector<Tensor> velocity;
  velocity.reserve(pair.query.values.size());
  for (const Tensor& t : pair.query.values) velocity.emplace_back(t.shape);
  const int dim = settings.encoder.embed_dim;
  const int cap = settings.queue_capacity;
  return TrainState{std::move(pair),
                    {con::NegativeQueue(cap, dim), con::NegativeQueue(cap, dim),
                     con::NegativeQueue(cap, dim), con::NegativeQueue(cap, dim)},
                    std::move(velocity),
                    0,
                    rng};
}

std::string to_jsonl(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  j["queue_fill"] = m.queue_fill;
  j["pos_logit_mean"] = m.pos_logit_mean;
  return j.dump();
}

double lr_at(const TrainConfig& cfg, std::int64_t t, std::int64_t total_steps) {
  if (t < 1 || total_steps < 1 || t > total_steps)
    throw std::invalid_argument("lr_at: step out of range");
  const double progress =
      static_cast<double>(t - 1) / static_cast<double>(total_steps);
  if (cfg.lr_schedule == LrSchedule::cosine)
    return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  double lr = cfg.base_lr;
  if (progress >= 0.6) lr *= 0.1;
  if (progress >= 0.8) lr *= 0.1;
  return lr;
}

namespace {

std::string join_ids(const std::vector<augment::ViewSet>& batch) {
  std::string out;
  for (const auto& vs : batch) {
    if (!out.empty()) out += ", ";
    out += vs.foreground_id;
  }
  return out;
}

}  // namespace

StepMetrics train_step(const enc::Encoder& model, TrainState& state,
                       const std::vector<augment::ViewSet>& batch,
                       const TrainSettings& settings, double lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const int n_keys = settings.train.n_keys;
  for (const auto& vs : batch)
    if (static_cast<int>(vs.keys.size()) != n_keys)
      throw std::invalid_argument("train_step: viewset has " +
                                  std::to_string(vs.keys.size()) +
                                  " key views, config expects " +
                                  std::to_string(n_keys));

  const con::LevelSnapshots snapshots = con::snapshot_all(state.queues);
  nn::GradSink sink(static_cast<int>(state.pair.query.values.size()));

  double loss_sum = 0.0;
  double pos_sum = 0.0;
  std::int64_t pos_count = 0;
  std::array<std::vector<Tensor>, enc::kLevels> fresh_keys;

  for (const auto& vs : batch) {
    std::vector<con::LevelEmbeddings> keys;
    keys.reserve(vs.keys.size());
    {
      nn::NoGradGuard off;
      for (const auto& kv : vs.keys) {
        const auto vars = model.embed(state.pair.key, enc::image_to_tensor(kv.image),
                                      kv.box, false);
        con::LevelEmbeddings k;
        for (int l = 0; l < enc::kLevels; ++l) k[l] = vars[l]->value;
        keys.push_back(std::move(k));
      }
    }

    const auto q = model.embed(state.pair.query,
                               enc::image_to_tensor(vs.query.image), vs.query.box,
                               true);
    const nn::Var loss = con::multi_view_loss(q, keys, snapshots, settings.loss);
    loss_sum += loss->value(0);
    nn::backward(loss, sink);

    for (const auto& k : keys)
      for (int l = 0; l < enc::kLevels; ++l) {
        pos_sum += q[l]->value.dot(k[l]);
        ++pos_count;
        fresh_keys[l].push_back(k[l]);
      }
  }

  const double mean_loss = loss_sum / static_cast<double>(batch.size());
  if (!std::isfinite(mean_loss))
    throw TrainingDivergedError("non-finite loss at step " +
                                std::to_string(state.step + 1) +
                                "; batch foregrounds: " + join_ids(batch));

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double mu = settings.train.momentum_sgd;
  const double wd = settings.train.weight_decay;
  for (int p = 0; p < state.pair.query.size(); ++p) {
    Tensor& theta = state.pair.query.values[static_cast<std::size_t>(p)];
    Tensor& vel = state.velocity[static_cast<std::size_t>(p)];
    const Tensor* g = sink.slot(p);
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const double grad = (g ? g->data[i] * inv_b : 0.0) + wd * theta.data[i];
      vel.data[i] = mu * vel.data[i] + grad;
      theta.data[i] -= lr * vel.data[i];
    }
  }

  enc::momentum_update(state.pair);
  for (int l = 0; l < enc::kLevels; ++l) state.queues[l].enqueue(fresh_keys[l]);

  ++state.step;
  return StepMetrics{state.step, mean_loss, lr, state.queues[0].size(),
                     pos_sum / static_cast<double>(pos_count)};
}

encoder::CheckpointData pack_state(const TrainState& state,
                                   const TrainSettings& settings) {
  enc::CheckpointData data;
  data.config_hash = settings.config_hash;
  data.step = static_cast<std::uint64_t>(state.step);
  data.momentum = settings.key_momentum;
  enc::pack_pair(state.pair, &data);
  for (int p = 0; p < state.pair.query.size(); ++p)
    data.f64["v." + state.pair.query.names[static_cast<std::size_t>(p)]] =
        state.velocity[static_cast<std::size_t>(p)].data;
  for (int l = 0; l < enc::kLevels; ++l)
    data.f64["queue.P" + std::to_string(l + 2)] = state.queues[l].snapshot();
  const auto words = state.rng.snapshot();
  data.u64["rng.state"] = {words.begin(), words.end()};
  return data;
}

TrainState unpack_state(const encoder::CheckpointData& data,
                        const TrainSettings& settings) {
  if (data.config_hash != settings.config_hash)
    throw CheckpointError("checkpoint config hash " + hash_hex(data.config_hash) +
                          " does not match run config hash " +
                          hash_hex(settings.config_hash));
  TrainState state = init_state(settings);
  enc::unpack_pair(data, &state.pair);
  for (int p = 0; p < state.pair.query.size(); ++p) {
    const std::string key =
        "v." + state.pair.query.names[static_cast<std::size_t>(p)];
    const auto it = data.f64.find(key);
    if (it == data.f64.end())
      throw CheckpointError("checkpoint missing block " + key);
    Tensor& vel = state.velocity[static_cast<std::size_t>(p)];
    if (it->second.size() != vel.data.size())
      throw CheckpointError("checkpoint block " + key + " has wrong size");
    vel.data = it->second;
  }
  const int dim = settings.encoder.embed_dim;
  for (int l = 0; l < enc::kLevels; ++l) {
    const std::string key = "queue.P" + std::to_string(l + 2);
    const auto it = data.f64.find(key);
    if (it == data.f64.end())
      throw CheckpointError("checkpoint missing block " + key);
    const auto& flat = it->second;
    if (flat.size() % static_cast<std::size_t>(dim) != 0 ||
        flat.size() >
            static_cast<std::size_t>(settings.queue_capacity) *
                static_cast<std::size_t>(dim))
      throw CheckpointError("checkpoint block " + key + " has wrong size");
    std::vector<Tensor> rows;
    for (std::size_t off = 0; off < flat.size(); off += static_cast<std::size_t>(dim)) {
      Tensor row({dim});
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dim,
                  row.data.begin());
      rows.push_back(std::move(row));
    }
    state.queues[l].enqueue(rows);
  }
  const auto it = data.u64.find("rng.state");
  if (it == data.u64.end() || it->second.size() != 4)
    throw CheckpointError("checkpoint missing rng state");
  std::array<std::uint64_t, 4> words;
  std::copy_n(it->second.begin(), 4, words.begin());
  state.rng.restore(words);
  state.step = static_cast<std::int64_t>(data.step);
  return state;
}

namespace {

using Batch = std::vector<augment::ViewSet>;

// Single-producer bounded channel feeding batches to the training loop.
class BatchChannel {
 public:
  explicit BatchChannel(std::size_t capacity) : capacity_(capacity) {}

  bool push(Batch b) {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return q_.size() < capacity_ || cancelled_; });
    if (cancelled_) return false;
    q_.push_back(std::move(b));
    cv_.notify_all();
    return true;
  }

  std::optional<Batch> pop() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    Batch b = std::move(q_.front());
    q_.pop_front();
    cv_.notify_all();
    return b;
  }

  void close(std::exception_ptr err = nullptr) {
    std::lock_guard lock(m_);
    closed_ = true;
    if (err) err_ = err;
    cv_.notify_all();
  }

  void cancel() {
    std::lock_guard lock(m_);
    cancelled_ = true;
    q_.clear();
    cv_.notify_all();
  }

  std::exception_ptr error() {
    std::lock_guard lock(m_);
    return err_;
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::deque<Batch> q_;
  std::size_t capacity_;
  bool closed_ = false;
  bool cancelled_ = false;
  std::exception_ptr err_;
};

// Reads batches in the global step order shared by fresh and resumed runs.
class BatchSource {
 public:
  BatchSource(const TrainSettings& settings, const std::string& shard_dir)
      : seed_(settings.train.seed), batch_size_(settings.train.batch_size) {
    if (!fs::is_directory(shard_dir))
      throw ValidationError("shard directory not found: " + shard_dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(shard_dir))
      if (entry.is_regular_file() &&
          entry.path().extension() == shards::kShardExtension)
        paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty())
      throw ValidationError("no view shards (*" +
                            std::string(shards::kShardExtension) + ") in " +
                            shard_dir);
    for (const auto& p : paths) {
      auto reader = std::make_unique<shards::ShardReader>(p);
      const auto& h = reader->header();
      if (static_cast<int>(h.image_size) != settings.encoder.image_size)
        throw ValidationError("shard " + p + " has image_size " +
                              std::to_string(h.image_size) +
                              ", config expects " +
                              std::to_string(settings.encoder.image_size));
      if (static_cast<int>(h.n_keys) != settings.train.n_keys)
        throw ValidationError("shard " + p + " has n_keys " +
                              std::to_string(h.n_keys) + ", config expects " +
                              std::to_string(settings.train.n_keys));
      for (std::uint64_t i = 0; i < h.record_count; ++i)
        index_.emplace_back(static_cast<int>(readers_.size()), i);
      readers_.push_back(std::move(reader));
    }
    if (static_cast<std::int64_t>(index_.size()) < batch_size_)
      throw ValidationError("shards hold " + std::to_string(index_.size()) +
                            " records, fewer than one batch of " +
                            std::to_string(batch_size_));
  }

  std::int64_t steps_per_epoch() const {
    return static_cast<std::int64_t>(index_.size()) / batch_size_;
  }

  Batch load(std::int64_t step_index) {
    const std::int64_t epoch = step_index / steps_per_epoch();
    const std::int64_t pos = (step_index % steps_per_epoch()) * batch_size_;
    if (epoch != perm_epoch_) {
      perm_.resize(index_.size());
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng = Rng(seed_).fork(static_cast<std::uint64_t>(epoch) + 1);
      for (std::size_t i = perm_.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(i + 1));
        std::swap(perm_[i], perm_[j]);
      }
      perm_epoch_ = epoch;
    }
    Batch batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    for (std::int64_t i = 0; i < batch_size_; ++i) {
      const auto [reader, record] =
          index_[perm_[static_cast<std::size_t>(pos + i)]];
      batch.push_back(readers_[static_cast<std::size_t>(reader)]->read_at(record));
    }
    return batch;
  }

 private:
  std::uint64_t seed_;
  std::int64_t batch_size_;
  std::vector<std::unique_ptr<shards::ShardReader>> readers_;
  std::vector<std::pair<int, std::uint64_t>> index_;
  std::vector<std::size_t> perm_;
  std::int64_t perm_epoch_ = -1;
};

std::string checkpoint_path(const std::string& out_dir, std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%08lld", static_cast<long long>(step));
  return (fs::path(out_dir) / (std::string(buf) + ".codockpt")).string();
}

}  // namespace

PretrainResult run_pretraining(const TrainSettings& settings,
                               const std::string& shard_dir,
                               const std::string& out_dir,
                               const std::string& resume_path,
                               bool deterministic) {
  settings.validate();
  BatchSource source(settings, shard_dir);
  const std::int64_t total_steps =
      static_cast<std::int64_t>(settings.train.epochs) * source.steps_per_epoch();

  const enc::Encoder model(settings.encoder);
  TrainState state =
      resume_path.empty()
          ? init_state(settings)
          : unpack_state(enc::load_checkpoint(resume_path), settings);
  if (state.step > total_steps)
    throw ValidationError("checkpoint step " + std::to_string(state.step) +
                          " is past the configured horizon of " +
                          std::to_string(total_steps) + " steps");

  fs::create_directories(out_dir);
  std::ofstream metrics((fs::path(out_dir) / "metrics.jsonl").string(),
                        resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw DataFormatError("cannot open metrics stream in " + out_dir);

  const std::int64_t start = state.step;
  PretrainResult result;

  auto run_one = [&](Batch batch) {
    const double lr = lr_at(settings.train, state.step + 1, total_steps);
    const StepMetrics m = train_step(model, state, batch, settings, lr);
    metrics << to_jsonl(m) << '\n';
    metrics.flush();
    result.final_loss = m.loss;
    ++result.steps_run;
    if (m.step % settings.train.snapshot_every == 0 && m.step < total_steps)
      enc::save_checkpoint(checkpoint_path(out_dir, m.step),
                           pack_state(state, settings));
  };

  if (deterministic) {
    for (std::int64_t s = start; s < total_steps; ++s) run_one(source.load(s));
  } else {
    BatchChannel channel(4);
    std::thread loader([&] {
      try {
        for (std::int64_t s = start; s < total_steps; ++s)
          if (!channel.push(source.load(s))) return;
        channel.close();
      } catch (...) {
        channel.close(std::current_exception());
      }
    });
    try {
      while (auto batch = channel.pop()) run_one(std::move(*batch));
    } catch (...) {
      channel.cancel();
      loader.join();
      throw;
    }
    loader.join();
    if (auto err = channel.error()) std::rethrow_exception(err);
  }

  result.final_checkpoint = (fs::path(out_dir) / "ckpt_final.codockpt").string();
  enc::save_checkpoint(result.final_checkpoint, pack_state(state, settings));
  return result;
}

}  // namespace codo::trainer
