#include "codo/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include "codo/common.hpp"
#include "codo/nn.hpp"
#include "codo/shards.hpp"

namespace codo::evalsuite {

namespace fs = std::filesystem;
namespace enc = encoder;
using corpus::ManifestRecord;

std::string pad_pool_id(const std::string& name) {
  if (name.empty() || name.size() > shards::kPoolIdBytes)
    throw std::invalid_argument("pool name '" + name + "' does not fit " +
                                std::to_string(shards::kPoolIdBytes) + " bytes");
  std::string id = name;
  id.resize(shards::kPoolIdBytes, '-');
  return id;
}

void ViewBuildConfig::validate() const {
  std::vector<std::string> bad;
  if (n_viewsets < 0) bad.push_back("n_viewsets must be >= 0");
  if (n_keys != 1 && n_keys != 3) bad.push_back("n_keys must be 1 or 3");
  if (view_size < 16) bad.push_back("view_size must be >= 16");
  const auto sub = [&bad](const char* what, const auto& part) {
    try {
      part.validate();
    } catch (const std::exception& e) {
      bad.push_back(std::string(what) + ": " + e.what());
    }
  };
  sub("proposal", proposal);
  sub("paste", paste);
  if (!(jitter.iou_min > 0.0 && jitter.iou_min < 1.0))
    bad.push_back("jitter.iou_min must lie in (0, 1)");
  if (!bad.empty()) {
    std::string msg = "invalid view build config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ValidationError(msg);
  }
}

namespace {

// Groups corpus background records into paste pools, optionally restricted
// to a named subset.
std::vector<augment::BackgroundPool> gather_pools(
    const std::string& corpus_dir, const std::vector<ManifestRecord>& records,
    const std::vector<std::string>& wanted) {
  std::map<std::string, augment::BackgroundPool> by_name;
  for (const auto& rec : records) {
    if (rec.split != "background") continue;
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), rec.pool) == wanted.end())
      continue;
    auto& pool = by_name[rec.pool];
    if (pool.images.empty()) pool.pool_id = pad_pool_id(rec.pool);
    pool.images.push_back(read_ppm((fs::path(corpus_dir) / rec.file).string()));
  }
  std::vector<augment::BackgroundPool> pools;
  for (auto& [name, pool] : by_name) pools.push_back(std::move(pool));
  if (!wanted.empty() && pools.size() != wanted.size()) {
    std::string msg = "missing background pools in corpus; wanted:";
    for (const auto& w : wanted) msg += " " + w;
    throw ValidationError(msg);
  }
  return pools;
}

// Exactly kForegroundIdBytes: the source image id (padded or cut to 12
// chars) plus a wide decimal counter, so ids stay unique per written record.
std::string viewset_id(const std::string& record_id, int counter) {
  std::string prefix = record_id.substr(0, 12);
  prefix.resize(12, '_');
  char buf[40];
  std::snprintf(buf, sizeof buf, "%s_%019d", prefix.c_str(), counter);
  return std::string(buf, shards::kForegroundIdBytes);
}

// Caches decoded source composites across attempts.
struct SourceCache {
  const std::string& corpus_dir;
  std::map<const ManifestRecord*, Image> images;

  const Image& get(const ManifestRecord* rec) {
    auto it = images.find(rec);
    if (it == images.end())
      it = images
               .emplace(rec,
                        read_ppm((fs::path(corpus_dir) / rec->file).string()))
               .first;
    return it->second;
  }
};

// Shared assembly loop. draw() yields the next candidate proposal and its
// source image; paste failures are counted and retried up to the attempt cap.
ViewBuildSummary assemble_views(
    const std::vector<ManifestRecord>& records, const std::string& corpus_dir,
    const ViewBuildConfig& cfg, const std::string& shard_path,
    const std::function<proposals::Proposal(Rng&, int, const Image**)>& draw) {
  const auto query_pools = gather_pools(corpus_dir, records, cfg.query_pools);
  const auto key_pools = gather_pools(corpus_dir, records, cfg.key_pools);
  if (cfg.n_viewsets > 0 && (query_pools.empty() || key_pools.empty()))
    throw ValidationError("corpus has no background images for paste pools");
  for (const auto* pools : {&query_pools, &key_pools})
    for (const auto& pool : *pools)
      for (const auto& img : pool.images)
        if (img.width != cfg.view_size || img.height != cfg.view_size)
          throw ValidationError(
              "background images are " + std::to_string(img.width) + "x" +
              std::to_string(img.height) + " but view_size is " +
              std::to_string(cfg.view_size) +
              "; regenerate the corpus at the matching size");

  shards::ShardWriter writer(shard_path, static_cast<std::uint32_t>(cfg.view_size),
                             static_cast<std::uint32_t>(cfg.n_keys),
                             cfg.config_hash);
  ViewBuildSummary summary;
  summary.shard_path = shard_path;

  Rng rng = Rng(cfg.seed).fork(11);
  const std::int64_t max_attempts =
      std::max<std::int64_t>(64, static_cast<std::int64_t>(cfg.n_viewsets) * 20);
  std::int64_t attempts = 0;
  while (summary.written < cfg.n_viewsets) {
    if (++attempts > max_attempts)
      throw ValidationError(
          "could not assemble " + std::to_string(cfg.n_viewsets) +
          " viewsets after " + std::to_string(max_attempts) +
          " attempts; corpus too small or filters too strict");
    try {
      const Image* image = nullptr;
      const proposals::Proposal chosen = draw(rng, summary.written, &image);
      const auto vs = augment::build_viewset_split(
          chosen, *image, query_pools, key_pools, cfg.n_keys, cfg.paste,
          cfg.jitter, cfg.photo, rng);
      writer.write(vs);
      ++summary.written;
    } catch (const NoProposalError&) {
      ++summary.skipped_sources;
    } catch (const SkipSampleError&) {
      ++summary.skipped_sources;
    }
  }
  writer.close();
  return summary;
}

}  // namespace

ViewBuildSummary build_view_shards(const std::string& corpus_dir,
                                   const ViewBuildConfig& cfg,
                                   const std::string& shard_path) {
  cfg.validate();
  const auto records = corpus::load_manifest(corpus_dir);
  std::vector<const ManifestRecord*> sources;
  for (const auto& rec : records)
    if (rec.split == "train") sources.push_back(&rec);
  if (sources.empty() && cfg.n_viewsets > 0)
    throw ValidationError("corpus has no train images to draw foregrounds from");

  SourceCache cache{corpus_dir, {}};
  const auto draw = [&](Rng& rng, int counter, const Image** image) {
    const ManifestRecord* src =
        sources[rng.uniform_int(static_cast<std::uint64_t>(sources.size()))];
    *image = &cache.get(src);
    auto candidates = proposals::filter_aspect_ratio(proposals::generate_proposals(
        **image, viewset_id(src->id, counter), cfg.proposal, rng));
    return proposals::select_one(candidates, rng);
  };
  return assemble_views(records, corpus_dir, cfg, shard_path, draw);
}

std::vector<ProposalRecord> select_proposals(
    const std::string& corpus_dir, const proposals::ProposalGeneratorConfig& cfg,
    std::uint64_t seed) {
  cfg.validate();
  const auto records = corpus::load_manifest(corpus_dir);
  std::vector<ProposalRecord> out;
  Rng rng = Rng(seed).fork(12);
  for (const auto& rec : records) {
    if (rec.split != "train") continue;
    const Image image = read_ppm((fs::path(corpus_dir) / rec.file).string());
    try {
      auto candidates = proposals::filter_aspect_ratio(
          proposals::generate_proposals(image, rec.id, cfg, rng));
      const auto& chosen = proposals::select_one(candidates, rng);
      out.push_back({rec.id, chosen.box, chosen.score});
    } catch (const NoProposalError&) {
    }
  }
  return out;
}

void write_proposals_jsonl(const std::vector<ProposalRecord>& records,
                           const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataFormatError("cannot write " + path);
  for (const auto& rec : records) {
    nlohmann::json j;
    j["image_id"] = rec.image_id;
    j["box"] = {rec.box.x0, rec.box.y0, rec.box.x1, rec.box.y1};
    j["score"] = rec.score;
    out << j.dump() << '\n';
  }
  out.flush();
  if (!out) throw DataFormatError("failed writing " + path);
}

std::vector<ProposalRecord> read_proposals_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path);
  std::vector<ProposalRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ProposalRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      rec.box = {j.at("box").at(0).get<double>(), j.at("box").at(1).get<double>(),
                 j.at("box").at(2).get<double>(), j.at("box").at(3).get<double>()};
      rec.score = j.at("score").get<double>();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError(path + ":" + std::to_string(line_no) +
                            ": bad proposal record: " + e.what());
    }
  }
  return records;
}

ViewBuildSummary build_views_from_proposals(
    const std::string& corpus_dir, const std::vector<ProposalRecord>& proposals_in,
    const ViewBuildConfig& cfg, const std::string& shard_path) {
  cfg.validate();
  if (proposals_in.empty() && cfg.n_viewsets > 0)
    throw ValidationError("proposals file holds no records");
  const auto records = corpus::load_manifest(corpus_dir);
  std::map<std::string, const ManifestRecord*> by_id;
  for (const auto& rec : records) by_id[rec.id] = &rec;
  for (const auto& pr : proposals_in)
    if (!by_id.count(pr.image_id))
      throw ValidationError("proposal names image '" + pr.image_id +
                            "' which is not in the corpus manifest");

  SourceCache cache{corpus_dir, {}};
  const auto draw = [&](Rng& rng, int counter, const Image** image) {
    const ProposalRecord& pr = proposals_in[rng.uniform_int(
        static_cast<std::uint64_t>(proposals_in.size()))];
    *image = &cache.get(by_id.at(pr.image_id));
    proposals::Proposal p;
    p.box = pr.box;
    p.score = pr.score;
    p.source_image_id = viewset_id(pr.image_id, counter);
    return p;
  };
  return assemble_views(records, corpus_dir, cfg, shard_path, draw);
}

namespace {

struct EmbeddedRecord {
  const ManifestRecord* rec = nullptr;
  std::array<Tensor, enc::kLevels> levels;
};

std::vector<EmbeddedRecord> embed_records(
    const enc::Encoder& model, const enc::Params& params,
    const std::string& corpus_dir, const std::vector<ManifestRecord>& records,
    const std::set<std::string>& splits) {
  std::vector<EmbeddedRecord> out;
  nn::NoGradGuard off;
  for (const auto& rec : records) {
    if (!splits.count(rec.split) || !rec.has_box) continue;
    const Image img = read_ppm((fs::path(corpus_dir) / rec.file).string());
    const auto vars =
        model.embed(params, enc::image_to_tensor(img), rec.box, false);
    EmbeddedRecord er;
    er.rec = &rec;
    for (int l = 0; l < enc::kLevels; ++l) {
      er.levels[l] = vars[l]->value;
      if (std::abs(er.levels[l].norm2() - 1.0) > 1e-5)
        throw ValidationError("embedding for " + rec.id +
                              " is not unit-norm; refusing to probe");
    }
    out.push_back(std::move(er));
  }
  return out;
}

}  // namespace

ProbeReport linear_probe(const enc::Encoder& model, const enc::Params& params,
                         const std::string& corpus_dir, const ProbeConfig& cfg) {
  if (cfg.iterations < 1) throw ValidationError("probe iterations must be >= 1");
  const auto records = corpus::load_manifest(corpus_dir);
  const auto embedded = embed_records(model, params, corpus_dir, records,
                                      {"probe_train", "probe_test"});

  int n_classes = 0;
  for (const auto& er : embedded)
    n_classes = std::max(n_classes, er.rec->class_id + 1);
  if (n_classes < 2)
    throw ValidationError("probe needs at least 2 classes with samples");

  std::vector<const EmbeddedRecord*> train, test;
  std::vector<int> train_count(static_cast<std::size_t>(n_classes), 0);
  std::vector<int> test_count(static_cast<std::size_t>(n_classes), 0);
  for (const auto& er : embedded) {
    if (er.rec->split == "probe_train") {
      train.push_back(&er);
      ++train_count[static_cast<std::size_t>(er.rec->class_id)];
    } else {
      test.push_back(&er);
      ++test_count[static_cast<std::size_t>(er.rec->class_id)];
    }
  }
  for (int c = 0; c < n_classes; ++c) {
    if (train_count[static_cast<std::size_t>(c)] == 0)
      throw ValidationError("class " + std::to_string(c) +
                            " has zero probe_train samples");
    if (test_count[static_cast<std::size_t>(c)] == 0)
      throw ValidationError("class " + std::to_string(c) +
                            " has zero probe_test samples");
  }

  const int dim = model.config().embed_dim;
  const int feat = enc::kLevels * dim;
  auto feature = [&](const EmbeddedRecord* er, int f) {
    return er->levels[static_cast<std::size_t>(f / dim)](f % dim);
  };

  // full-batch softmax regression with momentum, fixed iteration count
  const std::size_t wsize =
      static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(feat + 1);
  std::vector<double> w(wsize, 0.0), vel(wsize, 0.0), grad(wsize);
  std::vector<double> logits(static_cast<std::size_t>(n_classes));
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto* er : train) {
      double max_logit = -1e300;
      for (int c = 0; c < n_classes; ++c) {
        const double* wc = &w[static_cast<std::size_t>(c) *
                              static_cast<std::size_t>(feat + 1)];
        double z = wc[feat];
        for (int f = 0; f < feat; ++f) z += wc[f] * feature(er, f);
        logits[static_cast<std::size_t>(c)] = z;
        max_logit = std::max(max_logit, z);
      }
      double denom = 0.0;
      for (int c = 0; c < n_classes; ++c)
        denom += std::exp(logits[static_cast<std::size_t>(c)] - max_logit);
      for (int c = 0; c < n_classes; ++c) {
        const double p =
            std::exp(logits[static_cast<std::size_t>(c)] - max_logit) / denom;
        const double err = p - (c == er->rec->class_id ? 1.0 : 0.0);
        double* gc = &grad[static_cast<std::size_t>(c) *
                           static_cast<std::size_t>(feat + 1)];
        for (int f = 0; f < feat; ++f) gc[f] += err * feature(er, f);
        gc[feat] += err;
      }
    }
    for (std::size_t i = 0; i < wsize; ++i) {
      vel[i] = cfg.momentum * vel[i] +
               grad[i] * inv_n + cfg.weight_decay * w[i];
      w[i] -= cfg.lr * vel[i];
    }
  }

  int correct = 0;
  for (const auto* er : test) {
    int best = 0;
    double best_z = -1e300;
    for (int c = 0; c < n_classes; ++c) {
      const double* wc =
          &w[static_cast<std::size_t>(c) * static_cast<std::size_t>(feat + 1)];
      double z = wc[feat];
      for (int f = 0; f < feat; ++f) z += wc[f] * feature(er, f);
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    if (best == er->rec->class_id) ++correct;
  }

  ProbeReport report;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  report.n_train = static_cast<int>(train.size());
  report.n_test = static_cast<int>(test.size());
  report.n_classes = n_classes;
  return report;
}

InvarianceReport invariance_probe(const enc::Encoder& model,
                                  const enc::Params& params,
                                  const std::string& corpus_dir) {
  const auto records = corpus::load_manifest(corpus_dir);
  const auto embedded = embed_records(model, params, corpus_dir, records,
                                      {"probe_train", "probe_test"});

  std::map<std::string, std::vector<const EmbeddedRecord*>> by_instance;
  std::set<std::string> pools;
  for (const auto& er : embedded) {
    by_instance[er.rec->instance_id].push_back(&er);
    pools.insert(er.rec->pool);
  }
  if (pools.size() < 2)
    throw ValidationError("invariance probe needs renders on >= 2 background "
                          "pools, corpus has " + std::to_string(pools.size()));
  if (by_instance.size() < 2)
    throw ValidationError("invariance probe needs >= 2 foreground instances");

  std::vector<const std::vector<const EmbeddedRecord*>*> instances;
  for (const auto& [id, renders] : by_instance) instances.push_back(&renders);

  struct Acc {
    double sum = 0.0, sq = 0.0;
    std::array<double, enc::kLevels> level{};
    int n = 0;
    void add(const std::array<double, enc::kLevels>& cos_l) {
      double overall = 0.0;
      for (int l = 0; l < enc::kLevels; ++l) {
        level[static_cast<std::size_t>(l)] += cos_l[static_cast<std::size_t>(l)];
        overall += cos_l[static_cast<std::size_t>(l)];
      }
      overall /= enc::kLevels;
      sum += overall;
      sq += overall * overall;
      ++n;
    }
    double mean() const { return sum / n; }
    double stdev() const {
      const double m = mean();
      return std::sqrt(std::max(0.0, sq / n - m * m));
    }
  };
  auto cosines = [](const EmbeddedRecord* a, const EmbeddedRecord* b) {
    std::array<double, enc::kLevels> out{};
    for (int l = 0; l < enc::kLevels; ++l)
      out[static_cast<std::size_t>(l)] =
          a->levels[static_cast<std::size_t>(l)].dot(
              b->levels[static_cast<std::size_t>(l)]);
    return out;
  };

  Acc same, diff;
  for (const auto* renders : instances)
    for (std::size_t i = 0; i < renders->size(); ++i)
      for (std::size_t j = i + 1; j < renders->size(); ++j)
        if ((*renders)[i]->rec->pool != (*renders)[j]->rec->pool)
          same.add(cosines((*renders)[i], (*renders)[j]));

  const std::size_t n_inst = instances.size();
  for (std::size_t i = 0; i < n_inst; ++i)
    for (std::size_t step = 1; step <= 3 && step < n_inst; ++step) {
      const auto& a = *instances[i];
      const auto& b = *instances[(i + step) % n_inst];
      diff.add(cosines(a[0], b[b.size() > 1 ? 1 : 0]));
    }

  if (same.n == 0)
    throw ValidationError("no same-foreground cross-pool pairs in the corpus");

  InvarianceReport rep;
  rep.same_mean = same.mean();
  rep.same_std = same.stdev();
  rep.diff_mean = diff.mean();
  rep.diff_std = diff.stdev();
  rep.gap = rep.same_mean - rep.diff_mean;
  for (int l = 0; l < enc::kLevels; ++l) {
    rep.level_same[static_cast<std::size_t>(l)] =
        same.level[static_cast<std::size_t>(l)] / same.n;
    rep.level_diff[static_cast<std::size_t>(l)] =
        diff.level[static_cast<std::size_t>(l)] / diff.n;
    rep.level_gap[static_cast<std::size_t>(l)] =
        rep.level_same[static_cast<std::size_t>(l)] -
        rep.level_diff[static_cast<std::size_t>(l)];
  }
  rep.n_same_pairs = same.n;
  rep.n_diff_pairs = diff.n;
  return rep;
}

encoder::EncoderPair load_encoder(const enc::EncoderConfig& cfg,
                                  const std::string& ckpt_path,
                                  std::uint64_t expected_hash) {
  const auto data = enc::load_checkpoint(ckpt_path);
  if (expected_hash != 0 && data.config_hash != expected_hash)
    throw CheckpointError("checkpoint config hash " + hash_hex(data.config_hash) +
                          " does not match expected " + hash_hex(expected_hash));
  Rng rng(0);
  auto pair = enc::make_encoder_pair(cfg, data.momentum, rng);
  enc::unpack_pair(data, &pair);
  return pair;
}

std::vector<AblationRowSpec> default_ablation_rows() {
  const std::string single = corpus::kPoolNames[0];
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < corpus::kPoolNames.size(); ++i)
    rest.push_back(corpus::kPoolNames[i]);
  return {
      {"single", {single}, {single}},
      {"mixed", {}, {}},
      {"mismatched", {single}, rest},
  };
}

std::vector<AblationCell> ablation_backgrounds(
    const std::string& corpus_dir, const AblationConfig& cfg,
    const std::vector<AblationRowSpec>& rows, const std::string& work_dir) {
  if (rows.empty()) throw ValidationError("ablation needs at least one row");
  if (cfg.seeds.empty()) throw ValidationError("ablation needs at least one seed");
  if (cfg.budget_steps < 1) throw ValidationError("budget_steps must be >= 1");
  if (cfg.views.n_viewsets < cfg.settings.train.batch_size)
    throw ValidationError("ablation needs at least one batch of viewsets");

  std::vector<AblationCell> cells;
  for (const auto& row : rows)
    for (const std::uint64_t seed : cfg.seeds) {
      const fs::path cell_dir =
          fs::path(work_dir) / row.name / ("seed" + std::to_string(seed));
      fs::create_directories(cell_dir / "views");

      ViewBuildConfig views = cfg.views;
      views.query_pools = row.query_pools;
      views.key_pools = row.key_pools;
      views.seed = seed;
      views.n_keys = cfg.settings.train.n_keys;
      views.view_size = cfg.settings.encoder.image_size;
      build_view_shards(
          corpus_dir, views,
          (cell_dir / "views" / ("views" + std::string(shards::kShardExtension)))
              .string());

      trainer::TrainSettings settings = cfg.settings;
      settings.train.seed = seed;
      const std::int64_t spe = cfg.views.n_viewsets / settings.train.batch_size;
      settings.train.epochs = static_cast<int>(
          std::max<std::int64_t>(1, (cfg.budget_steps + spe - 1) / spe));
      settings.train.snapshot_every = 1 << 30;  // final checkpoint only
      const auto result =
          trainer::run_pretraining(settings, (cell_dir / "views").string(),
                                   (cell_dir / "run").string(), {}, true);

      const enc::Encoder model(settings.encoder);
      const auto pair =
          load_encoder(settings.encoder, result.final_checkpoint,
                       settings.config_hash);
      const auto inv = invariance_probe(model, pair.query, corpus_dir);
      const auto probe = linear_probe(model, pair.query, corpus_dir, cfg.probe);

      AblationCell cell;
      cell.row = row.name;
      cell.seed = seed;
      cell.invariance_gap = inv.gap;
      cell.probe_accuracy = probe.accuracy;
      cell.final_loss = result.final_loss;
      cells.push_back(cell);
    }
  return cells;
}

std::string format_ablation_table(const std::vector<AblationCell>& cells) {
  std::string out =
      "row          seed  invariance_gap  probe_accuracy  final_loss\n";
  for (const auto& c : cells) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-12s %4llu  %14.4f  %14.4f  %10.4f\n",
                  c.row.c_str(), static_cast<unsigned long long>(c.seed),
                  c.invariance_gap, c.probe_accuracy, c.final_loss);
    out += buf;
  }
  return out;
}

void write_ablation_jsonl(const std::vector<AblationCell>& cells,
                          const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataFormatError("cannot write " + path);
  for (const auto& c : cells) out << to_json(c).dump() << '\n';
  out.flush();
  if (!out) throw DataFormatError("failed writing " + path);
}

std::vector<AblationCell> read_ablation_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path);
  std::vector<AblationCell> cells;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AblationCell c;
      c.row = j.at("row").get<std::string>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.invariance_gap = j.at("invariance_gap").get<double>();
      c.probe_accuracy = j.at("probe_accuracy").get<double>();
      c.final_loss = j.at("final_loss").get<double>();
      cells.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError(path + ":" + std::to_string(line_no) +
                            ": bad ablation record: " + e.what());
    }
  }
  return cells;
}

nlohmann::json to_json(const ProbeReport& r) {
  return {{"accuracy", r.accuracy},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"n_classes", r.n_classes}};
}

nlohmann::json to_json(const InvarianceReport& r) {
  nlohmann::json j;
  j["same_fg_diff_bg_cosine"] = {{"mean", r.same_mean}, {"std", r.same_std}};
  j["diff_fg_cosine"] = {{"mean", r.diff_mean}, {"std", r.diff_std}};
  j["gap"] = r.gap;
  for (int l = 0; l < enc::kLevels; ++l) {
    const std::string key = "P" + std::to_string(l + 2);
    j["levels"][key] = {{"same", r.level_same[static_cast<std::size_t>(l)]},
                        {"diff", r.level_diff[static_cast<std::size_t>(l)]},
                        {"gap", r.level_gap[static_cast<std::size_t>(l)]}};
  }
  j["n_same_pairs"] = r.n_same_pairs;
  j["n_diff_pairs"] = r.n_diff_pairs;
  return j;
}

nlohmann::json to_json(const AblationCell& c) {
  return {{"row", c.row},
          {"seed", c.seed},
          {"invariance_gap", c.invariance_gap},
          {"probe_accuracy", c.probe_accuracy},
          {"final_loss", c.final_loss}};
}

}  // namespace codo::evalsuite
