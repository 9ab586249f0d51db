#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "codo/augment.hpp"
#include "codo/corpus.hpp"
#include "codo/encoder.hpp"
#include "codo/proposals.hpp"
#include "codo/trainer.hpp"
#include "json.hpp"

namespace codo::evalsuite {

// Corpus pool names padded to the fixed shard id width.
std::string pad_pool_id(const std::string& name);

// --- corpus -> proposal -> paste-jitter views -> one shard ---------------

struct ViewBuildConfig {
  int n_viewsets = 2000;
  int n_keys = 1;
  int view_size = 64;  // paste canvas side; must match the encoder input
  proposals::ProposalGeneratorConfig proposal;
  augment::PasteConfig paste;
  JitterConfig jitter;
  augment::PhotoConfig photo;
  std::vector<std::string> query_pools;  // empty selects every pool
  std::vector<std::string> key_pools;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  void validate() const;
};

struct ViewBuildSummary {
  int written = 0;
  int skipped_sources = 0;  // images without a usable proposal or paste
  std::string shard_path;
};

ViewBuildSummary build_view_shards(const std::string& corpus_dir,
                                   const ViewBuildConfig& cfg,
                                   const std::string& shard_path);

// --- two-stage path: proposals file, then views --------------------------

struct ProposalRecord {
  std::string image_id;
  BoundingBox box;
  double score = 0.0;
};

// One selected proposal per train image that yields any candidate; images
// without a usable box are skipped. Deterministic under the seed.
std::vector<ProposalRecord> select_proposals(
    const std::string& corpus_dir, const proposals::ProposalGeneratorConfig& cfg,
    std::uint64_t seed);

void write_proposals_jsonl(const std::vector<ProposalRecord>& records,
                           const std::string& path);
std::vector<ProposalRecord> read_proposals_jsonl(const std::string& path);

// Like build_view_shards but pastes the boxes from a proposals file instead
// of generating them inline. Every image_id must exist in the manifest.
ViewBuildSummary build_views_from_proposals(
    const std::string& corpus_dir, const std::vector<ProposalRecord>& proposals,
    const ViewBuildConfig& cfg, const std::string& shard_path);

// --- frozen-feature probes ------------------------------------------------

struct ProbeConfig {
  int iterations = 300;
  double lr = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct ProbeReport {
  double accuracy = 0.0;
  int n_train = 0;
  int n_test = 0;
  int n_classes = 0;
};

// Freezes the encoder, embeds ground-truth boxes of the probe splits,
// trains a softmax regression on concatenated levels, and reports held-out
// accuracy. A class with no samples in either split is an error.
ProbeReport linear_probe(const encoder::Encoder& model,
                         const encoder::Params& params,
                         const std::string& corpus_dir, const ProbeConfig& cfg);

struct InvarianceReport {
  double same_mean = 0.0, same_std = 0.0;
  double diff_mean = 0.0, diff_std = 0.0;
  double gap = 0.0;  // same_mean - diff_mean
  std::array<double, encoder::kLevels> level_same{}, level_diff{}, level_gap{};
  int n_same_pairs = 0;
  int n_diff_pairs = 0;
};

// Mean cosine between embeddings of one foreground on different background
// pools versus embeddings of different foregrounds. Needs >= 2 pools and
// >= 2 probe instances.
InvarianceReport invariance_probe(const encoder::Encoder& model,
                                  const encoder::Params& params,
                                  const std::string& corpus_dir);

// Rebuilds an encoder pair from a checkpoint; expected_hash 0 skips the
// config-hash comparison.
encoder::EncoderPair load_encoder(const encoder::EncoderConfig& cfg,
                                  const std::string& ckpt_path,
                                  std::uint64_t expected_hash = 0);

// --- background-pool ablation ----------------------------------------------

struct AblationRowSpec {
  std::string name;
  std::vector<std::string> query_pools;
  std::vector<std::string> key_pools;
};

// single pool, all pools, disjoint query/key pools
std::vector<AblationRowSpec> default_ablation_rows();

struct AblationCell {
  std::string row;
  std::uint64_t seed = 0;
  double invariance_gap = 0.0;
  double probe_accuracy = 0.0;
  double final_loss = 0.0;
};

struct AblationConfig {
  trainer::TrainSettings settings;
  ViewBuildConfig views;
  ProbeConfig probe;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int budget_steps = 1000;
};

// One pretraining run per (row, seed) under a shared step budget, then both
// probes on the trained query encoder. Work files land under work_dir.
std::vector<AblationCell> ablation_backgrounds(
    const std::string& corpus_dir, const AblationConfig& cfg,
    const std::vector<AblationRowSpec>& rows, const std::string& work_dir);

std::string format_ablation_table(const std::vector<AblationCell>& cells);

// Cells as line-delimited JSON, one object per (row, seed).
void write_ablation_jsonl(const std::vector<AblationCell>& cells,
                          const std::string& path);
std::vector<AblationCell> read_ablation_jsonl(const std::string& path);

nlohmann::json to_json(const ProbeReport& r);
nlohmann::json to_json(const InvarianceReport& r);
nlohmann::json to_json(const AblationCell& c);

}  // namespace codo::evalsuite
