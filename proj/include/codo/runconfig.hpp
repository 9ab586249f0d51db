#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "codo/evalsuite.hpp"
#include "codo/trainer.hpp"
#include "json.hpp"

namespace codo::runconfig {

// Fully resolved run configuration: every module config plus run identity.
// Built from an optional JSON file and command-line overrides; always
// validated as a whole before any compute.
struct RunConfig {
  std::string run_name = "run";
  std::string out_root = "runs";
  std::uint64_t seed = 0;
  bool deterministic = false;

  corpus::SyntheticCorpusConfig corpus;
  evalsuite::ViewBuildConfig views;
  trainer::TrainSettings train;
  evalsuite::ProbeConfig probe;
  std::vector<std::uint64_t> ablation_seeds = {1, 2, 3};
  int ablation_budget = 1000;

  // FNV-1a over the canonical dump; recorded in every artifact. run_name,
  // out_root, and the loading mode do not change results, so they are not
  // part of the hash.
  std::uint64_t config_hash = 0;
};

struct FlagOverrides {
  std::optional<std::string> run_name;
  std::optional<std::string> out_root;
  std::optional<std::uint64_t> seed;
  std::optional<bool> deterministic;
};

// Resolved config as a JSON object with every field spelled out, suitable
// for hashing or echoing back to the user. Excludes config_hash itself.
nlohmann::json canonical_json(const RunConfig& cfg);

std::uint64_t hash_config(const RunConfig& cfg);

// Applies the file over the defaults, then the overrides, then validates
// everything at once. Raises ValidationError naming every unknown key,
// type mismatch, and out-of-range value in one message. An empty or
// all-whitespace file means "all defaults". Seed and view/train coupling
// (n_keys, image sizes) is reconciled before validation.
RunConfig parse_and_validate(const std::string& config_path,
                             const FlagOverrides& overrides);

// Same, from already-parsed JSON; config_path only labels error messages.
RunConfig resolve(const nlohmann::json& file, const FlagOverrides& overrides,
                  const std::string& label = "config");

}  // namespace codo::runconfig
