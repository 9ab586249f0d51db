#include "codo/runconfig.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "codo/common.hpp"

namespace codo::runconfig {

using nlohmann::json;

namespace {

// Collects every problem instead of stopping at the first; the combined
// message names each offending key with its location.
struct Violations {
  std::vector<std::string> items;

  void add(const std::string& where, const std::string& what) {
    items.push_back(where + ": " + what);
  }
  void raise_if_any() const {
    if (items.empty()) return;
    std::string msg = "invalid run config:";
    for (const auto& item : items) msg += "\n  - " + item;
    throw ValidationError(msg);
  }
};

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> known, Violations* bad) {
  if (!j.is_object()) {
    bad->add(where, "expected an object");
    return;
  }
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok) bad->add(where + "." + key, "unknown key");
  }
}

template <typename T>
void fetch(const json& j, const std::string& where, const char* key, T* out,
           Violations* bad) {
  if (!j.is_object() || !j.contains(key)) return;
  try {
    j.at(key).get_to(*out);
  } catch (const json::exception& e) {
    bad->add(where + "." + key, e.what());
  }
}

template <typename T, std::size_t N>
void fetch_array(const json& j, const std::string& where, const char* key,
                 std::array<T, N>* out, Violations* bad) {
  if (!j.is_object() || !j.contains(key)) return;
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != N) {
    bad->add(where + "." + key,
             "expected an array of " + std::to_string(N) + " values");
    return;
  }
  try {
    for (std::size_t i = 0; i < N; ++i) a.at(i).get_to((*out)[i]);
  } catch (const json::exception& e) {
    bad->add(where + "." + key, e.what());
  }
}

// Enum-like strings parse through the module's own converter; a failure
// becomes one more collected violation.
template <typename Parse, typename Out>
void fetch_parsed(const json& j, const std::string& where, const char* key,
                  Parse parse, Out* out, Violations* bad) {
  if (!j.is_object() || !j.contains(key)) return;
  std::string s;
  try {
    j.at(key).get_to(s);
  } catch (const json::exception& e) {
    bad->add(where + "." + key, e.what());
    return;
  }
  try {
    *out = parse(s);
  } catch (const std::exception& e) {
    bad->add(where + "." + key, e.what());
  }
}

void sub_validate(const std::string& where, const std::function<void()>& fn,
                  Violations* bad) {
  try {
    fn();
  } catch (const ValidationError& e) {
    bad->add(where, e.what());
  } catch (const std::invalid_argument& e) {
    bad->add(where, e.what());
  }
}

}  // namespace

json canonical_json(const RunConfig& cfg) {
  json j;
  j["run_name"] = cfg.run_name;
  j["out_root"] = cfg.out_root;
  j["seed"] = cfg.seed;
  j["deterministic"] = cfg.deterministic;

  j["corpus"] = {{"n_foreground_classes", cfg.corpus.n_foreground_classes},
                 {"n_images", cfg.corpus.n_images},
                 {"probe_instances", cfg.corpus.probe_instances},
                 {"backgrounds_per_pool", cfg.corpus.backgrounds_per_pool},
                 {"image_size", cfg.corpus.image_size}};

  const auto& v = cfg.views;
  j["views"] = {
      {"n_viewsets", v.n_viewsets},
      {"proposal",
       {{"strategy", proposals::to_string(v.proposal.strategy)},
        {"min_box_fraction", v.proposal.min_box_fraction},
        {"max_box_fraction", v.proposal.max_box_fraction},
        {"candidates_per_image", v.proposal.candidates_per_image}}},
      {"paste",
       {{"scale_min", v.paste.scale_min},
        {"scale_max", v.paste.scale_max},
        {"aspect_min", v.paste.aspect_min},
        {"aspect_max", v.paste.aspect_max}}},
      {"jitter",
       {{"iou_min", v.jitter.iou_min},
        {"max_center_shift", v.jitter.max_center_shift},
        {"max_scale_delta", v.jitter.max_scale_delta},
        {"max_attempts", v.jitter.max_attempts}}},
      {"photo",
       {{"p_color_jitter", v.photo.p_color_jitter},
        {"brightness", v.photo.brightness},
        {"contrast", v.photo.contrast},
        {"saturation", v.photo.saturation},
        {"hue", v.photo.hue},
        {"p_grayscale", v.photo.p_grayscale},
        {"p_blur", v.photo.p_blur},
        {"p_hflip", v.photo.p_hflip}}},
      {"query_pools", v.query_pools},
      {"key_pools", v.key_pools}};

  const auto& e = cfg.train.encoder;
  j["encoder"] = {{"image_size", e.image_size},
                  {"stem_channels", e.stem_channels},
                  {"stage_channels", e.stage_channels},
                  {"fpn_channels", e.fpn_channels},
                  {"head_hidden", e.head_hidden},
                  {"embed_dim", e.embed_dim},
                  {"roi_size", e.roi_size}};

  const auto& t = cfg.train.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"base_lr", t.base_lr},
                {"momentum_sgd", t.momentum_sgd},
                {"weight_decay", t.weight_decay},
                {"epochs", t.epochs},
                {"lr_schedule", trainer::to_string(t.lr_schedule)},
                {"n_keys", t.n_keys},
                {"snapshot_every", t.snapshot_every}};

  j["loss"] = {{"temperature", cfg.train.loss.temperature},
               {"level_weights", cfg.train.loss.level_weights}};
  j["queue_capacity"] = cfg.train.queue_capacity;
  j["key_momentum"] = cfg.train.key_momentum;

  j["probe"] = {{"iterations", cfg.probe.iterations},
                {"lr", cfg.probe.lr},
                {"momentum", cfg.probe.momentum},
                {"weight_decay", cfg.probe.weight_decay}};

  j["ablation"] = {{"seeds", cfg.ablation_seeds},
                   {"budget_steps", cfg.ablation_budget}};
  return j;
}

std::uint64_t hash_config(const RunConfig& cfg) {
  json j = canonical_json(cfg);
  // where a run lives and how batches are loaded do not affect its numbers
  j.erase("run_name");
  j.erase("out_root");
  j.erase("deterministic");
  return fnv1a(j.dump());
}

RunConfig resolve(const json& file, const FlagOverrides& overrides,
                  const std::string& label) {
  RunConfig cfg;
  Violations bad;

  check_keys(file, label,
             {"run_name", "out_root", "seed", "deterministic", "corpus",
              "views", "encoder", "train", "loss", "queue_capacity",
              "key_momentum", "probe", "ablation"},
             &bad);
  if (!file.is_object()) {
    bad.raise_if_any();
    return cfg;
  }

  fetch(file, label, "run_name", &cfg.run_name, &bad);
  fetch(file, label, "out_root", &cfg.out_root, &bad);
  fetch(file, label, "seed", &cfg.seed, &bad);
  fetch(file, label, "deterministic", &cfg.deterministic, &bad);

  if (file.contains("corpus")) {
    const json& c = file.at("corpus");
    const std::string where = label + ".corpus";
    check_keys(c, where,
               {"n_foreground_classes", "n_images", "probe_instances",
                "backgrounds_per_pool", "image_size"},
               &bad);
    fetch(c, where, "n_foreground_classes", &cfg.corpus.n_foreground_classes, &bad);
    fetch(c, where, "n_images", &cfg.corpus.n_images, &bad);
    fetch(c, where, "probe_instances", &cfg.corpus.probe_instances, &bad);
    fetch(c, where, "backgrounds_per_pool", &cfg.corpus.backgrounds_per_pool, &bad);
    fetch(c, where, "image_size", &cfg.corpus.image_size, &bad);
  }

  if (file.contains("views")) {
    const json& v = file.at("views");
    const std::string where = label + ".views";
    check_keys(v, where,
               {"n_viewsets", "proposal", "paste", "jitter", "photo",
                "query_pools", "key_pools"},
               &bad);
    fetch(v, where, "n_viewsets", &cfg.views.n_viewsets, &bad);
    if (v.is_object() && v.contains("proposal")) {
      const json& p = v.at("proposal");
      const std::string pw = where + ".proposal";
      check_keys(p, pw,
                 {"strategy", "min_box_fraction", "max_box_fraction",
                  "candidates_per_image"},
                 &bad);
      fetch_parsed(p, pw, "strategy", proposals::strategy_from_string,
                   &cfg.views.proposal.strategy, &bad);
      fetch(p, pw, "min_box_fraction", &cfg.views.proposal.min_box_fraction, &bad);
      fetch(p, pw, "max_box_fraction", &cfg.views.proposal.max_box_fraction, &bad);
      fetch(p, pw, "candidates_per_image", &cfg.views.proposal.candidates_per_image,
            &bad);
    }
    if (v.is_object() && v.contains("paste")) {
      const json& p = v.at("paste");
      const std::string pw = where + ".paste";
      check_keys(p, pw, {"scale_min", "scale_max", "aspect_min", "aspect_max"},
                 &bad);
      fetch(p, pw, "scale_min", &cfg.views.paste.scale_min, &bad);
      fetch(p, pw, "scale_max", &cfg.views.paste.scale_max, &bad);
      fetch(p, pw, "aspect_min", &cfg.views.paste.aspect_min, &bad);
      fetch(p, pw, "aspect_max", &cfg.views.paste.aspect_max, &bad);
    }
    if (v.is_object() && v.contains("jitter")) {
      const json& p = v.at("jitter");
      const std::string pw = where + ".jitter";
      check_keys(p, pw,
                 {"iou_min", "max_center_shift", "max_scale_delta", "max_attempts"},
                 &bad);
      fetch(p, pw, "iou_min", &cfg.views.jitter.iou_min, &bad);
      fetch(p, pw, "max_center_shift", &cfg.views.jitter.max_center_shift, &bad);
      fetch(p, pw, "max_scale_delta", &cfg.views.jitter.max_scale_delta, &bad);
      fetch(p, pw, "max_attempts", &cfg.views.jitter.max_attempts, &bad);
    }
    if (v.is_object() && v.contains("photo")) {
      const json& p = v.at("photo");
      const std::string pw = where + ".photo";
      check_keys(p, pw,
                 {"p_color_jitter", "brightness", "contrast", "saturation", "hue",
                  "p_grayscale", "p_blur", "p_hflip"},
                 &bad);
      fetch(p, pw, "p_color_jitter", &cfg.views.photo.p_color_jitter, &bad);
      fetch(p, pw, "brightness", &cfg.views.photo.brightness, &bad);
      fetch(p, pw, "contrast", &cfg.views.photo.contrast, &bad);
      fetch(p, pw, "saturation", &cfg.views.photo.saturation, &bad);
      fetch(p, pw, "hue", &cfg.views.photo.hue, &bad);
      fetch(p, pw, "p_grayscale", &cfg.views.photo.p_grayscale, &bad);
      fetch(p, pw, "p_blur", &cfg.views.photo.p_blur, &bad);
      fetch(p, pw, "p_hflip", &cfg.views.photo.p_hflip, &bad);
    }
    fetch(v, where, "query_pools", &cfg.views.query_pools, &bad);
    fetch(v, where, "key_pools", &cfg.views.key_pools, &bad);
  }

  if (file.contains("encoder")) {
    const json& e = file.at("encoder");
    const std::string where = label + ".encoder";
    check_keys(e, where,
               {"image_size", "stem_channels", "stage_channels", "fpn_channels",
                "head_hidden", "embed_dim", "roi_size"},
               &bad);
    fetch(e, where, "image_size", &cfg.train.encoder.image_size, &bad);
    fetch(e, where, "stem_channels", &cfg.train.encoder.stem_channels, &bad);
    fetch_array(e, where, "stage_channels", &cfg.train.encoder.stage_channels, &bad);
    fetch(e, where, "fpn_channels", &cfg.train.encoder.fpn_channels, &bad);
    fetch(e, where, "head_hidden", &cfg.train.encoder.head_hidden, &bad);
    fetch(e, where, "embed_dim", &cfg.train.encoder.embed_dim, &bad);
    fetch(e, where, "roi_size", &cfg.train.encoder.roi_size, &bad);
  }

  if (file.contains("train")) {
    const json& t = file.at("train");
    const std::string where = label + ".train";
    check_keys(t, where,
               {"batch_size", "base_lr", "momentum_sgd", "weight_decay", "epochs",
                "lr_schedule", "n_keys", "snapshot_every"},
               &bad);
    fetch(t, where, "batch_size", &cfg.train.train.batch_size, &bad);
    fetch(t, where, "base_lr", &cfg.train.train.base_lr, &bad);
    fetch(t, where, "momentum_sgd", &cfg.train.train.momentum_sgd, &bad);
    fetch(t, where, "weight_decay", &cfg.train.train.weight_decay, &bad);
    fetch(t, where, "epochs", &cfg.train.train.epochs, &bad);
    fetch_parsed(t, where, "lr_schedule", trainer::lr_schedule_from_string,
                 &cfg.train.train.lr_schedule, &bad);
    fetch(t, where, "n_keys", &cfg.train.train.n_keys, &bad);
    fetch(t, where, "snapshot_every", &cfg.train.train.snapshot_every, &bad);
  }

  if (file.contains("loss")) {
    const json& l = file.at("loss");
    const std::string where = label + ".loss";
    check_keys(l, where, {"temperature", "level_weights"}, &bad);
    fetch(l, where, "temperature", &cfg.train.loss.temperature, &bad);
    fetch_array(l, where, "level_weights", &cfg.train.loss.level_weights, &bad);
  }

  fetch(file, label, "queue_capacity", &cfg.train.queue_capacity, &bad);
  fetch(file, label, "key_momentum", &cfg.train.key_momentum, &bad);

  if (file.contains("probe")) {
    const json& p = file.at("probe");
    const std::string where = label + ".probe";
    check_keys(p, where, {"iterations", "lr", "momentum", "weight_decay"}, &bad);
    fetch(p, where, "iterations", &cfg.probe.iterations, &bad);
    fetch(p, where, "lr", &cfg.probe.lr, &bad);
    fetch(p, where, "momentum", &cfg.probe.momentum, &bad);
    fetch(p, where, "weight_decay", &cfg.probe.weight_decay, &bad);
  }

  if (file.contains("ablation")) {
    const json& a = file.at("ablation");
    const std::string where = label + ".ablation";
    check_keys(a, where, {"seeds", "budget_steps"}, &bad);
    fetch(a, where, "seeds", &cfg.ablation_seeds, &bad);
    fetch(a, where, "budget_steps", &cfg.ablation_budget, &bad);
  }

  if (overrides.run_name) cfg.run_name = *overrides.run_name;
  if (overrides.out_root) cfg.out_root = *overrides.out_root;
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.deterministic) cfg.deterministic = *overrides.deterministic;

  // one run seed feeds every stage; view geometry follows the encoder
  cfg.corpus.seed = cfg.seed;
  cfg.views.seed = cfg.seed;
  cfg.train.train.seed = cfg.seed;
  cfg.views.n_keys = cfg.train.train.n_keys;
  cfg.views.view_size = cfg.train.encoder.image_size;

  sub_validate(label + ".corpus", [&] { cfg.corpus.validate(); }, &bad);
  sub_validate(label + ".views", [&] { cfg.views.validate(); }, &bad);
  sub_validate(label, [&] { cfg.train.validate(); }, &bad);
  if (cfg.corpus.image_size != cfg.train.encoder.image_size)
    bad.add(label + ".corpus.image_size",
            "is " + std::to_string(cfg.corpus.image_size) +
                " but encoder.image_size is " +
                std::to_string(cfg.train.encoder.image_size) +
                "; pasted views must match the encoder input");
  if (cfg.probe.iterations < 1)
    bad.add(label + ".probe.iterations", "must be >= 1");
  if (!(cfg.probe.lr > 0.0)) bad.add(label + ".probe.lr", "must be positive");
  if (!(cfg.probe.momentum >= 0.0 && cfg.probe.momentum < 1.0))
    bad.add(label + ".probe.momentum", "must lie in [0, 1)");
  if (cfg.probe.weight_decay < 0.0)
    bad.add(label + ".probe.weight_decay", "must be >= 0");
  if (cfg.ablation_seeds.empty())
    bad.add(label + ".ablation.seeds", "must name at least one seed");
  if (cfg.ablation_budget < 1)
    bad.add(label + ".ablation.budget_steps", "must be >= 1");

  bad.raise_if_any();

  cfg.config_hash = hash_config(cfg);
  cfg.views.config_hash = cfg.config_hash;
  cfg.train.config_hash = cfg.config_hash;
  return cfg;
}

RunConfig parse_and_validate(const std::string& config_path,
                             const FlagOverrides& overrides) {
  if (config_path.empty()) return resolve(json::object(), overrides);
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw ValidationError("config file not found: " + config_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    return resolve(json::object(), overrides, config_path);
  json file;
  try {
    file = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(config_path + ": not valid JSON: " + e.what());
  }
  return resolve(file, overrides, config_path);
}

}  // namespace codo::runconfig
