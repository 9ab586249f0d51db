#include "codo/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <string>

#include "codo/common.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
namespace rc = codo::runconfig;
using nlohmann::json;

namespace {

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path path = fs::temp_directory_path() / ("codo_cfg_" + name + ".json");
  std::ofstream out(path, std::ios::trunc);
  out << text;
  out.close();
  return path;
}

std::string message_of(const std::string& text) {
  try {
    rc::resolve(json::parse(text), {});
  } catch (const codo::ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("empty file resolves to pure defaults") {
  const auto path = write_config("empty", "");
  const rc::RunConfig cfg = rc::parse_and_validate(path.string(), {});
  CHECK(cfg.run_name == "run");
  CHECK(cfg.out_root == "runs");
  CHECK(cfg.seed == 0);
  CHECK(!cfg.deterministic);
  CHECK(cfg.corpus.n_images == 240);
  CHECK(cfg.corpus.image_size == 64);
  CHECK(cfg.views.n_viewsets == 2000);
  CHECK(cfg.train.encoder.embed_dim == 128);
  CHECK(cfg.train.train.epochs == 30);
  CHECK(cfg.train.loss.temperature == 0.2);
  CHECK(cfg.train.queue_capacity == 4096);
  CHECK(cfg.probe.iterations == 300);
  CHECK(cfg.ablation_seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(cfg.config_hash != 0);
  CHECK(cfg.views.config_hash == cfg.config_hash);
  CHECK(cfg.train.config_hash == cfg.config_hash);

  // no file at all behaves the same
  const rc::RunConfig bare = rc::parse_and_validate("", {});
  CHECK(bare.config_hash == cfg.config_hash);

  const auto ws = write_config("whitespace", "  \n\t\n");
  CHECK(rc::parse_and_validate(ws.string(), {}).config_hash == cfg.config_hash);
}

TEST_CASE("missing and malformed files are validation errors") {
  CHECK_THROWS_AS(rc::parse_and_validate("/nonexistent/cfg.json", {}),
                  codo::ValidationError);
  const auto path = write_config("broken", "{\"seed\": ");
  CHECK_THROWS_AS(rc::parse_and_validate(path.string(), {}),
                  codo::ValidationError);
}

TEST_CASE("unknown keys are all named in one error") {
  const std::string msg = message_of(R"({
    "txyz": 1,
    "corpus": {"zap": 2},
    "views": {"proposal": {"bogus": 3}},
    "seed": 5
  })");
  REQUIRE(!msg.empty());
  CHECK(msg.find("config.txyz") != std::string::npos);
  CHECK(msg.find("config.corpus.zap") != std::string::npos);
  CHECK(msg.find("config.views.proposal.bogus") != std::string::npos);
}

TEST_CASE("range violations accumulate instead of short-circuiting") {
  const std::string msg = message_of(R"({
    "train": {"n_keys": 2},
    "loss": {"temperature": 0.0},
    "views": {"jitter": {"iou_min": 1.5}}
  })");
  REQUIRE(!msg.empty());
  CHECK(msg.find("n_keys") != std::string::npos);
  CHECK(msg.find("temperature") != std::string::npos);
  CHECK(msg.find("iou_min") != std::string::npos);
}

TEST_CASE("two key views are the only alternative to one") {
  CHECK_NOTHROW(rc::resolve(json::parse(R"({"train": {"n_keys": 3}})"), {}));
  CHECK_THROWS_AS(rc::resolve(json::parse(R"({"train": {"n_keys": 2}})"), {}),
                  codo::ValidationError);
  CHECK_THROWS_AS(rc::resolve(json::parse(R"({"train": {"n_keys": 4}})"), {}),
                  codo::ValidationError);
}

TEST_CASE("type mismatches name the offending key") {
  const std::string msg = message_of(R"({
    "train": {"epochs": "thirty"},
    "encoder": {"stage_channels": [16, 32, 64]}
  })");
  REQUIRE(!msg.empty());
  CHECK(msg.find("config.train.epochs") != std::string::npos);
  CHECK(msg.find("config.encoder.stage_channels") != std::string::npos);
  CHECK(msg.find("array of 4") != std::string::npos);
}

TEST_CASE("flag overrides beat file values") {
  const json file = json::parse(
      R"({"seed": 3, "run_name": "from_file", "out_root": "file_root"})");
  rc::FlagOverrides flags;
  flags.seed = 11;
  flags.run_name = "from_flag";
  flags.deterministic = true;
  const rc::RunConfig cfg = rc::resolve(file, flags);
  CHECK(cfg.seed == 11);
  CHECK(cfg.run_name == "from_flag");
  CHECK(cfg.out_root == "file_root");
  CHECK(cfg.deterministic);
}

TEST_CASE("one seed feeds every stage and view geometry follows the encoder") {
  const json file = json::parse(R"({
    "seed": 9,
    "corpus": {"image_size": 32},
    "encoder": {"image_size": 32, "stem_channels": 4,
                "stage_channels": [4, 4, 8, 8], "fpn_channels": 8,
                "head_hidden": 16, "embed_dim": 8, "roi_size": 3},
    "train": {"n_keys": 3}
  })");
  const rc::RunConfig cfg = rc::resolve(file, {});
  CHECK(cfg.corpus.seed == 9);
  CHECK(cfg.views.seed == 9);
  CHECK(cfg.train.train.seed == 9);
  CHECK(cfg.views.view_size == 32);
  CHECK(cfg.views.n_keys == 3);
}

TEST_CASE("corpus and encoder image sizes must agree") {
  const std::string msg = message_of(R"({"corpus": {"image_size": 96}})");
  REQUIRE(!msg.empty());
  CHECK(msg.find("corpus.image_size") != std::string::npos);
}

TEST_CASE("config hash tracks substance, not run identity") {
  const rc::RunConfig base = rc::resolve(json::object(), {});

  rc::FlagOverrides renamed;
  renamed.run_name = "other";
  renamed.out_root = "elsewhere";
  renamed.deterministic = true;
  CHECK(rc::resolve(json::object(), renamed).config_hash == base.config_hash);

  CHECK(rc::resolve(json::parse(R"({"loss": {"temperature": 0.25}})"), {})
            .config_hash != base.config_hash);
  CHECK(rc::resolve(json::parse(R"({"seed": 1})"), {}).config_hash !=
        base.config_hash);
  CHECK(rc::resolve(json::parse(R"({"queue_capacity": 1024})"), {})
            .config_hash != base.config_hash);

  // stable across processes and runs: frozen canonical dump hash
  CHECK(rc::hash_config(base) == base.config_hash);
  CHECK(rc::resolve(json::object(), {}).config_hash == base.config_hash);
}

TEST_CASE("canonical dump spells out every resolved field") {
  const rc::RunConfig cfg = rc::resolve(json::object(), {});
  const json j = rc::canonical_json(cfg);
  for (const char* key :
       {"run_name", "out_root", "seed", "deterministic", "corpus", "views",
        "encoder", "train", "loss", "queue_capacity", "key_momentum", "probe",
        "ablation"})
    CHECK(j.contains(key));
  CHECK(j["train"]["lr_schedule"] == "cosine");
  CHECK(j["views"]["proposal"]["strategy"] == "energy_sampler");
  CHECK(j["encoder"]["stage_channels"].size() == 4);

  // a resolved dump parses back to the same hash
  const rc::RunConfig again = rc::resolve(j, {});
  CHECK(again.config_hash == cfg.config_hash);
}
