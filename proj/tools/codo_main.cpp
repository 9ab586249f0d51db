#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "codo/common.hpp"
#include "codo/corpus.hpp"
#include "codo/evalsuite.hpp"
#include "codo/plots.hpp"
#include "codo/runconfig.hpp"
#include "codo/shards.hpp"
#include "codo/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
namespace ev = codo::evalsuite;
namespace rc = codo::runconfig;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration file");
    seed_opt = sub->add_option("--seed", seed, "run seed (overrides the file)");
  }

  rc::RunConfig resolve() const {
    rc::FlagOverrides flags;
    if (seed_opt && seed_opt->count()) flags.seed = seed;
    return rc::parse_and_validate(config_path, flags);
  }
};

bool env_deterministic() {
  const char* v = std::getenv("CODO_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

void emit(const json& j) { std::printf("%s\n", j.dump(2).c_str()); }

std::vector<ev::AblationRowSpec> read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw codo::ValidationError("matrix file not found: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw codo::ValidationError(path + ": not valid JSON: " + e.what());
  }
  if (!j.is_array() || j.empty())
    throw codo::ValidationError(path + ": matrix must be a non-empty array");
  std::vector<ev::AblationRowSpec> rows;
  for (const auto& item : j) {
    ev::AblationRowSpec row;
    try {
      row.name = item.at("name").get<std::string>();
      if (item.contains("query_pools"))
        row.query_pools = item.at("query_pools").get<std::vector<std::string>>();
      if (item.contains("key_pools"))
        row.key_pools = item.at("key_pools").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw codo::ValidationError(path + ": bad matrix row: " + e.what());
    }
    if (row.name.empty())
      throw codo::ValidationError(path + ": matrix row without a name");
    rows.push_back(std::move(row));
  }
  return rows;
}

int run(int argc, char** argv) {
  CLI::App app{"object-level contrastive pretraining on synthetic corpora"};
  app.require_subcommand(1);

  // --- generate-corpus ---
  auto* corpus_cmd = app.add_subcommand(
      "generate-corpus", "render the synthetic glyph/texture corpus");
  CommonFlags corpus_flags;
  corpus_flags.attach(corpus_cmd);
  std::string corpus_out;
  corpus_cmd->add_option("--out", corpus_out, "corpus directory")->required();
  corpus_cmd->callback([&] {
    const auto cfg = corpus_flags.resolve();
    const auto summary = codo::corpus::generate_corpus(cfg.corpus, corpus_out);
    emit({{"n_train", summary.n_train},
          {"n_probe_renders", summary.n_probe_renders},
          {"n_backgrounds", summary.n_backgrounds},
          {"manifest", summary.manifest_path},
          {"config_hash", codo::hash_hex(cfg.config_hash)}});
  });

  // --- generate-proposals ---
  auto* prop_cmd = app.add_subcommand(
      "generate-proposals", "select one proposal box per pretraining image");
  CommonFlags prop_flags;
  prop_flags.attach(prop_cmd);
  std::string prop_in, prop_out, prop_strategy;
  prop_cmd->add_option("--input-dir", prop_in, "corpus directory")->required();
  prop_cmd->add_option("--output", prop_out, "proposals record file")->required();
  prop_cmd->add_option("--strategy", prop_strategy,
                       "energy_sampler or graph_segmentation");
  prop_cmd->callback([&] {
    auto cfg = prop_flags.resolve();
    if (!prop_strategy.empty())
      cfg.views.proposal.strategy =
          codo::proposals::strategy_from_string(prop_strategy);
    const auto records =
        ev::select_proposals(prop_in, cfg.views.proposal, cfg.seed);
    ev::write_proposals_jsonl(records, prop_out);
    emit({{"written", records.size()}, {"path", prop_out}});
  });

  // --- make-views ---
  auto* views_cmd = app.add_subcommand(
      "make-views", "composite paste-jitter view shards from proposals");
  CommonFlags views_flags;
  views_flags.attach(views_cmd);
  std::string views_props, views_corpus, views_out;
  std::vector<std::string> views_pools;
  int views_keys = 0, views_count = 0;
  views_cmd->add_option("--proposals", views_props, "proposals record file")
      ->required();
  views_cmd->add_option("--corpus", views_corpus,
                        "corpus directory holding the source images")
      ->required();
  views_cmd->add_option("--out", views_out, "shard output directory")->required();
  views_cmd->add_option("--pools", views_pools,
                        "background pool names (comma separated)")
      ->delimiter(',');
  auto* keys_opt =
      views_cmd->add_option("--n-keys", views_keys, "key views per query (1 or 3)");
  auto* count_opt =
      views_cmd->add_option("--count", views_count, "number of viewsets");
  views_cmd->callback([&] {
    const auto cfg = views_flags.resolve();
    ev::ViewBuildConfig vb = cfg.views;
    if (!views_pools.empty()) {
      vb.query_pools = views_pools;
      vb.key_pools = views_pools;
    }
    if (keys_opt->count()) vb.n_keys = views_keys;
    if (count_opt->count()) vb.n_viewsets = views_count;
    const auto records = ev::read_proposals_jsonl(views_props);
    fs::create_directories(views_out);
    const std::string shard =
        (fs::path(views_out) /
         ("views-00000" + std::string(codo::shards::kShardExtension)))
            .string();
    const auto summary =
        ev::build_views_from_proposals(views_corpus, records, vb, shard);
    emit({{"written", summary.written},
          {"skipped_sources", summary.skipped_sources},
          {"shard", summary.shard_path},
          {"config_hash", codo::hash_hex(cfg.config_hash)}});
  });

  // --- pretrain ---
  auto* train_cmd =
      app.add_subcommand("pretrain", "momentum-contrast pretraining on shards");
  CommonFlags train_flags;
  train_flags.attach(train_cmd);
  std::string train_shards, train_out, train_resume;
  bool train_det = false;
  train_cmd->add_option("--shards", train_shards, "view shard directory")
      ->required();
  train_cmd->add_option("--out", train_out, "run output directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
  train_cmd->add_flag("--deterministic", train_det,
                      "synchronous batch loading, bit-reproducible");
  train_cmd->callback([&] {
    const auto cfg = train_flags.resolve();
    const bool det = train_det || cfg.deterministic || env_deterministic();
    const auto result = codo::trainer::run_pretraining(
        cfg.train, train_shards, train_out, train_resume, det);
    emit({{"final_checkpoint", result.final_checkpoint},
          {"steps_run", result.steps_run},
          {"final_loss", result.final_loss},
          {"config_hash", codo::hash_hex(cfg.config_hash)}});
  });

  // --- probe ---
  auto* probe_cmd = app.add_subcommand(
      "probe", "linear classification on frozen embeddings");
  CommonFlags probe_flags;
  probe_flags.attach(probe_cmd);
  std::string probe_ckpt, probe_corpus;
  probe_cmd->add_option("--ckpt", probe_ckpt, "encoder checkpoint")->required();
  probe_cmd->add_option("--corpus", probe_corpus, "corpus directory")->required();
  probe_cmd->callback([&] {
    const auto cfg = probe_flags.resolve();
    const std::uint64_t expected =
        probe_flags.config_path.empty() ? 0 : cfg.config_hash;
    const auto pair = ev::load_encoder(cfg.train.encoder, probe_ckpt, expected);
    const codo::encoder::Encoder model(cfg.train.encoder);
    emit(ev::to_json(
        ev::linear_probe(model, pair.query, probe_corpus, cfg.probe)));
  });

  // --- eval-invariance ---
  auto* inv_cmd = app.add_subcommand(
      "eval-invariance", "background-invariance gap of frozen embeddings");
  CommonFlags inv_flags;
  inv_flags.attach(inv_cmd);
  std::string inv_ckpt, inv_corpus, inv_out;
  inv_cmd->add_option("--ckpt", inv_ckpt, "encoder checkpoint")->required();
  inv_cmd->add_option("--corpus", inv_corpus, "corpus directory")->required();
  inv_cmd->add_option("--out", inv_out, "report file (JSON)");
  inv_cmd->callback([&] {
    const auto cfg = inv_flags.resolve();
    const std::uint64_t expected =
        inv_flags.config_path.empty() ? 0 : cfg.config_hash;
    const auto pair = ev::load_encoder(cfg.train.encoder, inv_ckpt, expected);
    const codo::encoder::Encoder model(cfg.train.encoder);
    const auto report = ev::invariance_probe(model, pair.query, inv_corpus);
    const json j = ev::to_json(report);
    if (!inv_out.empty()) {
      std::ofstream out(inv_out, std::ios::trunc);
      if (!out) throw codo::DataFormatError("cannot write " + inv_out);
      out << j.dump(2) << '\n';
    }
    emit(j);
  });

  // --- ablate ---
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "background-pool ablation: train per row, probe, tabulate");
  CommonFlags ablate_flags;
  ablate_flags.attach(ablate_cmd);
  std::string ablate_corpus, ablate_out, ablate_matrix;
  int ablate_budget = 0;
  ablate_cmd->add_option("--corpus", ablate_corpus, "corpus directory")
      ->required();
  ablate_cmd->add_option("--out", ablate_out, "report output directory")
      ->required();
  ablate_cmd->add_option("--matrix", ablate_matrix,
                         "JSON array of rows (name, query_pools, key_pools)");
  auto* budget_opt = ablate_cmd->add_option(
      "--budget", ablate_budget, "training steps per cell");
  ablate_cmd->callback([&] {
    const auto cfg = ablate_flags.resolve();
    ev::AblationConfig ac;
    ac.settings = cfg.train;
    ac.views = cfg.views;
    ac.probe = cfg.probe;
    ac.seeds = cfg.ablation_seeds;
    ac.budget_steps = budget_opt->count() ? ablate_budget : cfg.ablation_budget;
    const auto rows = ablate_matrix.empty() ? ev::default_ablation_rows()
                                            : read_matrix(ablate_matrix);
    fs::create_directories(ablate_out);
    const auto cells = ev::ablation_backgrounds(
        ablate_corpus, ac, rows, (fs::path(ablate_out) / "work").string());
    ev::write_ablation_jsonl(cells,
                             (fs::path(ablate_out) / "cells.jsonl").string());
    const std::string table = ev::format_ablation_table(cells);
    std::ofstream out(fs::path(ablate_out) / "table.txt", std::ios::trunc);
    out << table;
    out.close();
    std::printf("%s", table.c_str());
  });

  // --- plot ---
  auto* plot_cmd = app.add_subcommand(
      "plot", "render loss curves and ablation charts from run records");
  std::string plot_metrics, plot_cells, plot_out;
  plot_cmd->add_option("--metrics", plot_metrics, "metrics.jsonl from pretrain");
  plot_cmd->add_option("--ablation", plot_cells, "cells.jsonl from ablate");
  plot_cmd->add_option("--out", plot_out, "output directory")->required();
  plot_cmd->callback([&] {
    fs::create_directories(plot_out);
    json report = json::object();
    if (!plot_metrics.empty()) {
      const auto points = codo::plots::read_metrics_jsonl(plot_metrics);
      const std::string path = (fs::path(plot_out) / "loss_curve.svg").string();
      if (codo::plots::write_loss_curve_svg(points, path))
        report["loss_curve"] = path;
      else
        std::fprintf(stderr, "codo: no metrics records, skipping loss curve\n");
    }
    if (!plot_cells.empty()) {
      const auto cells = ev::read_ablation_jsonl(plot_cells);
      const std::string gap_path =
          (fs::path(plot_out) / "invariance_gap.svg").string();
      const std::string table_path =
          (fs::path(plot_out) / "probe_table.txt").string();
      if (codo::plots::write_ablation_gap_svg(cells, gap_path))
        report["invariance_gap"] = gap_path;
      if (codo::plots::write_probe_table(cells, table_path))
        report["probe_table"] = table_path;
      if (cells.empty())
        std::fprintf(stderr, "codo: no ablation cells, skipping charts\n");
    }
    if (plot_metrics.empty() && plot_cells.empty())
      std::fprintf(stderr, "codo: nothing to plot\n");
    emit(report);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const codo::ValidationError& e) {
    std::fprintf(stderr, "codo: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "codo: %s\n", e.what());
    return 2;
  } catch (const codo::DataFormatError& e) {
    std::fprintf(stderr, "codo: %s\n", e.what());
    return 4;
  } catch (const codo::CheckpointError& e) {
    std::fprintf(stderr, "codo: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "codo: %s\n", e.what());
    return 3;
  }
}
