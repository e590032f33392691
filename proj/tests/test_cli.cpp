#include "trajrec/cli.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "trajrec/config.hpp"
#include "trajrec/errors.hpp"
#include "trajrec/model.hpp"

using namespace trajrec;
namespace fs = std::filesystem;

namespace {

struct ScopedCwd {
  fs::path old;
  explicit ScopedCwd(const fs::path& to) : old(fs::current_path()) {
    fs::current_path(to);
  }
  ~ScopedCwd() { fs::current_path(old); }
};

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& path) {
  std::ifstream f(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

const char* kToyConfig = R"({
  "dim": 16, "attn_heads": 2, "encoder_layers": 1, "decoder_layers": 1,
  "gat_layers": 1, "gat_heads": 2, "ffn_dim": 32,
  "grid_rows": 3, "grid_cols": 3, "synth_count": 20,
  "walk_min_segments": 3, "walk_max_segments": 5,
  "keep_prob": 0.4, "epochs": 1, "batch": 8, "seed": 42,
  "network": "data/network.csv", "input": "data/raw.jsonl",
  "dataset_dir": "prepared", "checkpoint": "run/model.ckpt"
})";

// Runs the whole pipeline with relative paths inside `root`.
void run_pipeline(const fs::path& root) {
  fs::create_directories(root);
  ScopedCwd cwd(root);
  std::ofstream("config.json") << kToyConfig;

  CHECK(run_cli({"trajrec", "synth", "--config", "config.json", "--out",
                 "data"}) == 0);
  CHECK(run_cli({"trajrec", "prepare", "--config", "config.json", "--out",
                 "prepared"}) == 0);
  CHECK(run_cli({"trajrec", "train", "--config", "config.json", "--out",
                 "run"}) == 0);
  CHECK(run_cli({"trajrec", "eval", "--config", "config.json", "--out",
                 "run"}) == 0);
  CHECK(run_cli({"trajrec", "recover", "--config", "config.json", "--out",
                 "run", "--set", "input=prepared/test_input.jsonl"}) == 0);
  CHECK(run_cli({"trajrec", "simeval", "--config", "config.json", "--out",
                 "run", "--ks", "1"}) == 0);
}

}  // namespace

TEST_CASE("run config defaults mirror the published setup") {
  RunConfig cfg;
  CHECK(cfg.dim == 256);
  CHECK(cfg.gat_layers == 2);
  CHECK(cfg.encoder_layers == 2);
  CHECK(cfg.decoder_layers == 1);
  CHECK(cfg.attn_heads == 8);
  CHECK(cfg.lambda_ratio == 1.0);
  CHECK(cfg.eta_m == 400.0);
  CHECK(cfg.gamma_m == 30.0);
  CHECK(cfg.lr == 1e-3);
  CHECK(cfg.batch == 64);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.keep_prob == 0.125);
  CHECK(cfg.eps_tau_s == 15.0);
  CHECK(cfg.clip_norm == 5.0);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("run config round-trips and rejects unknown keys") {
  RunConfig cfg;
  cfg.dim = 64;
  cfg.network = "net.csv";
  cfg.vanilla_attention = true;
  RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.dim == 64);
  CHECK(back.network == "net.csv");
  CHECK(back.vanilla_attention == true);
  CHECK(back.to_json() == cfg.to_json());

  CHECK_THROWS_AS(RunConfig::from_json("{\"dmi\": 64}"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_json("[1,2]"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_json("{\"dim\": \"big\"}"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/c.json"), DataError);
}

TEST_CASE("set overrides parse typed values") {
  RunConfig cfg;
  cfg.set("dim=128");
  CHECK(cfg.dim == 128);
  cfg.set("keep_prob=0.25");
  CHECK(cfg.keep_prob == 0.25);
  cfg.set("vanilla_attention=true");
  CHECK(cfg.vanilla_attention);
  cfg.set("network=paths/are strings.csv");
  CHECK(cfg.network == "paths/are strings.csv");
  cfg.set("network=\"quoted.csv\"");
  CHECK(cfg.network == "quoted.csv");

  CHECK_THROWS_AS(cfg.set("no_equals"), ParseError);
  CHECK_THROWS_AS(cfg.set("=5"), ParseError);
  CHECK_THROWS_AS(cfg.set("typo_key=5"), ParseError);
}

TEST_CASE("run config validation catches bad values") {
  RunConfig cfg;
  cfg.keep_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = RunConfig{};
  cfg.attn_heads = 3;  // does not divide 256
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = RunConfig{};
  cfg.walk_min_segments = 9;
  cfg.walk_max_segments = 3;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("the cli pipeline runs end to end") {
  testutil::TempDir dir("cli_pipeline");
  run_pipeline(dir.path);
  const fs::path root(dir.path);

  CHECK(fs::exists(root / "data/network.csv"));
  CHECK(fs::exists(root / "data/truth.jsonl"));
  CHECK(fs::exists(root / "prepared/train_input.jsonl"));
  CHECK(fs::exists(root / "run/model.ckpt"));
  CHECK(fs::exists(root / "run/train_manifest.json"));

  // Log has the documented header and one row per epoch.
  std::ifstream log(root / "run/train_log.csv");
  std::string header;
  REQUIRE(std::getline(log, header));
  CHECK(header == "epoch,train_loss,val_recall,val_accuracy,val_mae");
  CHECK(line_count(root / "run/train_log.csv") == 2);

  // Split sizes follow 7:2:1 on 20 trajectories.
  auto manifest = nlohmann::json::parse(slurp(root / "prepared/prepare_manifest.json"));
  CHECK(manifest["outputs"]["train"] == 14);
  CHECK(manifest["outputs"]["valid"] == 4);
  CHECK(manifest["outputs"]["test"] == 2);
  CHECK(manifest["outputs"]["interval_ratio"].get<double>() > 1.0);

  // Eval report carries every metric field.
  auto report = nlohmann::json::parse(slurp(root / "run/eval_test.json"));
  for (const char* key :
       {"accuracy", "mae_m", "rmse_m", "recall", "precision", "f1", "count"})
    CHECK(report.contains(key));

  // recover emitted one output line per input line.
  CHECK(line_count(root / "run/recovered.jsonl") ==
        line_count(root / "prepared/test_input.jsonl"));

  auto sim = nlohmann::json::parse(slurp(root / "run/simeval.json"));
  CHECK(sim["recovered"].size() == 1);
  CHECK(sim["raw_input"].size() == 1);
}

TEST_CASE("identical config and seed reproduce every artifact byte for byte") {
  testutil::TempDir a("cli_det_a"), b("cli_det_b");
  run_pipeline(a.path);
  run_pipeline(b.path);

  for (const char* rel :
       {"data/network.csv", "data/truth.jsonl", "data/raw.jsonl",
        "data/synth_manifest.json", "prepared/train_input.jsonl",
        "prepared/train_target.jsonl", "prepared/test_input.jsonl",
        "prepared/prepare_manifest.json", "run/train_log.csv",
        "run/model.ckpt", "run/train_manifest.json", "run/eval_test.json",
        "run/recovered.jsonl", "run/simeval.json"}) {
    INFO(rel);
    CHECK(slurp(fs::path(a.path) / rel) == slurp(fs::path(b.path) / rel));
  }
}

TEST_CASE("exit codes map the error taxonomy") {
  testutil::TempDir dir("cli_errors");
  ScopedCwd cwd(dir.path);
  std::ofstream("config.json") << kToyConfig;

  // Usage errors from the argument parser.
  CHECK(run_cli({"trajrec"}) == 2);
  CHECK(run_cli({"trajrec", "frobnicate"}) == 2);
  CHECK(run_cli({"trajrec", "--help"}) == 0);

  // Validation: out-of-range config value.
  CHECK(run_cli({"trajrec", "synth", "--config", "config.json", "--set",
                 "keep_prob=7"}) == 2);
  // Parse: unknown config key.
  CHECK(run_cli({"trajrec", "synth", "--config", "config.json", "--set",
                 "no_such_key=1"}) == 3);
  // Data: missing input files.
  CHECK(run_cli({"trajrec", "prepare", "--config", "config.json"}) == 3);
  CHECK(run_cli({"trajrec", "eval", "--config", "config.json"}) == 3);
  // Validation: command preconditions.
  CHECK(run_cli({"trajrec", "eval"}) == 2);
}

TEST_CASE("training divergence surfaces as exit code 4") {
  testutil::TempDir dir("cli_divergence");
  run_pipeline(dir.path);
  ScopedCwd cwd(dir.path);

  // Poison the checkpoint and resume from it: the first batch loss is
  // NaN, which must abort with the divergence exit code.
  RoadNetwork net = RoadNetwork::load("data/network.csv");
  Model model = Model::load("run/model.ckpt", net);
  model.store.at("head.emb.w").value.data[0] =
      std::numeric_limits<double>::quiet_NaN();
  model.save("run/model.ckpt");

  CHECK(run_cli({"trajrec", "train", "--config", "config.json", "--out", "run",
                 "--resume", "run/model.ckpt"}) == 4);
}
