#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "museli/experiments.hpp"

using namespace museli;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const char* kCliPath = MUSELI_CLI_PATH;

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(kCliPath) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("museli_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to generate and train in well under a second per run.
ordered_json tiny_config() {
  ordered_json cfg = default_experiment_config();
  cfg["generate"]["num_languages"] = 2;
  cfg["generate"]["num_confusable_groups"] = 1;
  cfg["generate"]["feat_dim"] = 6;
  cfg["generate"]["max_duration_s"] = 2.0;
  cfg["generate"]["train_per_language"] = 6;
  cfg["generate"]["dev_per_language"] = 2;
  cfg["generate"]["test_per_language"] = 2;
  cfg["generate"]["low_resource_languages"] = 0;
  cfg["model"]["d_model"] = 8;
  cfg["model"]["num_heads"] = 2;
  cfg["model"]["num_speech_layers"] = 1;
  cfg["model"]["num_mm_layers"] = 2;
  cfg["model"]["conv_kernel_size"] = 3;
  cfg["model"]["ff_multiplier"] = 2;
  cfg["train"]["batch_size"] = 4;
  cfg["train"]["total_steps"] = 4;
  cfg["train"]["warmup_steps"] = 1;
  return cfg;
}

std::string tiny_overrides() {
  return "generate.num_languages=2 generate.num_confusable_groups=1 "
         "generate.feat_dim=6 generate.max_duration_s=2.0 "
         "generate.train_per_language=6 generate.dev_per_language=2 "
         "generate.test_per_language=2 generate.low_resource_languages=0 "
         "model.d_model=8 model.num_heads=2 model.num_speech_layers=1 "
         "model.num_mm_layers=2 model.conv_kernel_size=3 "
         "model.ff_multiplier=2 train.batch_size=4 train.total_steps=4 "
         "train.warmup_steps=1";
}

}  // namespace

TEST_CASE("experiment config resolution: defaults, overrides, flags") {
  ordered_json cfg = resolve_experiment_config(std::nullopt, {}, std::nullopt,
                                               std::nullopt);
  CHECK(cfg["generate"]["num_languages"] == 8);
  CHECK(cfg["generate"]["num_confusable_groups"] == 4);
  CHECK(cfg["model"]["d_model"] == 64);
  CHECK(cfg["train"]["total_steps"] == 3000);
  CHECK(cfg["train"]["peak_learning_rate"] == 3e-4);
  CHECK(cfg["evaluate"]["split"] == "test");

  cfg = resolve_experiment_config(std::nullopt, {"model.d_model=32"},
                                  std::nullopt, std::nullopt);
  CHECK(cfg["model"]["d_model"] == 32);

  cfg = resolve_experiment_config(std::nullopt, {}, 7, std::string("speech_only"));
  CHECK(cfg["generate"]["seed"] == 7);
  CHECK(cfg["train"]["seed"] == 7);
  CHECK(cfg["train"]["mode"] == "speech_only");

  try {
    resolve_experiment_config(std::nullopt, {"model.d_modle=32"}, std::nullopt,
                              std::nullopt);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("d_modle") != std::string::npos);
    CHECK(msg.find("d_model") != std::string::npos);  // lists valid keys
  }
  CHECK_THROWS_AS(resolve_experiment_config(std::nullopt, {"no_equals_sign"},
                                            std::nullopt, std::nullopt),
                  std::invalid_argument);
}

TEST_CASE("config file merges over the defaults and rejects unknown keys") {
  fs::path dir = temp_dir("config_file");
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"model":{"d_model":16},"train":{"total_steps":10}})";
  }
  ordered_json cfg = resolve_experiment_config(dir / "cfg.json", {},
                                               std::nullopt, std::nullopt);
  CHECK(cfg["model"]["d_model"] == 16);
  CHECK(cfg["train"]["total_steps"] == 10);
  CHECK(cfg["model"]["num_heads"] == 4);  // untouched default

  {
    std::ofstream f(dir / "bad.json");
    f << R"({"model":{"dmodel":16}})";
  }
  CHECK_THROWS_AS(resolve_experiment_config(dir / "bad.json", {}, std::nullopt,
                                            std::nullopt),
                  std::invalid_argument);
  CHECK_THROWS_AS(resolve_experiment_config(dir / "absent.json", {},
                                            std::nullopt, std::nullopt),
                  std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("generate refuses a non-empty output directory without force") {
  fs::path dir = temp_dir("gen_refuse");
  ordered_json cfg = tiny_config();
  cmd_generate(cfg, dir / "corpus", false);
  CHECK(fs::exists(dir / "corpus" / "manifest.jsonl"));
  CHECK(fs::exists(dir / "corpus" / "specs.json"));
  CHECK(fs::exists(dir / "corpus" / "generate_config.json"));
  CHECK_THROWS_AS(cmd_generate(cfg, dir / "corpus", false),
                  std::invalid_argument);
  cmd_generate(cfg, dir / "corpus", true);  // force allows overwrite

  CHECK_THROWS_AS(cmd_generate(cfg, dir / "no" / "such" / "parent", false),
                  std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("generation is byte-identical for the same seed") {
  fs::path dir = temp_dir("gen_determinism");
  ordered_json cfg = tiny_config();
  cmd_generate(cfg, dir / "a", false);
  cmd_generate(cfg, dir / "b", false);
  for (const char* name : {"manifest.jsonl", "specs.json"})
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  int features = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (entry.path().extension() != ".mslf") continue;
    ++features;
    CHECK(slurp(entry.path()) ==
          slurp(dir / "b" / fs::relative(entry.path(), dir / "a")));
  }
  CHECK(features == 20);  // 2 languages x (6 train + 2 dev + 2 test)

  ordered_json other = cfg;
  other["generate"]["seed"] = 1;
  cmd_generate(other, dir / "c", false);
  CHECK(slurp(dir / "a" / "manifest.jsonl") !=
        slurp(dir / "c" / "manifest.jsonl"));
  fs::remove_all(dir);
}

TEST_CASE("train and evaluate produce their artifacts") {
  fs::path dir = temp_dir("train_eval");
  ordered_json cfg = tiny_config();
  cmd_generate(cfg, dir / "corpus", false);
  cmd_train(cfg, dir / "corpus", dir / "run");
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "run" / "train_log.jsonl"));

  // one header line plus one line per step
  std::ifstream log(dir / "run" / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    if (lines == 0) {
      CHECK(j.contains("timestamp"));
    } else {
      CHECK(j.at("step") == lines);
      CHECK(j.contains("loss"));
      CHECK(j.contains("lr"));
    }
    ++lines;
  }
  CHECK(lines == 5);

  cmd_evaluate(cfg, dir / "corpus", dir / "run" / "checkpoint.bin",
               dir / "eval");
  CHECK(fs::exists(dir / "eval" / "report.json"));
  CHECK(fs::exists(dir / "eval" / "predictions.jsonl"));
  EvalReport report = load_report(dir / "eval" / "report.json");
  CHECK(report.confusion.rows() == 2);
  CHECK(report.confusion.sum() == 4);  // 2 test records per language
  CHECK(report.checkpoint_hash ==
        file_hash_hex(dir / "run" / "checkpoint.bin"));
  fs::remove_all(dir);
}

TEST_CASE("training honors the model's sequence limits") {
  fs::path dir = temp_dir("train_trim");
  ordered_json cfg = tiny_config();
  // recordings are up to 200 frames; the model accepts at most 100
  cfg["model"]["max_speech_frames"] = 100;
  cfg["model"]["max_text_tokens"] = 20;
  cmd_generate(cfg, dir / "corpus", false);
  cmd_train(cfg, dir / "corpus", dir / "run");
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  fs::remove_all(dir);
}

TEST_CASE("report requires both checkpoints") {
  fs::path dir = temp_dir("report_missing");
  ordered_json cfg = tiny_config();
  cmd_generate(cfg, dir / "corpus", false);
  CHECK_THROWS_AS(cmd_report(cfg, dir / "corpus", dir / "missing_mm.bin",
                             dir / "missing_sp.bin", dir / "out"),
                  std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("cli binary: exit codes and end-to-end flow") {
  REQUIRE(fs::exists(kCliPath));
  fs::path dir = temp_dir("binary");
  const std::string corpus = (dir / "corpus").string();
  const std::string run = (dir / "run").string();

  CHECK(run_cli("") == 2);              // missing subcommand
  CHECK(run_cli("frobnicate") == 2);    // unknown subcommand
  CHECK(run_cli("generate") == 2);      // missing --out
  CHECK(run_cli("generate --out " + corpus + " bogus.key=1") == 2);
  CHECK(run_cli("--help") == 0);

  CHECK(run_cli("generate --out " + corpus + " " + tiny_overrides()) == 0);
  CHECK(fs::exists(dir / "corpus" / "manifest.jsonl"));
  // refusing to clobber is an argument error
  CHECK(run_cli("generate --out " + corpus + " " + tiny_overrides()) == 2);
  CHECK(run_cli("generate --force --out " + corpus + " " +
                tiny_overrides()) == 0);

  CHECK(run_cli("train --corpus " + corpus + " --out " + run + " " +
                tiny_overrides()) == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));

  CHECK(run_cli("evaluate --corpus " + corpus + " --checkpoint " + run +
                "/checkpoint.bin --out " + (dir / "eval").string() + " " +
                tiny_overrides()) == 0);
  CHECK(fs::exists(dir / "eval" / "report.json"));

  // runtime failures (unreadable inputs) exit 1
  CHECK(run_cli("evaluate --corpus " + corpus + " --checkpoint " + run +
                "/absent.bin --out " + (dir / "eval2").string() + " " +
                tiny_overrides()) == 1);
  CHECK(run_cli("train --corpus " + (dir / "nowhere").string() + " --out " +
                (dir / "run2").string() + " " + tiny_overrides()) == 1);
  fs::remove_all(dir);
}
