#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "museli/experiments.hpp"

namespace {

struct CommonArgs {
  std::optional<std::string> config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<std::string> mode;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
  cmd->add_option("--config", args.config_path, "experiment config JSON file");
  auto* out = cmd->add_option("--out", args.out_dir, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", args.seed, "seed for generation and training");
  cmd->add_option("--mode", args.mode,
                  "forward mode: multimodal|speech_only|text_only|single_layer_K");
  cmd->add_option("overrides", args.overrides,
                  "dotted-key config overrides, e.g. model.d_model=64");
}

nlohmann::ordered_json resolve(const CommonArgs& args) {
  std::optional<std::filesystem::path> cfg_path;
  if (args.config_path) cfg_path = *args.config_path;
  return museli::resolve_experiment_config(cfg_path, args.overrides, args.seed,
                                           args.mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MuSeLI-style multimodal spoken language identification"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  bool force = false;
  auto* generate = app.add_subcommand(
      "generate", "synthesize a confusable-language corpus");
  add_common(generate, gen_args);
  generate->add_flag("--force", force, "overwrite a non-empty out dir");

  CommonArgs train_args;
  std::string corpus_dir;
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  add_common(train, train_args);
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();

  CommonArgs eval_args;
  std::string eval_corpus, checkpoint_path;
  auto* evaluate =
      app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
  add_common(evaluate, eval_args);
  evaluate->add_option("--corpus", eval_corpus, "corpus directory")->required();
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();

  CommonArgs ablate_args;
  std::string ablate_corpus;
  auto* ablate = app.add_subcommand(
      "ablate", "input-configuration x pooling ablation matrix");
  add_common(ablate, ablate_args);
  ablate->add_option("--corpus", ablate_corpus, "corpus directory")->required();

  CommonArgs sweep_args;
  std::string sweep_corpus;
  auto* sweep = app.add_subcommand(
      "layer-sweep", "per-layer probe plus weighted-layer comparison");
  add_common(sweep, sweep_args);
  sweep->add_option("--corpus", sweep_corpus, "corpus directory")->required();

  CommonArgs report_args;
  std::string report_corpus, mm_ckpt, sp_ckpt;
  auto* report = app.add_subcommand(
      "report", "duration and confusable-pair analysis of two checkpoints");
  add_common(report, report_args);
  report->add_option("--corpus", report_corpus, "corpus directory")->required();
  report->add_option("--multimodal", mm_ckpt, "multimodal checkpoint")
      ->required();
  report->add_option("--speech-only", sp_ckpt, "speech-only checkpoint")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) {
      museli::cmd_generate(resolve(gen_args), gen_args.out_dir, force);
    } else if (*train) {
      museli::cmd_train(resolve(train_args), corpus_dir, train_args.out_dir);
    } else if (*evaluate) {
      museli::cmd_evaluate(resolve(eval_args), eval_corpus, checkpoint_path,
                           eval_args.out_dir);
    } else if (*ablate) {
      museli::cmd_ablate(resolve(ablate_args), ablate_corpus,
                         ablate_args.out_dir);
    } else if (*sweep) {
      museli::cmd_layer_sweep(resolve(sweep_args), sweep_corpus,
                              sweep_args.out_dir);
    } else if (*report) {
      museli::cmd_report(resolve(report_args), report_corpus, mm_ckpt, sp_ckpt,
                         report_args.out_dir);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
