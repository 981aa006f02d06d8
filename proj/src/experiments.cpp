#include "museli/experiments.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace museli {

using nlohmann::ordered_json;

ordered_json default_experiment_config() {
  return ordered_json{
      {"generate",
       {{"num_languages", 8},
        {"num_confusable_groups", 4},
        {"feat_dim", 16},
        {"frame_rate_hz", 100.0},
        {"eps_acoustic", 0.25},
        {"min_duration_s", 1.0},
        {"max_duration_s", 20.0},
        {"sigma_speaker", 0.5},
        {"sigma_frame", 4.0},
        {"p_text_noise", 0.1},
        {"alphabet_size", 12},
        {"title_len_min", 5},
        {"title_len_max", 15},
        {"desc_len_min", 20},
        {"desc_len_max", 60},
        {"p_shared_location", 0.2},
        {"train_per_language", 200},
        {"dev_per_language", 10},
        {"test_per_language", 50},
        {"low_resource_languages", 2},
        {"low_resource_train", 20},
        {"seed", 0}}},
      {"model",
       {{"d_model", 64},
        {"num_speech_layers", 2},
        {"num_mm_layers", 4},
        {"num_heads", 4},
        {"conv_kernel_size", 7},
        {"ff_multiplier", 4},
        {"subsample_factor", 4},
        {"max_text_tokens", 400},
        {"max_speech_frames", 1600},
        {"pooling", "attentive"}}},
      {"train",
       {{"batch_size", 16},
        {"total_steps", 3000},
        {"peak_learning_rate", 3e-4},
        {"warmup_steps", 300},
        {"seed", 0},
        {"mode", "multimodal"},
        {"adam_beta1", 0.9},
        {"adam_beta2", 0.999},
        {"adam_eps", 1e-8},
        {"checkpoint_every", 0},
        {"eval_every", 0},
        {"blank_location", false}}},
      {"evaluate",
       {{"split", "test"},
        {"bucket_edges", {0.0, 5.0, 10.0, 15.0, 20.0}}}}};
}

namespace {

std::vector<std::string> keys_of(const ordered_json& obj) {
  std::vector<std::string> ks;
  for (auto it = obj.begin(); it != obj.end(); ++it) ks.push_back(it.key());
  return ks;
}

void apply_override(ordered_json& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like section.key=value: " +
                                assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  ordered_json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      std::string valid;
      if (node->is_object())
        for (const auto& k : keys_of(*node)) valid += " " + k;
      throw std::invalid_argument("unknown config key \"" + key +
                                  "\"; valid keys at \"" + parts[i] +
                                  "\":" + valid);
    }
    node = &(*node)[parts[i]];
  }
  try {
    *node = ordered_json::parse(value);
  } catch (const nlohmann::json::exception&) {
    *node = value;  // bare strings need no quoting
  }
}

void merge_into(ordered_json& base, const ordered_json& patch,
                const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (!base.contains(it.key())) {
      std::string valid;
      for (const auto& k : keys_of(base)) valid += " " + k;
      throw std::invalid_argument("unknown config key \"" + prefix + it.key() +
                                  "\"; valid keys:" + valid);
    }
    if (it->is_object())
      merge_into(base[it.key()], *it, prefix + it.key() + ".");
    else
      base[it.key()] = *it;
  }
}

std::string timestamp_line() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

}  // namespace

ordered_json resolve_experiment_config(
    const std::optional<std::filesystem::path>& config_path,
    const std::vector<std::string>& dotted_overrides,
    std::optional<uint64_t> seed_flag, std::optional<std::string> mode_flag) {
  ordered_json cfg = default_experiment_config();
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in)
      throw std::runtime_error("cannot open config file: " +
                               config_path->string());
    ordered_json user;
    try {
      user = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("config parse error: " + std::string(e.what()));
    }
    merge_into(cfg, user, "");
  }
  for (const std::string& o : dotted_overrides) apply_override(cfg, o);
  if (seed_flag) {
    cfg["generate"]["seed"] = *seed_flag;
    cfg["train"]["seed"] = *seed_flag;
  }
  if (mode_flag) cfg["train"]["mode"] = *mode_flag;
  return cfg;
}

GenConfig gen_config_from_json(const nlohmann::json& cfg) {
  const auto& g = cfg.at("generate");
  GenConfig c;
  c.feat_dim = g.at("feat_dim").get<int>();
  c.frame_rate_hz = g.at("frame_rate_hz").get<double>();
  c.eps_acoustic = g.at("eps_acoustic").get<double>();
  c.min_duration_s = g.at("min_duration_s").get<double>();
  c.max_duration_s = g.at("max_duration_s").get<double>();
  c.alphabet_size = g.at("alphabet_size").get<int>();
  c.title_len_min = g.at("title_len_min").get<int>();
  c.title_len_max = g.at("title_len_max").get<int>();
  c.desc_len_min = g.at("desc_len_min").get<int>();
  c.desc_len_max = g.at("desc_len_max").get<int>();
  c.p_shared_location = g.at("p_shared_location").get<double>();
  c.noise.sigma_speaker = g.at("sigma_speaker").get<double>();
  c.noise.sigma_frame = g.at("sigma_frame").get<double>();
  c.noise.p_text_noise = g.at("p_text_noise").get<double>();
  return c;
}

ModelConfig model_config_from_experiment(const nlohmann::json& cfg) {
  const auto& m = cfg.at("model");
  ModelConfig c;
  c.d_model = m.at("d_model").get<int>();
  c.num_speech_layers = m.at("num_speech_layers").get<int>();
  c.num_mm_layers = m.at("num_mm_layers").get<int>();
  c.num_heads = m.at("num_heads").get<int>();
  c.conv_kernel_size = m.at("conv_kernel_size").get<int>();
  c.ff_multiplier = m.at("ff_multiplier").get<int>();
  c.subsample_factor = m.at("subsample_factor").get<int>();
  c.max_text_tokens = m.at("max_text_tokens").get<int>();
  c.max_speech_frames = m.at("max_speech_frames").get<int>();
  c.pooling = pooling_from_string(m.at("pooling").get<std::string>());
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& cfg) {
  const auto& t = cfg.at("train");
  TrainConfig c;
  c.batch_size = t.at("batch_size").get<int>();
  c.total_steps = t.at("total_steps").get<int>();
  c.peak_learning_rate = t.at("peak_learning_rate").get<double>();
  c.warmup_steps = t.at("warmup_steps").get<int>();
  c.seed = t.at("seed").get<uint64_t>();
  c.mode = ForwardMode::from_name(t.at("mode").get<std::string>());
  c.adam_beta1 = t.at("adam_beta1").get<double>();
  c.adam_beta2 = t.at("adam_beta2").get<double>();
  c.adam_eps = t.at("adam_eps").get<double>();
  c.checkpoint_every = t.at("checkpoint_every").get<int>();
  c.eval_every = t.at("eval_every").get<int>();
  c.blank_location = t.at("blank_location").get<bool>();
  return c;
}

void cmd_generate(const ordered_json& cfg, const std::filesystem::path& out_dir,
                  bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw std::invalid_argument("output directory " + out_dir.string() +
                                " is not empty; pass --force to overwrite");
  if (!out_dir.parent_path().empty() && !fs::exists(out_dir.parent_path()))
    throw std::runtime_error("parent of output directory does not exist: " +
                             out_dir.parent_path().string());
  fs::create_directories(out_dir);

  const auto& g = cfg.at("generate");
  const GenConfig gc = gen_config_from_json(cfg);
  const int num_languages = g.at("num_languages").get<int>();
  const int num_groups = g.at("num_confusable_groups").get<int>();
  const uint64_t seed = g.at("seed").get<uint64_t>();

  std::vector<LanguageSpec> specs = generate_language_specs(
      num_languages, num_groups, gc.feat_dim, gc, seed);

  const int low_count = g.at("low_resource_languages").get<int>();
  std::vector<SplitBudget> budgets(specs.size());
  for (size_t i = 0; i < budgets.size(); ++i) {
    const bool low = static_cast<int>(i) >= num_languages - low_count;
    budgets[i].train = low ? g.at("low_resource_train").get<int>()
                           : g.at("train_per_language").get<int>();
    budgets[i].dev = g.at("dev_per_language").get<int>();
    budgets[i].test = g.at("test_per_language").get<int>();
  }
  // Record the utterance budget as hours for the spec file.
  for (size_t i = 0; i < specs.size(); ++i) {
    const double mean_s =
        (gc.max_duration_s - gc.min_duration_s) /
        std::log(gc.max_duration_s / gc.min_duration_s);
    specs[i].train_hours = budgets[i].train * mean_s / 3600.0;
  }

  CorpusManifest manifest = generate_corpus(specs, budgets, gc, seed);
  write_language_specs(specs, out_dir / "specs.json");
  write_manifest(manifest, out_dir / "manifest.jsonl");
  {
    std::ofstream cfg_out(out_dir / "generate_config.json");
    cfg_out << ordered_json(g).dump(2) << "\n";
  }

  std::map<std::string, std::array<int, 3>> counts;
  for (const Recording& r : manifest.records)
    counts[r.language][static_cast<int>(r.split)] += 1;
  std::cout << "language,train,dev,test\n";
  for (const auto& [lang, c] : counts)
    std::cout << lang << "," << c[0] << "," << c[1] << "," << c[2] << "\n";
}

namespace {

struct LoadedCorpus {
  CorpusManifest manifest;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
};

LoadedCorpus load_for_training(const ordered_json& cfg,
                               const std::filesystem::path& corpus_dir) {
  LoadedCorpus lc;
  lc.manifest = load_manifest(corpus_dir / "manifest.jsonl");
  lc.model_cfg = model_config_from_experiment(cfg);
  lc.train_cfg = train_config_from_json(cfg);
  if (lc.manifest.records.empty())
    throw std::runtime_error("corpus manifest is empty");
  lc.model_cfg.feat_dim = static_cast<int>(lc.manifest.records[0].frames.cols());
  lc.model_cfg.num_languages =
      static_cast<int>(lc.manifest.language_list.size());
  // The model's sequence limits are the single source of truth for
  // batching as well.
  lc.train_cfg.max_speech_frames = lc.model_cfg.max_speech_frames;
  lc.train_cfg.max_text_tokens = lc.model_cfg.max_text_tokens;
  return lc;
}

void write_train_outputs(const TrainResult<double>& result,
                         const ModelConfig& mcfg,
                         const std::vector<std::string>& language_list,
                         const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  Checkpoint ckpt{mcfg, language_list, result.params};
  save_checkpoint(ckpt, out_dir / "checkpoint.bin");

  std::ofstream log(out_dir / "train_log.jsonl");
  if (!log) throw std::runtime_error("cannot write training log");
  log << ordered_json{{"header", true}, {"timestamp", timestamp_line()}}.dump()
      << "\n";
  for (const TrainStepLog& e : result.log) {
    ordered_json j{{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}};
    if (e.dev_accuracy >= 0) j["dev_accuracy"] = e.dev_accuracy;
    log << j.dump() << "\n";
  }
}

double test_accuracy(Checkpoint& ckpt, const CorpusManifest& manifest,
                     const ForwardMode& mode, bool blank_location,
                     Split split = Split::test) {
  Predictions p = predict_corpus(ckpt, manifest, split, mode, blank_location);
  int correct = 0;
  for (const auto& e : p.entries) correct += (e.predicted_label == e.true_label);
  return p.entries.empty() ? 0.0
                           : static_cast<double>(correct) / p.entries.size();
}

}  // namespace

void cmd_train(const ordered_json& cfg, const std::filesystem::path& corpus_dir,
               const std::filesystem::path& out_dir) {
  LoadedCorpus lc = load_for_training(cfg, corpus_dir);
  Tokenizer tokenizer;
  TrainResult<double> result =
      train<double>(lc.manifest, lc.model_cfg, lc.train_cfg, tokenizer);
  write_train_outputs(result, lc.model_cfg, lc.manifest.language_list, out_dir);
  if (!result.log.empty())
    std::cout << "final step " << result.log.back().step << " loss "
              << result.log.back().loss << "\n";
}

void cmd_evaluate(const ordered_json& cfg,
                  const std::filesystem::path& corpus_dir,
                  const std::filesystem::path& checkpoint_path,
                  const std::filesystem::path& out_dir) {
  CorpusManifest manifest = load_manifest(corpus_dir / "manifest.jsonl");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Split split =
      split_from_string(cfg.at("evaluate").at("split").get<std::string>());
  const ForwardMode mode =
      ForwardMode::from_name(cfg.at("train").at("mode").get<std::string>());
  const bool blank_location = cfg.at("train").at("blank_location").get<bool>();

  Predictions preds = predict_corpus(ckpt, manifest, split, mode,
                                     blank_location);
  EvalReport report = compute_metrics(confusion_matrix(preds,
                                                       manifest.language_list));
  std::vector<double> edges =
      cfg.at("evaluate").at("bucket_edges").get<std::vector<double>>();
  edges.push_back(std::numeric_limits<double>::infinity());
  report.bucket_accuracy = duration_bucket_accuracy(preds, edges);
  report.language_list = manifest.language_list;
  report.checkpoint_hash = file_hash_hex(checkpoint_path);

  std::filesystem::create_directories(out_dir);
  write_predictions(preds, out_dir / "predictions.jsonl");
  write_report(report, out_dir / "report.json");
  std::cout << "accuracy " << report.accuracy << " macro_f1 "
            << report.macro_f1 << " macro_fpr " << report.macro_fpr << "\n";
}

void cmd_ablate(const ordered_json& cfg, const std::filesystem::path& corpus_dir,
                const std::filesystem::path& out_dir) {
  LoadedCorpus lc = load_for_training(cfg, corpus_dir);
  Tokenizer tokenizer;
  std::filesystem::create_directories(out_dir / "cells");

  struct Cell {
    std::string input_config;
    ForwardMode mode;
    bool blank_location;
  };
  const std::vector<Cell> cells = {
      {"metadata_only", ForwardMode::text_only(), false},
      {"speech_only", ForwardMode::speech_only(), false},
      {"speech_title_description", ForwardMode::multimodal(), true},
      {"speech_all_metadata", ForwardMode::multimodal(), false},
  };
  const std::vector<PoolingKind> poolings = {PoolingKind::mean,
                                             PoolingKind::attentive};

  std::ofstream table(out_dir / "ablation.csv");
  table << "input_config,pooling,test_accuracy\n";
  for (const Cell& cell : cells) {
    for (PoolingKind pooling : poolings) {
      ModelConfig mcfg = lc.model_cfg;
      mcfg.pooling = pooling;
      TrainConfig tcfg = lc.train_cfg;
      tcfg.mode = cell.mode;
      tcfg.blank_location = cell.blank_location;
      TrainResult<double> result =
          train<double>(lc.manifest, mcfg, tcfg, tokenizer);
      const std::string cell_name =
          cell.input_config + "_" + pooling_to_string(pooling);
      write_train_outputs(result, mcfg, lc.manifest.language_list,
                          out_dir / "cells" / cell_name);
      Checkpoint ckpt{mcfg, lc.manifest.language_list, result.params};
      const double acc = test_accuracy(ckpt, lc.manifest, cell.mode,
                                       cell.blank_location);
      table << cell.input_config << "," << pooling_to_string(pooling) << ","
            << acc << "\n";
      std::cout << cell_name << " accuracy " << acc << "\n";
    }
  }
}

void cmd_layer_sweep(const ordered_json& cfg,
                     const std::filesystem::path& corpus_dir,
                     const std::filesystem::path& out_dir) {
  LoadedCorpus lc = load_for_training(cfg, corpus_dir);
  Tokenizer tokenizer;
  std::filesystem::create_directories(out_dir);

  struct Row {
    std::string label;
    double dev = 0.0;
    double test = 0.0;
  };
  std::vector<Row> rows;
  auto run = [&](const ForwardMode& mode, const std::string& label) {
    TrainConfig tcfg = lc.train_cfg;
    tcfg.mode = mode;
    TrainResult<double> result =
        train<double>(lc.manifest, lc.model_cfg, tcfg, tokenizer);
    Checkpoint ckpt{lc.model_cfg, lc.manifest.language_list, result.params};
    Row r{label,
          test_accuracy(ckpt, lc.manifest, mode, tcfg.blank_location,
                        Split::dev),
          test_accuracy(ckpt, lc.manifest, mode, tcfg.blank_location,
                        Split::test)};
    rows.push_back(r);
    std::cout << label << " dev " << r.dev << " test " << r.test << "\n";
  };

  for (int k = 1; k <= lc.model_cfg.num_mm_layers; ++k)
    run(ForwardMode::single_layer(k), std::to_string(k));
  run(ForwardMode::multimodal(), "weighted");

  // Best single layer is selected on dev.
  int best = 0;
  for (size_t i = 1; i + 1 < rows.size(); ++i)
    if (rows[i].dev > rows[best].dev) best = static_cast<int>(i);

  std::ofstream table(out_dir / "layer_sweep.csv");
  table << "layer,dev_accuracy,test_accuracy,best_on_dev\n";
  for (size_t i = 0; i < rows.size(); ++i)
    table << rows[i].label << "," << rows[i].dev << "," << rows[i].test << ","
          << ((rows[i].label != "weighted" && static_cast<int>(i) == best) ? 1
                                                                           : 0)
          << "\n";
}

void cmd_report(const ordered_json& cfg, const std::filesystem::path& corpus_dir,
                const std::filesystem::path& multimodal_ckpt,
                const std::filesystem::path& speech_only_ckpt,
                const std::filesystem::path& out_dir) {
  for (const auto& p : {multimodal_ckpt, speech_only_ckpt})
    if (!std::filesystem::exists(p))
      throw std::invalid_argument("missing checkpoint: " + p.string());
  CorpusManifest manifest = load_manifest(corpus_dir / "manifest.jsonl");
  std::vector<LanguageSpec> specs =
      load_language_specs(corpus_dir / "specs.json");
  std::filesystem::create_directories(out_dir);

  std::vector<double> edges =
      cfg.at("evaluate").at("bucket_edges").get<std::vector<double>>();
  edges.push_back(std::numeric_limits<double>::infinity());

  struct ModeRun {
    std::string name;
    std::filesystem::path ckpt_path;
    ForwardMode mode;
    Predictions preds;
    EvalReport report;
  };
  std::vector<ModeRun> runs;
  runs.push_back({"multimodal", multimodal_ckpt, ForwardMode::multimodal(),
                  {}, {}});
  runs.push_back({"speech_only", speech_only_ckpt, ForwardMode::speech_only(),
                  {}, {}});
  for (ModeRun& run : runs) {
    Checkpoint ckpt = load_checkpoint(run.ckpt_path);
    run.preds = predict_corpus(ckpt, manifest, Split::test, run.mode, false);
    run.report = compute_metrics(
        confusion_matrix(run.preds, manifest.language_list));
    run.report.bucket_accuracy = duration_bucket_accuracy(run.preds, edges);
    run.report.language_list = manifest.language_list;
    run.report.checkpoint_hash = file_hash_hex(run.ckpt_path);
    write_report(run.report, out_dir / (run.name + "_report.json"));
  }

  std::ofstream deltas(out_dir / "duration_deltas.csv");
  deltas << "bucket_lo,bucket_hi,count,accuracy_multimodal,"
            "accuracy_speech_only,delta\n";
  for (size_t b = 0; b < runs[0].report.bucket_accuracy.size(); ++b) {
    const DurationBucket& mm = runs[0].report.bucket_accuracy[b];
    const DurationBucket& sp = runs[1].report.bucket_accuracy[b];
    deltas << mm.lo << ",";
    if (std::isinf(mm.hi))
      deltas << "inf";
    else
      deltas << mm.hi;
    deltas << "," << mm.count << ",";
    if (mm.count == 0)
      deltas << "NA,NA,NA\n";
    else
      deltas << mm.accuracy << "," << sp.accuracy << ","
             << (mm.accuracy - sp.accuracy) << "\n";
  }

  // Within-confusable-group error mass per mode: errors whose predicted
  // language shares the true language's group, as a fraction of records.
  std::map<std::string, int> group_of;
  for (const LanguageSpec& s : specs) group_of[s.name] = s.confusable_group;
  std::ofstream pairs(out_dir / "confusion_pairs.csv");
  pairs << "mode,group,within_group_errors,records,error_mass\n";
  for (const ModeRun& run : runs) {
    std::map<int, std::pair<int, int>> per_group;  // group -> (errors, count)
    int total_errors = 0;
    for (const Prediction& p : run.preds.entries) {
      const int g = group_of.at(manifest.language_list[p.true_label]);
      per_group[g].second += 1;
      if (p.predicted_label != p.true_label &&
          group_of.at(manifest.language_list[p.predicted_label]) == g) {
        per_group[g].first += 1;
        ++total_errors;
      }
    }
    int total = static_cast<int>(run.preds.entries.size());
    for (const auto& [g, ec] : per_group)
      pairs << run.name << "," << g << "," << ec.first << "," << ec.second
            << ","
            << (ec.second == 0 ? 0.0
                               : static_cast<double>(ec.first) / ec.second)
            << "\n";
    pairs << run.name << ",all," << total_errors << "," << total << ","
          << (total == 0 ? 0.0 : static_cast<double>(total_errors) / total)
          << "\n";
  }
}

}  // namespace museli
