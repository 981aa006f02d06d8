#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "museli/corpus.hpp"
#include "museli/evaluation.hpp"
#include "museli/training.hpp"

namespace museli {

// The experiment configuration is a JSON document with sections
// generate / model / train / evaluate. Unknown dotted override keys are
// rejected with the list of valid keys.
nlohmann::ordered_json default_experiment_config();

nlohmann::ordered_json resolve_experiment_config(
    const std::optional<std::filesystem::path>& config_path,
    const std::vector<std::string>& dotted_overrides,
    std::optional<uint64_t> seed_flag, std::optional<std::string> mode_flag);

GenConfig gen_config_from_json(const nlohmann::json& cfg);
ModelConfig model_config_from_experiment(const nlohmann::json& cfg);
TrainConfig train_config_from_json(const nlohmann::json& cfg);

void cmd_generate(const nlohmann::ordered_json& cfg,
                  const std::filesystem::path& out_dir, bool force);

// Trains on the corpus under corpus_dir and writes checkpoint.bin plus
// train_log.jsonl under out_dir.
void cmd_train(const nlohmann::ordered_json& cfg,
               const std::filesystem::path& corpus_dir,
               const std::filesystem::path& out_dir);

void cmd_evaluate(const nlohmann::ordered_json& cfg,
                  const std::filesystem::path& corpus_dir,
                  const std::filesystem::path& checkpoint_path,
                  const std::filesystem::path& out_dir);

void cmd_ablate(const nlohmann::ordered_json& cfg,
                const std::filesystem::path& corpus_dir,
                const std::filesystem::path& out_dir);

void cmd_layer_sweep(const nlohmann::ordered_json& cfg,
                     const std::filesystem::path& corpus_dir,
                     const std::filesystem::path& out_dir);

void cmd_report(const nlohmann::ordered_json& cfg,
                const std::filesystem::path& corpus_dir,
                const std::filesystem::path& multimodal_ckpt,
                const std::filesystem::path& speech_only_ckpt,
                const std::filesystem::path& out_dir);

}  // namespace museli
