#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "museli/tokenizer.hpp"
#include "museli/types.hpp"

namespace museli {

enum class Split { train, dev, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Recording {
  std::string id;
  Matf frames;  // num_frames x feat_dim
  double frame_rate_hz = 0.0;
  double duration_s = 0.0;
  std::string language;
  Metadata metadata;
  Split split = Split::train;
};

struct LanguageSpec {
  std::string name;
  Vecf prototype;
  std::vector<char32_t> script_alphabet;
  int confusable_group = 0;
  std::vector<std::pair<std::string, double>> location_options;
  double train_hours = 0.0;
};

struct NoiseConfig {
  double sigma_speaker = 0.5;
  double sigma_frame = 4.0;
  double p_text_noise = 0.1;
};

struct GenConfig {
  int feat_dim = 16;
  double frame_rate_hz = 100.0;
  double eps_acoustic = 0.25;
  double min_duration_s = 1.0;
  double max_duration_s = 20.0;
  int alphabet_size = 12;
  int title_len_min = 5;
  int title_len_max = 15;
  int desc_len_min = 20;
  int desc_len_max = 60;
  double p_shared_location = 0.2;
  NoiseConfig noise;
};

struct SplitBudget {
  int train = 0;
  int dev = 0;
  int test = 0;
};

struct CorpusManifest {
  std::vector<Recording> records;
  std::vector<std::string> language_list;

  int language_index(const std::string& name) const;
};

std::vector<LanguageSpec> generate_language_specs(int num_languages,
                                                  int num_confusable_groups,
                                                  int feat_dim,
                                                  const GenConfig& config,
                                                  uint64_t seed);

// spec_index selects the target language; the full spec list is needed so
// that text noise can draw from another language's alphabet.
Recording synthesize_recording(const std::vector<LanguageSpec>& specs,
                               int spec_index, double duration_s,
                               const GenConfig& config, uint64_t seed);

CorpusManifest generate_corpus(const std::vector<LanguageSpec>& specs,
                               const std::vector<SplitBudget>& budgets,
                               const GenConfig& config, uint64_t seed);

// Feature matrix side file: magic "MSLF", u32le rows, u32le cols, then
// rows*cols float32le values, row-major.
void write_feature_file(const std::filesystem::path& path, const Matf& m);
Matf load_feature_file(const std::filesystem::path& path);

// Manifest: JSON-lines, one record per line; language_list lives in a
// sibling header file "<stem>.header.json". Feature matrices go to side
// files under "<dir>/features/".
void write_manifest(const CorpusManifest& manifest,
                    const std::filesystem::path& path);
CorpusManifest load_manifest(const std::filesystem::path& path);

void write_language_specs(const std::vector<LanguageSpec>& specs,
                          const std::filesystem::path& path);
std::vector<LanguageSpec> load_language_specs(const std::filesystem::path& path);

}  // namespace museli
