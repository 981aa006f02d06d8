#include "museli/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace museli {
namespace {

using nlohmann::ordered_json;

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 1));
}

// First code point of the per-language script block. Blocks are globally
// disjoint, so within-group disjointness holds a fortiori.
constexpr char32_t kScriptBase = 0x4E00;
constexpr int kScriptStride = 64;

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  throw std::logic_error("bad split enum");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split value: \"" + s + "\"");
}

int CorpusManifest::language_index(const std::string& name) const {
  auto it = std::find(language_list.begin(), language_list.end(), name);
  if (it == language_list.end())
    throw std::invalid_argument("language not in language_list: " + name);
  return static_cast<int>(it - language_list.begin());
}

std::vector<LanguageSpec> generate_language_specs(int num_languages,
                                                  int num_confusable_groups,
                                                  int feat_dim,
                                                  const GenConfig& config,
                                                  uint64_t seed) {
  if (num_languages < 2) throw std::invalid_argument("need >= 2 languages");
  if (num_confusable_groups < 1)
    throw std::invalid_argument("need >= 1 confusable group");
  if (2 * num_confusable_groups > num_languages)
    throw std::invalid_argument(
        "each confusable group needs >= 2 languages; reduce group count");
  if (feat_dim < 1) throw std::invalid_argument("feat_dim must be >= 1");

  const double eps = config.eps_acoustic;

  // Group centers sit on scaled coordinate axes, pairwise >= 11*eps apart;
  // members are offset within a ball of radius eps/2, which gives
  // within-group distance <= eps and cross-group distance >= 10*eps.
  std::vector<Vecf> centers(num_confusable_groups);
  for (int g = 0; g < num_confusable_groups; ++g) {
    Vecf c = Vecf::Zero(feat_dim);
    const int axis = g % feat_dim;
    const double mult = 1.0 + static_cast<double>(g / feat_dim);
    c(axis) = static_cast<float>(11.0 * eps * mult);
    centers[g] = c;
  }

  std::vector<LanguageSpec> specs(num_languages);
  for (int i = 0; i < num_languages; ++i) {
    std::mt19937_64 rng(mix_seed(seed, i, 0xA1));
    LanguageSpec& s = specs[i];
    char name[16];
    std::snprintf(name, sizeof(name), "lang%02d", i);
    s.name = name;
    s.confusable_group = i % num_confusable_groups;

    std::normal_distribution<double> gauss(0.0, 1.0);
    Vecd dir(feat_dim);
    for (int d = 0; d < feat_dim; ++d) dir(d) = gauss(rng);
    dir.normalize();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double radius =
        0.5 * eps * std::pow(unit(rng), 1.0 / static_cast<double>(feat_dim));
    s.prototype = centers[s.confusable_group] + (radius * dir).cast<float>();

    s.script_alphabet.resize(config.alphabet_size);
    for (int j = 0; j < config.alphabet_size; ++j)
      s.script_alphabet[j] = kScriptBase + static_cast<char32_t>(i * kScriptStride + j);

    char region[24];
    std::snprintf(region, sizeof(region), "G%d-L%02d", s.confusable_group, i);
    s.location_options = {
        {region, 1.0 - config.p_shared_location},
        {"XX-XX", config.p_shared_location},
    };
    s.train_hours = 0.0;
  }
  return specs;
}

namespace {

std::string random_text(std::mt19937_64& rng,
                        const std::vector<char32_t>& alphabet, int len_min,
                        int len_max) {
  std::uniform_int_distribution<int> len_dist(len_min, len_max);
  std::uniform_int_distribution<size_t> pick(0, alphabet.size() - 1);
  const int len = len_dist(rng);
  std::string out;
  for (int i = 0; i < len; ++i) out += utf8_encode(alphabet[pick(rng)]);
  return out;
}

std::string sample_location(std::mt19937_64& rng, const LanguageSpec& spec) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  double acc = 0.0;
  for (const auto& [loc, p] : spec.location_options) {
    acc += p;
    if (u < acc) return loc;
  }
  return spec.location_options.back().first;
}

}  // namespace

Recording synthesize_recording(const std::vector<LanguageSpec>& specs,
                               int spec_index, double duration_s,
                               const GenConfig& config, uint64_t seed) {
  if (spec_index < 0 || spec_index >= static_cast<int>(specs.size()))
    throw std::invalid_argument("spec_index out of range");
  if (duration_s < config.min_duration_s || duration_s > config.max_duration_s)
    throw std::invalid_argument("duration_s outside configured range");

  const LanguageSpec& spec = specs[spec_index];
  const int feat_dim = static_cast<int>(spec.prototype.size());
  const int num_frames = std::max(
      1, static_cast<int>(std::lround(duration_s * config.frame_rate_hz)));

  std::mt19937_64 rng(mix_seed(seed, 0, 0xB2));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Vecf speaker_offset = Vecf::Zero(feat_dim);
  for (int d = 0; d < feat_dim; ++d)
    speaker_offset(d) =
        static_cast<float>(config.noise.sigma_speaker * gauss(rng));

  Recording rec;
  rec.frames.resize(num_frames, feat_dim);
  for (int t = 0; t < num_frames; ++t)
    for (int d = 0; d < feat_dim; ++d)
      rec.frames(t, d) =
          spec.prototype(d) + speaker_offset(d) +
          static_cast<float>(config.noise.sigma_frame * gauss(rng));

  rec.frame_rate_hz = config.frame_rate_hz;
  rec.duration_s = duration_s;
  rec.language = spec.name;
  rec.split = Split::train;

  // Text noise swaps the whole title/description over to another
  // language's alphabet, mimicking mismatched metadata.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool noisy_text =
      unit(rng) < config.noise.p_text_noise && specs.size() > 1;
  const std::vector<char32_t>* alphabet = &spec.script_alphabet;
  if (noisy_text) {
    std::uniform_int_distribution<size_t> pick(0, specs.size() - 2);
    size_t other = pick(rng);
    if (other >= static_cast<size_t>(spec_index)) ++other;
    alphabet = &specs[other].script_alphabet;
  }
  rec.metadata.title =
      random_text(rng, *alphabet, config.title_len_min, config.title_len_max);
  rec.metadata.description =
      random_text(rng, *alphabet, config.desc_len_min, config.desc_len_max);
  rec.metadata.location = sample_location(rng, spec);
  return rec;
}

CorpusManifest generate_corpus(const std::vector<LanguageSpec>& specs,
                               const std::vector<SplitBudget>& budgets,
                               const GenConfig& config, uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("empty language spec list");
  if (budgets.size() != specs.size())
    throw std::invalid_argument("one budget per language spec required");
  for (const SplitBudget& b : budgets) {
    if (b.train < 0 || b.dev < 0 || b.test < 0)
      throw std::invalid_argument("budgets must be nonnegative");
    if (b.test < 1)
      throw std::invalid_argument("need >= 1 test utterance per language");
  }

  CorpusManifest manifest;
  for (const LanguageSpec& s : specs) manifest.language_list.push_back(s.name);

  uint64_t record_index = 0;
  for (size_t i = 0; i < specs.size(); ++i) {
    const std::array<std::pair<Split, int>, 3> plan = {
        std::pair{Split::train, budgets[i].train},
        std::pair{Split::dev, budgets[i].dev},
        std::pair{Split::test, budgets[i].test}};
    for (const auto& [split, count] : plan) {
      for (int n = 0; n < count; ++n, ++record_index) {
        std::mt19937_64 rng(mix_seed(seed, record_index, 0xC3));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double log_lo = std::log(config.min_duration_s);
        const double log_hi = std::log(config.max_duration_s);
        const double duration =
            std::exp(log_lo + (log_hi - log_lo) * unit(rng));
        Recording rec = synthesize_recording(
            specs, static_cast<int>(i), duration, config,
            mix_seed(seed, record_index, 0xD4));
        rec.id = specs[i].name + "_" + to_string(split) + "_" +
                 std::to_string(n);
        rec.split = split;
        manifest.records.push_back(std::move(rec));
      }
    }
  }
  return manifest;
}

void write_feature_file(const std::filesystem::path& path, const Matf& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out.write("MSLF", 4);
  const uint32_t rows = static_cast<uint32_t>(m.rows());
  const uint32_t cols = static_cast<uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) {
      const float v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Matf load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("missing feature file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "MSLF")
    throw std::runtime_error("bad feature file magic: " + path.string());
  uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  Matf m(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) {
      float v;
      in.read(reinterpret_cast<char*>(&v), 4);
      m(r, c) = v;
    }
  if (!in) throw std::runtime_error("truncated feature file: " + path.string());
  return m;
}

void write_manifest(const CorpusManifest& manifest,
                    const std::filesystem::path& path) {
  const std::filesystem::path dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::filesystem::path feat_dir = dir / "features";
  std::filesystem::create_directories(feat_dir);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  for (const Recording& r : manifest.records) {
    const std::string feat_rel = "features/" + r.id + ".mslf";
    write_feature_file(dir / feat_rel, r.frames);
    ordered_json line{{"id", r.id},
                      {"language", r.language},
                      {"duration_s", r.duration_s},
                      {"frame_rate_hz", r.frame_rate_hz},
                      {"features_path", feat_rel},
                      {"title", r.metadata.title},
                      {"description", r.metadata.description},
                      {"location", r.metadata.location},
                      {"split", to_string(r.split)}};
    out << line.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());

  std::filesystem::path header = path;
  header.replace_extension(".header.json");
  std::ofstream hout(header);
  if (!hout)
    throw std::runtime_error("cannot open for write: " + header.string());
  ordered_json h{{"language_list", manifest.language_list},
                 {"sentinel", "U+241F"}};
  hout << h.dump(2) << "\n";
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::filesystem::path header = path;
  header.replace_extension(".header.json");
  std::ifstream hin(header);
  if (!hin)
    throw std::runtime_error("missing manifest header file: " +
                             header.string());
  CorpusManifest manifest;
  try {
    nlohmann::json h = nlohmann::json::parse(hin);
    manifest.language_list =
        h.at("language_list").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest header parse error: " +
                             std::string(e.what()));
  }

  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  const std::filesystem::path dir = path.parent_path();
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Recording r;
    std::string feat_rel;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::string>();
      r.language = j.at("language").get<std::string>();
      r.duration_s = j.at("duration_s").get<double>();
      r.frame_rate_hz = j.at("frame_rate_hz").get<double>();
      feat_rel = j.at("features_path").get<std::string>();
      r.metadata.title = j.at("title").get<std::string>();
      r.metadata.description = j.at("description").get<std::string>();
      r.metadata.location = j.at("location").get<std::string>();
      r.split = split_from_string(j.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("manifest parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("manifest parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    if (std::find(manifest.language_list.begin(), manifest.language_list.end(),
                  r.language) == manifest.language_list.end())
      throw std::runtime_error("manifest parse error at line " +
                               std::to_string(line_no) +
                               ": language not in language_list: " +
                               r.language);
    if (!seen_ids.insert(r.id).second)
      throw std::runtime_error("manifest parse error at line " +
                               std::to_string(line_no) + ": duplicate id " +
                               r.id);
    r.frames = load_feature_file(dir / feat_rel);
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

void write_language_specs(const std::vector<LanguageSpec>& specs,
                          const std::filesystem::path& path) {
  ordered_json arr = ordered_json::array();
  for (const LanguageSpec& s : specs) {
    std::vector<double> proto(s.prototype.data(),
                              s.prototype.data() + s.prototype.size());
    std::vector<uint32_t> alphabet(s.script_alphabet.begin(),
                                   s.script_alphabet.end());
    ordered_json locs = ordered_json::array();
    for (const auto& [loc, p] : s.location_options)
      locs.push_back(ordered_json{{"location", loc}, {"p", p}});
    arr.push_back(ordered_json{{"name", s.name},
                               {"prototype", proto},
                               {"script_alphabet", alphabet},
                               {"confusable_group", s.confusable_group},
                               {"location_options", locs},
                               {"train_hours", s.train_hours}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << arr.dump(2) << "\n";
}

std::vector<LanguageSpec> load_language_specs(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open specs: " + path.string());
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("spec file parse error: " + std::string(e.what()));
  }
  std::vector<LanguageSpec> specs;
  for (const auto& j : arr) {
    LanguageSpec s;
    s.name = j.at("name").get<std::string>();
    const auto proto = j.at("prototype").get<std::vector<double>>();
    s.prototype.resize(proto.size());
    for (size_t i = 0; i < proto.size(); ++i)
      s.prototype(static_cast<int>(i)) = static_cast<float>(proto[i]);
    for (const auto& cp : j.at("script_alphabet"))
      s.script_alphabet.push_back(static_cast<char32_t>(cp.get<uint32_t>()));
    s.confusable_group = j.at("confusable_group").get<int>();
    for (const auto& l : j.at("location_options"))
      s.location_options.emplace_back(l.at("location").get<std::string>(),
                                      l.at("p").get<double>());
    s.train_hours = j.at("train_hours").get<double>();
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace museli
