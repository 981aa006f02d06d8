#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "museli/corpus.hpp"

using namespace museli;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("museli_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_specs(const LanguageSpec& a, const LanguageSpec& b) {
  return a.name == b.name && a.prototype == b.prototype &&
         a.script_alphabet == b.script_alphabet &&
         a.confusable_group == b.confusable_group &&
         a.location_options == b.location_options;
}

}  // namespace

TEST_CASE("generate_language_specs honors grouping invariants") {
  GenConfig cfg;
  cfg.feat_dim = 8;
  auto specs = generate_language_specs(2, 1, 8, cfg, 7);
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].confusable_group == specs[1].confusable_group);
  std::set<char32_t> a(specs[0].script_alphabet.begin(),
                       specs[0].script_alphabet.end());
  for (char32_t c : specs[1].script_alphabet) CHECK(a.count(c) == 0);
  CHECK((specs[0].prototype - specs[1].prototype).norm() <=
        cfg.eps_acoustic + 1e-6);
}

TEST_CASE("generate_language_specs distances and determinism") {
  GenConfig cfg;
  auto specs = generate_language_specs(8, 4, 16, cfg, 0);
  REQUIRE(specs.size() == 8);
  std::map<int, int> group_sizes;
  for (const auto& s : specs) group_sizes[s.confusable_group] += 1;
  REQUIRE(group_sizes.size() == 4);
  for (const auto& [g, n] : group_sizes) CHECK(n == 2);

  for (size_t i = 0; i < specs.size(); ++i)
    for (size_t j = i + 1; j < specs.size(); ++j) {
      const double d = (specs[i].prototype - specs[j].prototype).norm();
      if (specs[i].confusable_group == specs[j].confusable_group)
        CHECK(d <= cfg.eps_acoustic + 1e-6);
      else
        CHECK(d >= 10.0 * cfg.eps_acoustic - 1e-6);
    }

  for (const auto& s : specs) {
    double psum = 0;
    for (const auto& [loc, p] : s.location_options) psum += p;
    CHECK(psum == doctest::Approx(1.0).epsilon(1e-9));
  }

  auto again = generate_language_specs(8, 4, 16, cfg, 0);
  for (size_t i = 0; i < specs.size(); ++i)
    CHECK(same_specs(specs[i], again[i]));
}

TEST_CASE("generate_language_specs rejects bad counts") {
  GenConfig cfg;
  CHECK_THROWS_AS(generate_language_specs(1, 1, 8, cfg, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_language_specs(3, 2, 8, cfg, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_language_specs(4, 0, 8, cfg, 0),
                  std::invalid_argument);
}

TEST_CASE("synthesize_recording zero-noise case reproduces the prototype") {
  GenConfig cfg;
  cfg.feat_dim = 8;
  cfg.noise.sigma_frame = 0.0;
  cfg.noise.sigma_speaker = 0.0;
  auto specs = generate_language_specs(2, 1, 8, cfg, 3);
  Recording r = synthesize_recording(specs, 0, 5.0, cfg, 99);
  REQUIRE(r.frames.rows() == 500);
  for (int t = 0; t < r.frames.rows(); ++t)
    CHECK(r.frames.row(t).transpose() == specs[0].prototype);
}

TEST_CASE("synthesize_recording is deterministic and validates duration") {
  GenConfig cfg;
  auto specs = generate_language_specs(2, 1, cfg.feat_dim, cfg, 3);
  Recording a = synthesize_recording(specs, 0, 1.0, cfg, 42);
  Recording b = synthesize_recording(specs, 0, 1.0, cfg, 42);
  CHECK(a.frames.rows() == 100);
  CHECK(a.frames == b.frames);
  CHECK(a.metadata == b.metadata);
  CHECK_THROWS_AS(synthesize_recording(specs, 0, 0.1, cfg, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(synthesize_recording(specs, 0, 25.0, cfg, 1),
                  std::invalid_argument);
}

TEST_CASE("full text noise draws from another language's alphabet") {
  GenConfig cfg;
  cfg.noise.p_text_noise = 1.0;
  auto specs = generate_language_specs(4, 2, cfg.feat_dim, cfg, 5);
  Tokenizer tok;
  std::set<std::string> own;
  for (char32_t c : specs[0].script_alphabet) own.insert(utf8_encode(c));
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Recording r = synthesize_recording(specs, 0, 2.0, cfg, seed);
    // every title character must come from some other alphabet
    for (char32_t c : specs[0].script_alphabet)
      CHECK(r.metadata.title.find(utf8_encode(c)) == std::string::npos);
  }
}

TEST_CASE("generate_corpus counts, skew, and determinism") {
  GenConfig cfg;
  cfg.max_duration_s = 5.0;
  auto specs = generate_language_specs(2, 1, cfg.feat_dim, cfg, 1);
  std::vector<SplitBudget> budget{{10, 2, 5}, {10, 2, 5}};
  CorpusManifest m = generate_corpus(specs, budget, cfg, 11);
  CHECK(m.records.size() == 34);

  std::set<std::string> ids;
  std::map<std::string, int> train_counts;
  for (const auto& r : m.records) {
    CHECK(ids.insert(r.id).second);
    if (r.split == Split::train) train_counts[r.language] += 1;
  }
  CHECK(train_counts["lang00"] == 10);
  CHECK(train_counts["lang01"] == 10);

  std::vector<SplitBudget> skew{{200, 0, 1}, {20, 0, 1}};
  CorpusManifest ms = generate_corpus(specs, skew, cfg, 11);
  int a = 0, b = 0;
  for (const auto& r : ms.records)
    if (r.split == Split::train) (r.language == "lang00" ? a : b) += 1;
  CHECK(a == 200);
  CHECK(b == 20);

  CorpusManifest m2 = generate_corpus(specs, budget, cfg, 11);
  REQUIRE(m2.records.size() == m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) {
    CHECK(m.records[i].id == m2.records[i].id);
    CHECK(m.records[i].frames == m2.records[i].frames);
    CHECK(m.records[i].metadata == m2.records[i].metadata);
  }

  CHECK_THROWS_AS(generate_corpus({}, {}, cfg, 0), std::invalid_argument);
  std::vector<SplitBudget> no_test{{5, 0, 0}, {5, 0, 0}};
  CHECK_THROWS_AS(generate_corpus(specs, no_test, cfg, 0),
                  std::invalid_argument);
}

TEST_CASE("manifest round trip is identity") {
  GenConfig cfg;
  cfg.max_duration_s = 4.0;
  auto specs = generate_language_specs(2, 1, cfg.feat_dim, cfg, 2);
  std::vector<SplitBudget> budget{{1, 0, 1}, {0, 0, 1}};
  CorpusManifest m = generate_corpus(specs, budget, cfg, 4);

  fs::path dir = temp_dir("manifest_rt");
  write_manifest(m, dir / "manifest.jsonl");
  CorpusManifest loaded = load_manifest(dir / "manifest.jsonl");

  CHECK(loaded.language_list == m.language_list);
  REQUIRE(loaded.records.size() == m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) {
    const Recording &a = m.records[i], &b = loaded.records[i];
    CHECK(a.id == b.id);
    CHECK(a.language == b.language);
    CHECK(a.duration_s == b.duration_s);
    CHECK(a.frame_rate_hz == b.frame_rate_hz);
    CHECK(a.metadata == b.metadata);
    CHECK(a.split == b.split);
    CHECK(a.frames == b.frames);
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest parse errors carry the line number") {
  fs::path dir = temp_dir("manifest_bad");
  {
    std::ofstream h(dir / "manifest.header.json");
    h << R"({"language_list":["lang00"],"sentinel":"U+241F"})";
    std::ofstream f(dir / "manifest.jsonl");
    f << R"({"id":"a","language":"lang00","duration_s":1.0,"frame_rate_hz":100.0,)"
      << R"("features_path":"features/a.mslf","title":"","description":"",)"
      << R"("location":"","split":"validation"})"
      << "\n";
  }
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    CHECK(std::string(e.what()).find("validation") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing feature file is reported by name") {
  fs::path dir = temp_dir("manifest_missing_feat");
  {
    std::ofstream h(dir / "manifest.header.json");
    h << R"({"language_list":["lang00"],"sentinel":"U+241F"})";
    std::ofstream f(dir / "manifest.jsonl");
    f << R"({"id":"a","language":"lang00","duration_s":1.0,"frame_rate_hz":100.0,)"
      << R"("features_path":"features/absent.mslf","title":"","description":"",)"
      << R"("location":"","split":"test"})"
      << "\n";
  }
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL("expected io error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("absent.mslf") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("feature file round trip and magic check") {
  fs::path dir = temp_dir("feat");
  Matf m(3, 4);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = static_cast<float>(r * 10 + c) / 3.f;
  write_feature_file(dir / "x.mslf", m);
  CHECK(load_feature_file(dir / "x.mslf") == m);

  std::ofstream bad(dir / "bad.mslf", std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK_THROWS_AS(load_feature_file(dir / "bad.mslf"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("language spec file round trip") {
  GenConfig cfg;
  auto specs = generate_language_specs(4, 2, cfg.feat_dim, cfg, 9);
  fs::path dir = temp_dir("specs_rt");
  write_language_specs(specs, dir / "specs.json");
  auto loaded = load_language_specs(dir / "specs.json");
  REQUIRE(loaded.size() == specs.size());
  for (size_t i = 0; i < specs.size(); ++i)
    CHECK(same_specs(specs[i], loaded[i]));
  fs::remove_all(dir);
}
