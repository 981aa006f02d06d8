#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "museli/checkpoint.hpp"
#include "museli/corpus.hpp"
#include "museli/training.hpp"

using namespace museli;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(int num_languages, int feat_dim) {
  ModelConfig c;
  c.feat_dim = feat_dim;
  c.d_model = 8;
  c.num_speech_layers = 1;
  c.num_mm_layers = 2;
  c.num_heads = 2;
  c.conv_kernel_size = 3;
  c.ff_multiplier = 2;
  c.num_languages = num_languages;
  return c;
}

CorpusManifest tiny_corpus(int train_per_lang, int dev_per_lang,
                           int test_per_lang, uint64_t seed,
                           double max_duration = 3.0) {
  GenConfig cfg;
  cfg.feat_dim = 6;
  cfg.max_duration_s = max_duration;
  auto specs = generate_language_specs(2, 1, cfg.feat_dim, cfg, seed);
  std::vector<SplitBudget> budget(
      2, SplitBudget{train_per_lang, dev_per_lang, test_per_lang});
  return generate_corpus(specs, budget, cfg, seed);
}

bool params_equal(ModelParams<double>& a, ModelParams<double>& b,
                  double tol = 0.0) {
  std::vector<Matd*> ta, tb;
  a.for_each_tensor([&](const std::string&, Matd& x) { ta.push_back(&x); });
  b.for_each_tensor([&](const std::string&, Matd& x) { tb.push_back(&x); });
  if (ta.size() != tb.size()) return false;
  for (size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols())
      return false;
    if ((*ta[i] - *tb[i]).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("lr_schedule: warmup then linear decay") {
  TrainConfig cfg;
  cfg.total_steps = 1000;
  cfg.warmup_steps = 100;
  cfg.peak_learning_rate = 3e-4;

  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(50, cfg) == doctest::Approx(1.5e-4));
  CHECK(lr_schedule(100, cfg) == doctest::Approx(3e-4));
  CHECK(lr_schedule(550, cfg) == doctest::Approx(1.5e-4));
  CHECK(lr_schedule(1000, cfg) == 0.0);

  // piecewise linearity on each side of the peak
  for (int s = 1; s < 100; ++s)
    CHECK(lr_schedule(s, cfg) == doctest::Approx(3e-4 * s / 100.0));
  for (int s = 100; s <= 1000; ++s)
    CHECK(lr_schedule(s, cfg) ==
          doctest::Approx(3e-4 * (1000 - s) / 900.0));

  CHECK_THROWS_AS(lr_schedule(-1, cfg), std::invalid_argument);
  CHECK_THROWS_AS(lr_schedule(1001, cfg), std::invalid_argument);

  cfg.warmup_steps = 0;
  CHECK(lr_schedule(0, cfg) == doctest::Approx(3e-4));
}

TEST_CASE("cross_entropy oracles") {
  Matd uniform = Matd::Zero(1, 4);
  CHECK(cross_entropy(uniform, {0}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Matd confident = Matd::Zero(1, 4);
  confident(0, 2) = 40.0;
  CHECK(cross_entropy(confident, {2}) < 1e-10);

  Matd three(1, 3);
  three << 1.0, 2.0, 3.0;
  CHECK(cross_entropy(three, {2}) == doctest::Approx(0.40760596444438079));

  // mean over the batch
  Matd both(2, 3);
  both.row(0) = three.row(0);
  both.row(1) = three.row(0);
  CHECK(cross_entropy(both, {2, 2}) == doctest::Approx(0.40760596444438079));

  CHECK_THROWS_AS(cross_entropy(three, {3}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(three, {-1}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(three, {0, 1}), std::invalid_argument);
}

TEST_CASE("make_batches: sizes, trimming, determinism") {
  CorpusManifest m = tiny_corpus(17, 2, 5, 9);  // 34 train records
  Tokenizer tok;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_text_tokens = 40;
  cfg.max_speech_frames = 120;

  auto batches = make_batches<double>(m, tok, cfg, Split::train, 1);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 16);
  CHECK(batches[1].size() == 16);
  CHECK(batches[2].size() == 2);

  int total = 0;
  for (const auto& b : batches) {
    total += b.size();
    for (int i = 0; i < b.size(); ++i) {
      CHECK(b.frame_len[i] <= cfg.max_speech_frames);
      CHECK(b.token_len[i] <= cfg.max_text_tokens);
      CHECK(b.frames[i].rows() >= b.frame_len[i]);
      CHECK(static_cast<int>(b.tokens[i].size()) >= b.token_len[i]);
      CHECK(b.labels[i] >= 0);
      CHECK(b.labels[i] < 2);
    }
  }
  CHECK(total == 34);

  auto again = make_batches<double>(m, tok, cfg, Split::train, 1);
  REQUIRE(again.size() == batches.size());
  for (size_t b = 0; b < batches.size(); ++b) {
    CHECK(batches[b].labels == again[b].labels);
    CHECK(batches[b].tokens == again[b].tokens);
    for (int i = 0; i < batches[b].size(); ++i)
      CHECK(batches[b].frames[i] == again[b].frames[i]);
  }
  auto reshuffled = make_batches<double>(m, tok, cfg, Split::train, 2);
  bool any_diff = false;
  for (size_t b = 0; b < batches.size() && !any_diff; ++b)
    any_diff = batches[b].labels != reshuffled[b].labels ||
               batches[b].durations_s != reshuffled[b].durations_s;
  CHECK(any_diff);

  CorpusManifest no_dev = tiny_corpus(2, 0, 1, 4);
  CHECK_THROWS_AS(make_batches<double>(no_dev, tok, cfg, Split::dev, 0),
                  std::invalid_argument);
}

TEST_CASE("make_batches trims overlong recordings") {
  CorpusManifest m = tiny_corpus(2, 0, 1, 13, /*max_duration=*/3.0);
  // longest possible recording here is 300 frames; force trimming at 150
  Tokenizer tok;
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_speech_frames = 150;
  cfg.max_text_tokens = 10;
  auto batches = make_batches<double>(m, tok, cfg, Split::train, 0);
  for (const auto& b : batches)
    for (int i = 0; i < b.size(); ++i) {
      CHECK(b.frame_len[i] <= 150);
      CHECK(b.token_len[i] <= 10);
    }
}

TEST_CASE("blank_location removes the location field from the tokens") {
  CorpusManifest m = tiny_corpus(4, 0, 1, 21);
  Tokenizer tok;
  TrainConfig cfg;
  cfg.batch_size = 8;
  auto plain = make_batches<double>(m, tok, cfg, Split::train, 0,
                                    /*shuffle=*/false);
  cfg.blank_location = true;
  auto blanked = make_batches<double>(m, tok, cfg, Split::train, 0,
                                      /*shuffle=*/false);
  REQUIRE(plain.size() == blanked.size());
  bool any_shorter = false;
  for (size_t b = 0; b < plain.size(); ++b)
    for (int i = 0; i < plain[b].size(); ++i) {
      CHECK(blanked[b].token_len[i] <= plain[b].token_len[i]);
      any_shorter |= blanked[b].token_len[i] < plain[b].token_len[i];
      // blanked sequence must end right after the second separator
      const auto& ids = blanked[b].tokens[i];
      CHECK(ids[blanked[b].token_len[i] - 1] == kSepId);
    }
  CHECK(any_shorter);
}

TEST_CASE("analytic gradients match finite differences") {
  CorpusManifest m = tiny_corpus(2, 0, 1, 17, /*max_duration=*/1.5);
  Tokenizer tok;
  TrainConfig tcfg;
  tcfg.batch_size = 2;
  tcfg.max_speech_frames = 40;
  tcfg.max_text_tokens = 30;
  ModelConfig mcfg = tiny_model(2, 6);
  auto batches = make_batches<double>(m, tok, tcfg, Split::train, 3);
  REQUIRE(!batches.empty());
  Batch<double> batch = batches[0];
  for (auto& f : batch.frames) f = f.topRows(24).eval();
  for (auto& l : batch.frame_len) l = std::min(l, 24);

  for (const ForwardMode& mode :
       {ForwardMode::multimodal(), ForwardMode::speech_only(),
        ForwardMode::text_only(), ForwardMode::single_layer(1)}) {
    CAPTURE(mode.name());
    CHECK(grad_check(mcfg, batch, mode, 1e-5) < 1e-4);
  }
  CHECK_THROWS_AS(grad_check(mcfg, batch, ForwardMode::multimodal(), 0.0),
                  std::invalid_argument);
}

TEST_CASE("training is deterministic and decreases the loss") {
  CorpusManifest m = tiny_corpus(6, 2, 2, 31, /*max_duration=*/1.5);
  Tokenizer tok;
  ModelConfig mcfg = tiny_model(2, 6);
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.total_steps = 30;
  tcfg.warmup_steps = 3;
  tcfg.peak_learning_rate = 3e-3;
  tcfg.max_speech_frames = 150;
  tcfg.seed = 5;

  auto r1 = train<double>(m, mcfg, tcfg, tok);
  auto r2 = train<double>(m, mcfg, tcfg, tok);
  REQUIRE(r1.log.size() == 30);
  CHECK(params_equal(r1.params, r2.params, 1e-12));
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].loss == doctest::Approx(r2.log[i].loss).epsilon(1e-9));
    CHECK(r1.log[i].lr == r2.log[i].lr);
  }

  const double first = r1.log.front().loss;
  const double last = r1.log.back().loss;
  CHECK(last < first);

  // zero steps returns the initialization untouched
  TrainConfig zero = tcfg;
  zero.total_steps = 0;
  zero.warmup_steps = 0;
  auto rz = train<double>(m, mcfg, zero, tok);
  auto init = ModelParams<double>::init(mcfg, zero.seed);
  CHECK(params_equal(rz.params, init));
  CHECK(rz.log.empty());
}

TEST_CASE("periodic dev accuracy lands on the requested steps") {
  CorpusManifest m = tiny_corpus(4, 2, 1, 37, /*max_duration=*/1.5);
  Tokenizer tok;
  ModelConfig mcfg = tiny_model(2, 6);
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.total_steps = 6;
  tcfg.warmup_steps = 1;
  tcfg.eval_every = 3;
  auto r = train<double>(m, mcfg, tcfg, tok);
  REQUIRE(r.log.size() == 6);
  for (const auto& e : r.log) {
    if (e.step % 3 == 0)
      CHECK(e.dev_accuracy >= 0.0);
    else
      CHECK(e.dev_accuracy < 0.0);
  }
}

TEST_CASE("checkpoint round trip preserves config and parameters") {
  ModelConfig mcfg = tiny_model(3, 6);
  mcfg.pooling = PoolingKind::mean;
  Checkpoint ckpt;
  ckpt.config = mcfg;
  ckpt.language_list = {"lang00", "lang01", "lang02"};
  ckpt.params = ModelParams<double>::init(mcfg, 77);

  fs::path dir = fs::temp_directory_path() / "museli_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(ckpt, dir / "ckpt.bin");
  Checkpoint loaded = load_checkpoint(dir / "ckpt.bin");

  CHECK(loaded.language_list == ckpt.language_list);
  CHECK(loaded.config.d_model == mcfg.d_model);
  CHECK(loaded.config.feat_dim == mcfg.feat_dim);
  CHECK(loaded.config.num_mm_layers == mcfg.num_mm_layers);
  CHECK(loaded.config.num_heads == mcfg.num_heads);
  CHECK(loaded.config.pooling == PoolingKind::mean);
  // tensors survive a float32 round trip
  CHECK(params_equal(loaded.params, ckpt.params, 1e-6));

  CHECK(!file_hash_hex(dir / "ckpt.bin").empty());
  CHECK(file_hash_hex(dir / "ckpt.bin") == file_hash_hex(dir / "ckpt.bin"));
  fs::remove_all(dir);
}

TEST_CASE("adam takes a step against the gradient") {
  ModelConfig mcfg = tiny_model(2, 6);
  TrainConfig tcfg;
  auto params = ModelParams<double>::init(mcfg, 3);
  auto before = params;
  auto grads = ModelParams<double>::zeros_like(mcfg);
  grads.classifier_b(0, 0) = 1.0;
  auto adam = AdamState<double>::init(mcfg);
  adam_update(params, grads, adam, 0.1, tcfg);
  CHECK(params.classifier_b(0, 0) < before.classifier_b(0, 0));
  CHECK(params.classifier_w == before.classifier_w);
}
