#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "museli/corpus.hpp"
#include "museli/model.hpp"
#include "museli/tokenizer.hpp"

namespace museli {

template <typename Scalar>
struct Batch {
  // Padded to batch maxima; *_len holds the valid prefix length per item.
  std::vector<Mat<Scalar>> frames;
  std::vector<int> frame_len;
  std::vector<std::vector<int>> tokens;  // padded with kPadId
  std::vector<int> token_len;
  std::vector<int> labels;
  std::vector<double> durations_s;

  int size() const { return static_cast<int>(labels.size()); }
};

struct TrainConfig {
  int batch_size = 16;
  int total_steps = 3000;
  double peak_learning_rate = 3e-4;
  int warmup_steps = 300;
  uint64_t seed = 0;
  ForwardMode mode = ForwardMode::multimodal();
  int max_text_tokens = 400;
  int max_speech_frames = 1600;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // 0: final checkpoint only
  int eval_every = 0;        // 0: no periodic dev evaluation
  bool blank_location = false;

  void validate() const {
    if (warmup_steps > total_steps)
      throw std::invalid_argument("warmup_steps must be <= total_steps");
    if (total_steps < 0 || warmup_steps < 0)
      throw std::invalid_argument("step counts must be nonnegative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (peak_learning_rate <= 0 || adam_eps <= 0)
      throw std::invalid_argument("rates must be positive");
    if (max_text_tokens < 0 || max_speech_frames < 1)
      throw std::invalid_argument("bad trim limits");
  }
};

// Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at
// total_steps.
inline double lr_schedule(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw std::invalid_argument("step outside [0, total_steps]");
  if (step <= cfg.warmup_steps)
    return cfg.warmup_steps == 0
               ? cfg.peak_learning_rate
               : cfg.peak_learning_rate * step / cfg.warmup_steps;
  return cfg.peak_learning_rate * (cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

template <typename Scalar>
std::vector<Batch<Scalar>> make_batches(const CorpusManifest& manifest,
                                        const Tokenizer& tokenizer,
                                        const TrainConfig& cfg, Split split,
                                        uint64_t epoch_seed,
                                        bool shuffle = true) {
  std::vector<int> order;
  for (size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].split == split)
      order.push_back(static_cast<int>(i));
  if (order.empty())
    throw std::invalid_argument("no records in split " + to_string(split));
  if (shuffle) {
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<Batch<Scalar>> batches;
  for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const size_t end = std::min(order.size(), start + cfg.batch_size);
    Batch<Scalar> b;
    int max_frames = 0, max_tokens = 0;
    std::vector<Mat<Scalar>> raw_frames;
    std::vector<std::vector<int>> raw_tokens;
    for (size_t i = start; i < end; ++i) {
      const Recording& r = manifest.records[order[i]];
      Mat<Scalar> f = r.frames.template cast<Scalar>();
      if (f.rows() > cfg.max_speech_frames)
        f = f.topRows(cfg.max_speech_frames).eval();
      Metadata m = r.metadata;
      if (cfg.blank_location) m.location.clear();
      std::vector<int> ids = trim_tokens(
          tokenizer.encode(tokenizer.serialize_metadata(m)),
          cfg.max_text_tokens);
      max_frames = std::max(max_frames, static_cast<int>(f.rows()));
      max_tokens = std::max(max_tokens, static_cast<int>(ids.size()));
      b.frame_len.push_back(static_cast<int>(f.rows()));
      b.token_len.push_back(static_cast<int>(ids.size()));
      b.labels.push_back(manifest.language_index(r.language));
      b.durations_s.push_back(r.duration_s);
      raw_frames.push_back(std::move(f));
      raw_tokens.push_back(std::move(ids));
    }
    for (size_t i = 0; i < raw_frames.size(); ++i) {
      Mat<Scalar> padded = Mat<Scalar>::Zero(max_frames, raw_frames[i].cols());
      padded.topRows(raw_frames[i].rows()) = raw_frames[i];
      b.frames.push_back(std::move(padded));
      raw_tokens[i].resize(max_tokens, kPadId);
      b.tokens.push_back(std::move(raw_tokens[i]));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// Batch logits via the per-item graph; padding is stripped before the
// encoders see it.
template <typename Scalar>
Mat<Scalar> forward(const Batch<Scalar>& batch, ModelParams<Scalar>& params,
                    const ModelConfig& cfg, const ForwardMode& mode) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  Mat<Scalar> logits(batch.size(), cfg.num_languages);
  for (int i = 0; i < batch.size(); ++i) {
    Tape<Scalar> t;
    Mat<Scalar> frames = batch.frames[i].topRows(batch.frame_len[i]);
    std::vector<int> ids(batch.tokens[i].begin(),
                         batch.tokens[i].begin() + batch.token_len[i]);
    const int node =
        detail::item_logits_graph(t, frames, ids, params,
                                  static_cast<ModelParams<Scalar>*>(nullptr),
                                  cfg, mode);
    logits.row(i) = t.val(node).row(0);
  }
  return logits;
}

// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
double cross_entropy(const Mat<Scalar>& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows())
    throw std::invalid_argument("cross_entropy: label count mismatch");
  if (logits.rows() == 0) throw std::invalid_argument("cross_entropy: empty");
  double total = 0.0;
  for (int i = 0; i < logits.rows(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols())
      throw std::invalid_argument("label out of range: " +
                                  std::to_string(labels[i]));
    const Scalar mx = logits.row(i).maxCoeff();
    const double lse =
        std::log((logits.row(i).array() - mx).exp().sum()) + mx;
    total += lse - logits(i, labels[i]);
  }
  return total / logits.rows();
}

// One forward/backward over a batch; returns mean loss, accumulates
// parameter gradients into grads (not zeroed here).
template <typename Scalar>
double batch_loss_and_grads(const Batch<Scalar>& batch,
                            ModelParams<Scalar>& params,
                            ModelParams<Scalar>* grads,
                            const ModelConfig& cfg, const ForwardMode& mode) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  const Scalar inv_b = Scalar(1) / Scalar(batch.size());
  double total = 0.0;
  for (int i = 0; i < batch.size(); ++i) {
    Tape<Scalar> t;
    Mat<Scalar> frames = batch.frames[i].topRows(batch.frame_len[i]);
    std::vector<int> ids(batch.tokens[i].begin(),
                         batch.tokens[i].begin() + batch.token_len[i]);
    const int logits =
        detail::item_logits_graph(t, frames, ids, params, grads, cfg, mode);
    const int loss = t.cross_entropy(logits, batch.labels[i]);
    total += t.val(loss)(0, 0);
    if (grads) t.backward(loss, inv_b);
  }
  return total / batch.size();
}

template <typename Scalar>
struct AdamState {
  ModelParams<Scalar> m, v;
  int64_t t = 0;

  static AdamState init(const ModelConfig& cfg) {
    return AdamState{ModelParams<Scalar>::zeros_like(cfg),
                     ModelParams<Scalar>::zeros_like(cfg), 0};
  }
};

template <typename Scalar>
void adam_update(ModelParams<Scalar>& params, ModelParams<Scalar>& grads,
                 AdamState<Scalar>& state, double lr, const TrainConfig& cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, state.t);
  // Walk the three parameter sets in lockstep; tensor order is fixed by
  // the visitor.
  std::vector<Mat<Scalar>*> ps, gs, ms, vs;
  params.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { ps.push_back(&x); });
  grads.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { gs.push_back(&x); });
  state.m.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { ms.push_back(&x); });
  state.v.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { vs.push_back(&x); });
  for (size_t i = 0; i < ps.size(); ++i) {
    auto& p = *ps[i];
    auto& g = *gs[i];
    auto& m = *ms[i];
    auto& v = *vs[i];
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
    v = (cfg.adam_beta2 * v.array() +
         (1.0 - cfg.adam_beta2) * g.array().square())
            .matrix();
    p.array() -= lr * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + cfg.adam_eps);
  }
}

struct TrainStepLog {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double dev_accuracy = -1.0;  // < 0 when not evaluated at this step
};

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> params;
  std::vector<TrainStepLog> log;
};

template <typename Scalar>
double split_accuracy(const CorpusManifest& manifest, Split split,
                      ModelParams<Scalar>& params, const ModelConfig& mcfg,
                      const TrainConfig& tcfg, const Tokenizer& tokenizer) {
  auto batches = make_batches<Scalar>(manifest, tokenizer, tcfg, split,
                                      /*epoch_seed=*/0, /*shuffle=*/false);
  int correct = 0, total = 0;
  for (const auto& b : batches) {
    Mat<Scalar> logits = forward(b, params, mcfg, tcfg.mode);
    for (int i = 0; i < b.size(); ++i) {
      int pred = 0;
      logits.row(i).maxCoeff(&pred);
      correct += (pred == b.labels[i]);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

template <typename Scalar>
TrainResult<Scalar> train(const CorpusManifest& manifest,
                          const ModelConfig& mcfg, const TrainConfig& tcfg,
                          const Tokenizer& tokenizer) {
  mcfg.validate();
  tcfg.validate();
  TrainResult<Scalar> result{ModelParams<Scalar>::init(mcfg, tcfg.seed), {}};
  if (tcfg.total_steps == 0) return result;

  ModelParams<Scalar> grads = ModelParams<Scalar>::zeros_like(mcfg);
  AdamState<Scalar> adam = AdamState<Scalar>::init(mcfg);
  const bool has_dev = std::any_of(
      manifest.records.begin(), manifest.records.end(),
      [](const Recording& r) { return r.split == Split::dev; });

  int step = 0;
  uint64_t epoch = 0;
  while (step < tcfg.total_steps) {
    auto batches = make_batches<Scalar>(manifest, tokenizer, tcfg,
                                        Split::train, tcfg.seed + epoch);
    for (const auto& batch : batches) {
      if (step >= tcfg.total_steps) break;
      grads.set_zero();
      const double loss =
          batch_loss_and_grads(batch, result.params, &grads, mcfg, tcfg.mode);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged: non-finite loss at step " +
                                 std::to_string(step));
      const double lr = lr_schedule(step + 1, tcfg);
      adam_update(result.params, grads, adam, lr, tcfg);
      ++step;
      TrainStepLog entry{step, loss, lr, -1.0};
      if (has_dev && tcfg.eval_every > 0 &&
          (step % tcfg.eval_every == 0 || step == tcfg.total_steps))
        entry.dev_accuracy = split_accuracy(manifest, Split::dev,
                                            result.params, mcfg, tcfg,
                                            tokenizer);
      result.log.push_back(entry);
    }
    ++epoch;
  }
  return result;
}

// Central finite differences against the analytic gradient for every
// parameter tensor; returns the worst relative error. Entries are
// subsampled deterministically on large tensors.
template <typename Scalar>
double grad_check(const ModelConfig& mcfg, const Batch<Scalar>& batch,
                  const ForwardMode& mode, double eps,
                  uint64_t param_seed = 1234,
                  int max_entries_per_tensor = 6) {
  if (eps <= 0) throw std::invalid_argument("eps must be positive");
  ModelParams<Scalar> params = ModelParams<Scalar>::init(mcfg, param_seed);
  ModelParams<Scalar> grads = ModelParams<Scalar>::zeros_like(mcfg);
  batch_loss_and_grads(batch, params, &grads, mcfg, mode);

  auto loss_at = [&]() {
    return batch_loss_and_grads(batch, params,
                                static_cast<ModelParams<Scalar>*>(nullptr),
                                mcfg, mode);
  };

  std::vector<Mat<Scalar>*> ps, gs;
  params.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { ps.push_back(&x); });
  grads.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { gs.push_back(&x); });

  double worst = 0.0;
  for (size_t ti = 0; ti < ps.size(); ++ti) {
    Mat<Scalar>& p = *ps[ti];
    const Mat<Scalar>& g = *gs[ti];
    const int n = static_cast<int>(p.size());
    std::vector<int> entries;
    if (n <= max_entries_per_tensor) {
      for (int i = 0; i < n; ++i) entries.push_back(i);
    } else {
      std::mt19937_64 rng(param_seed + ti);
      std::uniform_int_distribution<int> pick(0, n - 1);
      for (int i = 0; i < max_entries_per_tensor; ++i)
        entries.push_back(pick(rng));
    }
    for (int e : entries) {
      Scalar* x = p.data() + e;
      const Scalar orig = *x;
      *x = orig + static_cast<Scalar>(eps);
      const double lp = loss_at();
      *x = orig - static_cast<Scalar>(eps);
      const double lm = loss_at();
      *x = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = static_cast<double>(*(g.data() + e));
      const double err = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic) + std::abs(numeric), 1e-2);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace museli
