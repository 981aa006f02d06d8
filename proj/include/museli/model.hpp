#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "museli/autodiff.hpp"
#include "museli/tokenizer.hpp"
#include "museli/types.hpp"

namespace museli {

enum class PoolingKind { attentive, mean };

struct ModelConfig {
  int feat_dim = 16;
  int d_model = 64;
  int num_speech_layers = 2;   // conformer layers in the speech encoder
  int num_mm_layers = 4;       // conformer layers in the multimodal encoder
  int num_heads = 4;
  int conv_kernel_size = 7;
  int ff_multiplier = 4;
  int subsample_factor = 4;    // power of two; realized as stride-2 convs
  int vocab_size = kVocabSize;
  int num_languages = 0;
  int max_text_tokens = 400;
  int max_speech_frames = 1600;
  PoolingKind pooling = PoolingKind::attentive;

  void validate() const;
  int subsample_stages() const;
  int head_dim() const { return d_model / num_heads; }
};

struct ForwardMode {
  enum class Kind { multimodal, speech_only, text_only, single_layer };
  Kind kind = Kind::multimodal;
  int layer = 0;  // 1-based, single_layer only

  static ForwardMode multimodal() { return {Kind::multimodal, 0}; }
  static ForwardMode speech_only() { return {Kind::speech_only, 0}; }
  static ForwardMode text_only() { return {Kind::text_only, 0}; }
  static ForwardMode single_layer(int k) { return {Kind::single_layer, k}; }

  bool uses_speech() const { return kind != Kind::text_only; }
  bool uses_text() const {
    return kind != Kind::speech_only;
  }
  std::string name() const;
  static ForwardMode from_name(const std::string& s);
};

template <typename Scalar>
struct AttentionParams {
  Mat<Scalar> wq, wk, wv, wo;  // d x d
  Mat<Scalar> bq, bk, bv, bo;  // 1 x d
};

template <typename Scalar>
struct ConformerParams {
  // Half-step feed-forward modules.
  Mat<Scalar> ff1_ln_g, ff1_ln_b, ff1_w1, ff1_b1, ff1_w2, ff1_b2;
  Mat<Scalar> ff2_ln_g, ff2_ln_b, ff2_w1, ff2_b1, ff2_w2, ff2_b2;
  // Self-attention module.
  Mat<Scalar> att_ln_g, att_ln_b;
  AttentionParams<Scalar> att;
  // Convolution module: pointwise GLU, depthwise, pointwise out.
  Mat<Scalar> conv_ln_g, conv_ln_b;
  Mat<Scalar> pw_a_w, pw_a_b, pw_b_w, pw_b_b;
  Mat<Scalar> dw_kernel, dw_bias;  // kernel x d, 1 x d
  Mat<Scalar> pw_out_w, pw_out_b;
  // Final layer norm.
  Mat<Scalar> out_ln_g, out_ln_b;
};

template <typename Scalar>
struct ModelParams {
  std::vector<Mat<Scalar>> subsample_w;  // per stage: (kernel*cin) x d_model
  std::vector<Mat<Scalar>> subsample_b;  // per stage: 1 x d_model
  std::vector<ConformerParams<Scalar>> speech_layers;
  Mat<Scalar> text_embedding;  // vocab x d_model
  std::vector<ConformerParams<Scalar>> mm_layers;
  Mat<Scalar> layer_logits;  // 1 x K
  Mat<Scalar> pool_query;    // 1 x d_model
  AttentionParams<Scalar> pool_att;
  Mat<Scalar> classifier_w;  // d_model x N
  Mat<Scalar> classifier_b;  // 1 x N

  template <typename Fn>
  void for_each_tensor(Fn&& fn);

  static ModelParams zeros_like(const ModelConfig& config);
  static ModelParams init(const ModelConfig& config, uint64_t seed);
  void set_zero();
};

inline void ModelConfig::validate() const {
  if (d_model < 1 || num_heads < 1 || num_mm_layers < 1 || ff_multiplier < 1 ||
      conv_kernel_size < 1 || feat_dim < 1 || num_languages < 1)
    throw std::invalid_argument("model config counts must be >= 1");
  if (num_speech_layers < 0)
    throw std::invalid_argument("num_speech_layers must be >= 0");
  if (d_model % num_heads != 0)
    throw std::invalid_argument("d_model must be divisible by num_heads");
  int f = subsample_factor;
  while (f > 1 && f % 2 == 0) f /= 2;
  if (f != 1)
    throw std::invalid_argument("subsample_factor must be a power of two");
}

inline int ModelConfig::subsample_stages() const {
  int stages = 0;
  for (int f = subsample_factor; f > 1; f /= 2) ++stages;
  return stages;
}

inline std::string ForwardMode::name() const {
  switch (kind) {
    case Kind::multimodal: return "multimodal";
    case Kind::speech_only: return "speech_only";
    case Kind::text_only: return "text_only";
    case Kind::single_layer: return "single_layer_" + std::to_string(layer);
  }
  throw std::logic_error("bad mode");
}

inline ForwardMode ForwardMode::from_name(const std::string& s) {
  if (s == "multimodal") return multimodal();
  if (s == "speech_only") return speech_only();
  if (s == "text_only" || s == "metadata_only") return text_only();
  const std::string prefix = "single_layer_";
  if (s.rfind(prefix, 0) == 0)
    return single_layer(std::stoi(s.substr(prefix.size())));
  throw std::invalid_argument(
      "unknown mode \"" + s +
      "\"; valid: multimodal, speech_only, text_only, single_layer_K");
}

namespace detail {

template <typename Scalar, typename Fn>
void visit_attention(AttentionParams<Scalar>& a, const std::string& prefix,
                     Fn&& fn) {
  fn(prefix + ".wq", a.wq);
  fn(prefix + ".wk", a.wk);
  fn(prefix + ".wv", a.wv);
  fn(prefix + ".wo", a.wo);
  fn(prefix + ".bq", a.bq);
  fn(prefix + ".bk", a.bk);
  fn(prefix + ".bv", a.bv);
  fn(prefix + ".bo", a.bo);
}

template <typename Scalar, typename Fn>
void visit_conformer(ConformerParams<Scalar>& c, const std::string& prefix,
                     Fn&& fn) {
  fn(prefix + ".ff1_ln_g", c.ff1_ln_g);
  fn(prefix + ".ff1_ln_b", c.ff1_ln_b);
  fn(prefix + ".ff1_w1", c.ff1_w1);
  fn(prefix + ".ff1_b1", c.ff1_b1);
  fn(prefix + ".ff1_w2", c.ff1_w2);
  fn(prefix + ".ff1_b2", c.ff1_b2);
  fn(prefix + ".att_ln_g", c.att_ln_g);
  fn(prefix + ".att_ln_b", c.att_ln_b);
  visit_attention(c.att, prefix + ".att", fn);
  fn(prefix + ".conv_ln_g", c.conv_ln_g);
  fn(prefix + ".conv_ln_b", c.conv_ln_b);
  fn(prefix + ".pw_a_w", c.pw_a_w);
  fn(prefix + ".pw_a_b", c.pw_a_b);
  fn(prefix + ".pw_b_w", c.pw_b_w);
  fn(prefix + ".pw_b_b", c.pw_b_b);
  fn(prefix + ".dw_kernel", c.dw_kernel);
  fn(prefix + ".dw_bias", c.dw_bias);
  fn(prefix + ".pw_out_w", c.pw_out_w);
  fn(prefix + ".pw_out_b", c.pw_out_b);
  fn(prefix + ".ff2_ln_g", c.ff2_ln_g);
  fn(prefix + ".ff2_ln_b", c.ff2_ln_b);
  fn(prefix + ".ff2_w1", c.ff2_w1);
  fn(prefix + ".ff2_b1", c.ff2_b1);
  fn(prefix + ".ff2_w2", c.ff2_w2);
  fn(prefix + ".ff2_b2", c.ff2_b2);
  fn(prefix + ".out_ln_g", c.out_ln_g);
  fn(prefix + ".out_ln_b", c.out_ln_b);
}

}  // namespace detail

template <typename Scalar>
template <typename Fn>
void ModelParams<Scalar>::for_each_tensor(Fn&& fn) {
  for (size_t i = 0; i < subsample_w.size(); ++i) {
    fn("subsample" + std::to_string(i) + ".w", subsample_w[i]);
    fn("subsample" + std::to_string(i) + ".b", subsample_b[i]);
  }
  for (size_t i = 0; i < speech_layers.size(); ++i)
    detail::visit_conformer(speech_layers[i], "speech" + std::to_string(i),
                            fn);
  fn("text_embedding", text_embedding);
  for (size_t i = 0; i < mm_layers.size(); ++i)
    detail::visit_conformer(mm_layers[i], "mm" + std::to_string(i), fn);
  fn("layer_logits", layer_logits);
  fn("pool_query", pool_query);
  detail::visit_attention(pool_att, "pool", fn);
  fn("classifier_w", classifier_w);
  fn("classifier_b", classifier_b);
}

namespace detail {

template <typename Scalar>
void shape_attention(AttentionParams<Scalar>& a, int d) {
  a.wq.resize(d, d);
  a.wk.resize(d, d);
  a.wv.resize(d, d);
  a.wo.resize(d, d);
  a.bq.resize(1, d);
  a.bk.resize(1, d);
  a.bv.resize(1, d);
  a.bo.resize(1, d);
}

template <typename Scalar>
void shape_conformer(ConformerParams<Scalar>& c, const ModelConfig& cfg) {
  const int d = cfg.d_model;
  const int f = cfg.ff_multiplier * d;
  c.ff1_ln_g.resize(1, d); c.ff1_ln_b.resize(1, d);
  c.ff1_w1.resize(d, f); c.ff1_b1.resize(1, f);
  c.ff1_w2.resize(f, d); c.ff1_b2.resize(1, d);
  c.ff2_ln_g.resize(1, d); c.ff2_ln_b.resize(1, d);
  c.ff2_w1.resize(d, f); c.ff2_b1.resize(1, f);
  c.ff2_w2.resize(f, d); c.ff2_b2.resize(1, d);
  c.att_ln_g.resize(1, d); c.att_ln_b.resize(1, d);
  shape_attention(c.att, d);
  c.conv_ln_g.resize(1, d); c.conv_ln_b.resize(1, d);
  c.pw_a_w.resize(d, d); c.pw_a_b.resize(1, d);
  c.pw_b_w.resize(d, d); c.pw_b_b.resize(1, d);
  c.dw_kernel.resize(cfg.conv_kernel_size, d);
  c.dw_bias.resize(1, d);
  c.pw_out_w.resize(d, d); c.pw_out_b.resize(1, d);
  c.out_ln_g.resize(1, d); c.out_ln_b.resize(1, d);
}

}  // namespace detail

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::zeros_like(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  const int stages = cfg.subsample_stages();
  p.subsample_w.resize(stages);
  p.subsample_b.resize(stages);
  int cin = cfg.feat_dim;
  for (int s = 0; s < stages; ++s) {
    p.subsample_w[s].resize(3 * cin, cfg.d_model);
    p.subsample_b[s].resize(1, cfg.d_model);
    cin = cfg.d_model;
  }
  p.speech_layers.resize(cfg.num_speech_layers);
  for (auto& l : p.speech_layers) detail::shape_conformer(l, cfg);
  p.text_embedding.resize(cfg.vocab_size, cfg.d_model);
  p.mm_layers.resize(cfg.num_mm_layers);
  for (auto& l : p.mm_layers) detail::shape_conformer(l, cfg);
  p.layer_logits.resize(1, cfg.num_mm_layers);
  p.pool_query.resize(1, cfg.d_model);
  detail::shape_attention(p.pool_att, cfg.d_model);
  p.classifier_w.resize(cfg.d_model, cfg.num_languages);
  p.classifier_b.resize(1, cfg.num_languages);
  p.set_zero();
  return p;
}

template <typename Scalar>
void ModelParams<Scalar>::set_zero() {
  for_each_tensor([](const std::string&, Mat<Scalar>& m) { m.setZero(); });
}

// Zero-mean Gaussian with std 1/sqrt(fan_in); layer-norm gains 1, layer
// weights 0 (uniform alpha at the start of training).
template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::init(const ModelConfig& cfg,
                                              uint64_t seed) {
  ModelParams p = zeros_like(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  p.for_each_tensor([&](const std::string& name, Mat<Scalar>& m) {
    const bool is_gain = name.ends_with("ln_g");
    const bool is_bias = m.rows() == 1 && (name.ends_with("_b") ||
                                           name.find(".b") != std::string::npos);
    if (is_gain) {
      m.setOnes();
      return;
    }
    if (name == "layer_logits" || is_bias) {
      m.setZero();
      return;
    }
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<Scalar>(std_dev * gauss(rng));
  });
  // The pooling query is a single row; scale by 1/sqrt(d_model) instead of
  // fan-in 1.
  const double qs = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (int c = 0; c < p.pool_query.cols(); ++c)
    p.pool_query(0, c) = static_cast<Scalar>(qs * gauss(rng));
  return p;
}

// ---------------------------------------------------------------------------
// Graph builders. All builders operate on valid-length (unpadded) inputs;
// batch padding is stripped before reaching them, which realizes the
// masking contract exactly.

namespace detail {

template <typename Scalar>
int multi_head_attention(Tape<Scalar>& t, int q_in, int kv_in,
                         const AttentionParams<Scalar>& ap,
                         AttentionParams<Scalar>* gp, int num_heads) {
  auto param = [&](const Mat<Scalar>& v, Mat<Scalar>* g) {
    return t.param(v, g);
  };
  const int d = static_cast<int>(ap.wq.cols());
  const int dh = d / num_heads;
  const int q = t.add_rowvec(t.matmul(q_in, param(ap.wq, gp ? &gp->wq : nullptr)),
                             param(ap.bq, gp ? &gp->bq : nullptr));
  const int k = t.add_rowvec(t.matmul(kv_in, param(ap.wk, gp ? &gp->wk : nullptr)),
                             param(ap.bk, gp ? &gp->bk : nullptr));
  const int v = t.add_rowvec(t.matmul(kv_in, param(ap.wv, gp ? &gp->wv : nullptr)),
                             param(ap.bv, gp ? &gp->bv : nullptr));
  std::vector<int> heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (int h = 0; h < num_heads; ++h) {
    const int qh = t.slice_cols(q, h * dh, dh);
    const int kh = t.slice_cols(k, h * dh, dh);
    const int vh = t.slice_cols(v, h * dh, dh);
    const int scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
    const int attn = t.row_softmax(scores);
    heads.push_back(t.matmul(attn, vh));
  }
  const int merged = t.concat_cols(heads);
  return t.add_rowvec(t.matmul(merged, param(ap.wo, gp ? &gp->wo : nullptr)),
                      param(ap.bo, gp ? &gp->bo : nullptr));
}

template <typename Scalar>
int conformer_block_graph(Tape<Scalar>& t, int x,
                          const ConformerParams<Scalar>& c,
                          ConformerParams<Scalar>* g,
                          const ModelConfig& cfg) {
  auto param = [&](const Mat<Scalar>& v, Mat<Scalar> ConformerParams<Scalar>::* f) {
    return t.param(v, g ? &(g->*f) : nullptr);
  };
  using CP = ConformerParams<Scalar>;

  // FF1, half step.
  {
    int h = t.layer_norm(x, param(c.ff1_ln_g, &CP::ff1_ln_g),
                         param(c.ff1_ln_b, &CP::ff1_ln_b));
    h = t.swish(t.add_rowvec(t.matmul(h, param(c.ff1_w1, &CP::ff1_w1)),
                             param(c.ff1_b1, &CP::ff1_b1)));
    h = t.add_rowvec(t.matmul(h, param(c.ff1_w2, &CP::ff1_w2)),
                     param(c.ff1_b2, &CP::ff1_b2));
    x = t.add(x, t.scale(h, Scalar(0.5)));
  }
  // Self-attention.
  {
    int h = t.layer_norm(x, param(c.att_ln_g, &CP::att_ln_g),
                         param(c.att_ln_b, &CP::att_ln_b));
    h = multi_head_attention(t, h, h, c.att, g ? &g->att : nullptr,
                             cfg.num_heads);
    x = t.add(x, h);
  }
  // Convolution module.
  {
    int h = t.layer_norm(x, param(c.conv_ln_g, &CP::conv_ln_g),
                         param(c.conv_ln_b, &CP::conv_ln_b));
    const int a = t.add_rowvec(t.matmul(h, param(c.pw_a_w, &CP::pw_a_w)),
                               param(c.pw_a_b, &CP::pw_a_b));
    const int b = t.add_rowvec(t.matmul(h, param(c.pw_b_w, &CP::pw_b_w)),
                               param(c.pw_b_b, &CP::pw_b_b));
    int glu = t.mul_elem(a, t.sigmoid(b));
    int dw = t.depthwise_conv(glu, param(c.dw_kernel, &CP::dw_kernel),
                              param(c.dw_bias, &CP::dw_bias));
    dw = t.swish(dw);
    int out = t.add_rowvec(t.matmul(dw, param(c.pw_out_w, &CP::pw_out_w)),
                           param(c.pw_out_b, &CP::pw_out_b));
    x = t.add(x, out);
  }
  // FF2, half step.
  {
    int h = t.layer_norm(x, param(c.ff2_ln_g, &CP::ff2_ln_g),
                         param(c.ff2_ln_b, &CP::ff2_ln_b));
    h = t.swish(t.add_rowvec(t.matmul(h, param(c.ff2_w1, &CP::ff2_w1)),
                             param(c.ff2_b1, &CP::ff2_b1)));
    h = t.add_rowvec(t.matmul(h, param(c.ff2_w2, &CP::ff2_w2)),
                     param(c.ff2_b2, &CP::ff2_b2));
    x = t.add(x, t.scale(h, Scalar(0.5)));
  }
  return t.layer_norm(x, param(c.out_ln_g, &CP::out_ln_g),
                      param(c.out_ln_b, &CP::out_ln_b));
}

template <typename Scalar>
Mat<Scalar> sinusoidal_positions(int len, int d) {
  Mat<Scalar> pe(len, d);
  for (int pos = 0; pos < len; ++pos)
    for (int i = 0; i < d; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
      pe(pos, i) = static_cast<Scalar>((i % 2 == 0) ? std::sin(angle)
                                                    : std::cos(angle));
    }
  return pe;
}

// Speech front end: strided conv subsampling then the speech conformer
// stack. frames must hold valid rows only.
template <typename Scalar>
int speech_encode_graph(Tape<Scalar>& t, const Mat<Scalar>& frames,
                        ModelParams<Scalar>& p, ModelParams<Scalar>* g,
                        const ModelConfig& cfg) {
  if (frames.rows() < 1)
    throw std::invalid_argument("speech_encode: zero frames");
  if (frames.rows() > cfg.max_speech_frames)
    throw std::invalid_argument("speech_encode: frame count exceeds limit");
  int x = t.input(frames);
  for (size_t s = 0; s < p.subsample_w.size(); ++s) {
    const int w = t.param(p.subsample_w[s], g ? &g->subsample_w[s] : nullptr);
    const int b = t.param(p.subsample_b[s], g ? &g->subsample_b[s] : nullptr);
    x = t.swish(t.conv1d(x, w, b, /*kernel=*/3, /*stride=*/2, /*pad=*/1));
  }
  for (size_t l = 0; l < p.speech_layers.size(); ++l)
    x = conformer_block_graph(t, x, p.speech_layers[l],
                              g ? &g->speech_layers[l] : nullptr, cfg);
  return x;
}

template <typename Scalar>
int text_embed_graph(Tape<Scalar>& t, const std::vector<int>& ids,
                     ModelParams<Scalar>& p, ModelParams<Scalar>* g) {
  const int table = t.param(p.text_embedding, g ? &g->text_embedding : nullptr);
  return t.embed(table, ids);
}

struct MultimodalOut {
  std::vector<int> layer_outputs;  // H_k for k = 1..K
};

// Concatenates [L; T], adds sinusoidal positions over the joint sequence,
// and runs the multimodal conformer stack, recording every layer output.
template <typename Scalar>
MultimodalOut multimodal_encode_graph(Tape<Scalar>& t, int speech_latent,
                                      int text_latent,
                                      ModelParams<Scalar>& p,
                                      ModelParams<Scalar>* g,
                                      const ModelConfig& cfg) {
  int x;
  if (speech_latent >= 0 && text_latent >= 0)
    x = t.concat_rows(speech_latent, text_latent);
  else if (speech_latent >= 0)
    x = speech_latent;
  else if (text_latent >= 0)
    x = text_latent;
  else
    throw std::invalid_argument("multimodal_encode: both modalities empty");
  const int len = static_cast<int>(t.val(x).rows());
  x = t.add(x, t.input(sinusoidal_positions<Scalar>(len, cfg.d_model)));
  MultimodalOut out;
  for (size_t l = 0; l < p.mm_layers.size(); ++l) {
    x = conformer_block_graph(t, x, p.mm_layers[l],
                              g ? &g->mm_layers[l] : nullptr, cfg);
    out.layer_outputs.push_back(x);
  }
  return out;
}

template <typename Scalar>
int pool_graph(Tape<Scalar>& t, int h, ModelParams<Scalar>& p,
               ModelParams<Scalar>* g, const ModelConfig& cfg) {
  if (t.val(h).rows() < 1)
    throw std::invalid_argument("pooling requires >= 1 valid position");
  if (cfg.pooling == PoolingKind::mean) return t.mean_rows(h);
  const int q = t.param(p.pool_query, g ? &g->pool_query : nullptr);
  return multi_head_attention(t, q, h, p.pool_att, g ? &g->pool_att : nullptr,
                              cfg.num_heads);
}

template <typename Scalar>
int classify_graph(Tape<Scalar>& t, int pooled, ModelParams<Scalar>& p,
                   ModelParams<Scalar>* g) {
  const int w = t.param(p.classifier_w, g ? &g->classifier_w : nullptr);
  const int b = t.param(p.classifier_b, g ? &g->classifier_b : nullptr);
  return t.add_rowvec(t.matmul(pooled, w), b);
}

// Full per-item graph; returns the 1 x N logits node.
template <typename Scalar>
int item_logits_graph(Tape<Scalar>& t, const Mat<Scalar>& frames,
                      const std::vector<int>& ids, ModelParams<Scalar>& p,
                      ModelParams<Scalar>* g, const ModelConfig& cfg,
                      const ForwardMode& mode) {
  if (mode.kind == ForwardMode::Kind::single_layer &&
      (mode.layer < 1 || mode.layer > cfg.num_mm_layers))
    throw std::invalid_argument("single_layer index out of range");
  int speech = -1, text = -1;
  if (mode.uses_speech()) {
    if (frames.rows() == 0)
      throw std::invalid_argument("mode requires speech frames");
    speech = speech_encode_graph(t, frames, p, g, cfg);
  }
  if (mode.uses_text() && !ids.empty()) {
    if (static_cast<int>(ids.size()) > cfg.max_text_tokens)
      throw std::invalid_argument("token sequence exceeds max_text_tokens");
    text = text_embed_graph(t, ids, p, g);
  }
  if (mode.kind == ForwardMode::Kind::text_only && text < 0)
    throw std::invalid_argument("text_only mode requires tokens");
  MultimodalOut mm = multimodal_encode_graph(t, speech, text, p, g, cfg);
  int h;
  if (mode.kind == ForwardMode::Kind::single_layer) {
    h = mm.layer_outputs[mode.layer - 1];
  } else {
    const int logits_node = t.param(p.layer_logits,
                                    g ? &g->layer_logits : nullptr);
    const int alpha = t.row_softmax(logits_node);
    h = t.linear_comb(mm.layer_outputs, alpha);
  }
  const int pooled = pool_graph(t, h, p, g, cfg);
  return classify_graph(t, pooled, p, g);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Value-level entry points (inference; no gradient bookkeeping).

// Returns the subsampled+encoded speech latent for the valid prefix.
template <typename Scalar>
Mat<Scalar> speech_encode(const Mat<Scalar>& frames_valid,
                          ModelParams<Scalar>& params,
                          const ModelConfig& cfg) {
  Tape<Scalar> t;
  return t.val(detail::speech_encode_graph(
      t, frames_valid, params, static_cast<ModelParams<Scalar>*>(nullptr),
      cfg));
}

template <typename Scalar>
Mat<Scalar> text_embed(const std::vector<int>& ids,
                       ModelParams<Scalar>& params) {
  Tape<Scalar> t;
  return t.val(detail::text_embed_graph(
      t, ids, params, static_cast<ModelParams<Scalar>*>(nullptr)));
}

template <typename Scalar>
std::vector<Mat<Scalar>> multimodal_encode(const Mat<Scalar>& speech_latent,
                                           const Mat<Scalar>& text_latent,
                                           ModelParams<Scalar>& params,
                                           const ModelConfig& cfg) {
  Tape<Scalar> t;
  const int s = speech_latent.rows() > 0 ? t.input(speech_latent) : -1;
  const int x = text_latent.rows() > 0 ? t.input(text_latent) : -1;
  auto out = detail::multimodal_encode_graph(
      t, s, x, params, static_cast<ModelParams<Scalar>*>(nullptr), cfg);
  std::vector<Mat<Scalar>> result;
  for (int id : out.layer_outputs) result.push_back(t.val(id));
  return result;
}

// H = sum_k softmax(a)_k H_k.
template <typename Scalar>
Mat<Scalar> combine_layers(const std::vector<Mat<Scalar>>& layers,
                           const Mat<Scalar>& layer_logits) {
  Tape<Scalar> t;
  std::vector<int> hs;
  for (const auto& h : layers) hs.push_back(t.input(h));
  const int alpha = t.row_softmax(t.input(layer_logits));
  return t.val(t.linear_comb(hs, alpha));
}

template <typename Scalar>
Vec<Scalar> attentive_pool(const Mat<Scalar>& h_valid,
                           ModelParams<Scalar>& params,
                           const ModelConfig& cfg) {
  Tape<Scalar> t;
  const int pooled = detail::pool_graph(t, t.input(h_valid), params,
                                        static_cast<ModelParams<Scalar>*>(nullptr), cfg);
  return t.val(pooled).row(0).transpose();
}

template <typename Scalar>
Vec<Scalar> classify(const Vec<Scalar>& pooled, ModelParams<Scalar>& params) {
  Tape<Scalar> t;
  const int logits =
      detail::classify_graph(t, t.input(pooled.transpose()), params,
                             static_cast<ModelParams<Scalar>*>(nullptr));
  Tape<Scalar> t2;
  return t2.val(t2.row_softmax(t2.input(t.val(logits)))).row(0).transpose();
}

template <typename Scalar>
Mat<Scalar> conformer_block(const Mat<Scalar>& x_valid,
                            ConformerParams<Scalar>& block,
                            const ModelConfig& cfg) {
  Tape<Scalar> t;
  return t.val(detail::conformer_block_graph(
      t, t.input(x_valid), block,
      static_cast<ConformerParams<Scalar>*>(nullptr), cfg));
}

}  // namespace museli
