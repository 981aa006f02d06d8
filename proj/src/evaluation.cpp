#include "museli/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace museli {

using nlohmann::ordered_json;

Predictions predict_corpus(Checkpoint& ckpt, const CorpusManifest& manifest,
                           Split split, const ForwardMode& mode,
                           bool blank_location, int batch_size) {
  (void)batch_size;  // items are evaluated independently
  if (ckpt.language_list != manifest.language_list)
    throw std::invalid_argument(
        "checkpoint/manifest language list mismatch; checkpoint has " +
        std::to_string(ckpt.language_list.size()) + " languages");
  Tokenizer tokenizer;
  Predictions preds;
  preds.language_list = manifest.language_list;
  for (const Recording& r : manifest.records) {
    if (r.split != split) continue;
    Matd frames = r.frames.cast<double>();
    if (frames.rows() > ckpt.config.max_speech_frames)
      frames = frames.topRows(ckpt.config.max_speech_frames).eval();
    Metadata m = r.metadata;
    if (blank_location) m.location.clear();
    std::vector<int> ids = trim_tokens(
        tokenizer.encode(tokenizer.serialize_metadata(m)),
        ckpt.config.max_text_tokens);

    Tape<double> t;
    const int node = detail::item_logits_graph(
        t, frames, ids, ckpt.params,
        static_cast<ModelParams<double>*>(nullptr), ckpt.config, mode);
    const Matd logits = t.val(node);
    Vecd probs(logits.cols());
    const double mx = logits.maxCoeff();
    probs = (logits.row(0).array() - mx).exp().transpose();
    probs /= probs.sum();

    Prediction p;
    p.id = r.id;
    p.true_label = manifest.language_index(r.language);
    // argmax, lowest index on ties
    p.predicted_label = 0;
    for (int c = 1; c < probs.size(); ++c)
      if (probs(c) > probs(p.predicted_label)) p.predicted_label = c;
    p.probabilities = probs;
    p.duration_s = r.duration_s;
    preds.entries.push_back(std::move(p));
  }
  return preds;
}

Eigen::MatrixXi confusion_matrix(
    const Predictions& preds, const std::vector<std::string>& language_list) {
  const int n = static_cast<int>(language_list.size());
  Eigen::MatrixXi c = Eigen::MatrixXi::Zero(n, n);
  for (const Prediction& p : preds.entries) {
    if (p.true_label < 0 || p.true_label >= n || p.predicted_label < 0 ||
        p.predicted_label >= n)
      throw std::invalid_argument("prediction label outside language list");
    c(p.true_label, p.predicted_label) += 1;
  }
  return c;
}

EvalReport compute_metrics(const Eigen::MatrixXi& confusion) {
  if (confusion.rows() != confusion.cols())
    throw std::invalid_argument("confusion matrix must be square");
  if ((confusion.array() < 0).any())
    throw std::invalid_argument("confusion matrix must be nonnegative");
  const int n = static_cast<int>(confusion.rows());
  const long total = confusion.sum();

  EvalReport report;
  report.confusion = confusion;
  report.accuracy =
      total == 0 ? 0.0 : static_cast<double>(confusion.trace()) / total;

  double sum_f1 = 0.0, sum_f1_all = 0.0, sum_prec = 0.0, sum_fpr = 0.0;
  int supported = 0;
  for (int c = 0; c < n; ++c) {
    const long tp = confusion(c, c);
    const long fn = confusion.row(c).sum() - tp;
    const long fp = confusion.col(c).sum() - tp;
    const long tn = total - tp - fn - fp;
    ClassMetrics m;
    m.support = static_cast<int>(tp + fn);
    m.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    m.recall = m.support == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.fpr = (fp + tn) == 0 ? 0.0 : static_cast<double>(fp) / (fp + tn);
    report.per_class.push_back(m);
    sum_f1_all += m.f1;
    if (m.support > 0) {
      ++supported;
      sum_f1 += m.f1;
      sum_prec += m.precision;
      sum_fpr += m.fpr;
    }
  }
  report.macro_f1 = supported == 0 ? 0.0 : sum_f1 / supported;
  report.macro_f1_all_classes = n == 0 ? 0.0 : sum_f1_all / n;
  report.macro_precision = supported == 0 ? 0.0 : sum_prec / supported;
  report.macro_fpr = supported == 0 ? 0.0 : sum_fpr / supported;
  return report;
}

std::vector<DurationBucket> duration_bucket_accuracy(
    const Predictions& preds, const std::vector<double>& bucket_edges) {
  if (bucket_edges.size() < 2)
    throw std::invalid_argument("need >= 2 bucket edges");
  for (size_t i = 1; i < bucket_edges.size(); ++i)
    if (!(bucket_edges[i] > bucket_edges[i - 1]))
      throw std::invalid_argument("bucket edges must be strictly increasing");

  std::vector<DurationBucket> buckets(bucket_edges.size() - 1);
  std::vector<int> correct(buckets.size(), 0);
  for (size_t b = 0; b < buckets.size(); ++b) {
    buckets[b].lo = bucket_edges[b];
    buckets[b].hi = bucket_edges[b + 1];
  }
  for (const Prediction& p : preds.entries) {
    for (size_t b = 0; b < buckets.size(); ++b) {
      if (p.duration_s >= buckets[b].lo && p.duration_s < buckets[b].hi) {
        buckets[b].count += 1;
        if (p.predicted_label == p.true_label) correct[b] += 1;
        break;
      }
    }
  }
  for (size_t b = 0; b < buckets.size(); ++b)
    buckets[b].accuracy =
        buckets[b].count == 0
            ? std::numeric_limits<double>::quiet_NaN()
            : static_cast<double>(correct[b]) / buckets[b].count;
  return buckets;
}

namespace {

ordered_json bucket_to_json(const DurationBucket& b) {
  ordered_json j{{"lo", b.lo},
                 {"hi", std::isinf(b.hi) ? ordered_json() : ordered_json(b.hi)},
                 {"count", b.count}};
  j["accuracy"] =
      b.count == 0 ? ordered_json() : ordered_json(b.accuracy);
  return j;
}

DurationBucket bucket_from_json(const nlohmann::json& j) {
  DurationBucket b;
  b.lo = j.at("lo").get<double>();
  b.hi = j.at("hi").is_null() ? std::numeric_limits<double>::infinity()
                              : j.at("hi").get<double>();
  b.count = j.at("count").get<int>();
  b.accuracy = j.at("accuracy").is_null()
                   ? std::numeric_limits<double>::quiet_NaN()
                   : j.at("accuracy").get<double>();
  return b;
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  ordered_json per_class = ordered_json::array();
  for (const ClassMetrics& m : report.per_class)
    per_class.push_back(ordered_json{{"precision", m.precision},
                                     {"recall", m.recall},
                                     {"f1", m.f1},
                                     {"fpr", m.fpr},
                                     {"support", m.support}});
  ordered_json confusion = ordered_json::array();
  for (int r = 0; r < report.confusion.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (int c = 0; c < report.confusion.cols(); ++c)
      row.push_back(report.confusion(r, c));
    confusion.push_back(row);
  }
  ordered_json buckets = ordered_json::array();
  for (const DurationBucket& b : report.bucket_accuracy)
    buckets.push_back(bucket_to_json(b));

  ordered_json j{{"accuracy", report.accuracy},
                 {"macro_f1", report.macro_f1},
                 {"macro_f1_all_classes", report.macro_f1_all_classes},
                 {"macro_precision", report.macro_precision},
                 {"macro_fpr", report.macro_fpr},
                 {"per_class", per_class},
                 {"confusion", confusion},
                 {"bucket_accuracy", buckets},
                 {"language_list", report.language_list},
                 {"checkpoint_hash", report.checkpoint_hash}};
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open report for write: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("report write failed: " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("report parse error: " + std::string(e.what()));
  }
  EvalReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.macro_f1_all_classes = j.at("macro_f1_all_classes").get<double>();
  r.macro_precision = j.at("macro_precision").get<double>();
  r.macro_fpr = j.at("macro_fpr").get<double>();
  for (const auto& m : j.at("per_class")) {
    ClassMetrics cm;
    cm.precision = m.at("precision").get<double>();
    cm.recall = m.at("recall").get<double>();
    cm.f1 = m.at("f1").get<double>();
    cm.fpr = m.at("fpr").get<double>();
    cm.support = m.at("support").get<int>();
    r.per_class.push_back(cm);
  }
  const auto& conf = j.at("confusion");
  const int n = static_cast<int>(conf.size());
  r.confusion.resize(n, n == 0 ? 0 : static_cast<int>(conf[0].size()));
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < r.confusion.cols(); ++col)
      r.confusion(row, col) = conf[row][col].get<int>();
  for (const auto& b : j.at("bucket_accuracy"))
    r.bucket_accuracy.push_back(bucket_from_json(b));
  r.language_list = j.at("language_list").get<std::vector<std::string>>();
  r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  return r;
}

void write_predictions(const Predictions& preds,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open predictions for write: " +
                             path.string());
  for (const Prediction& p : preds.entries) {
    std::vector<double> probs(p.probabilities.data(),
                              p.probabilities.data() + p.probabilities.size());
    ordered_json j{{"id", p.id},
                   {"true", preds.language_list[p.true_label]},
                   {"predicted", preds.language_list[p.predicted_label]},
                   {"duration_s", p.duration_s},
                   {"probabilities", probs}};
    out << j.dump() << "\n";
  }
  if (!out)
    throw std::runtime_error("predictions write failed: " + path.string());
}

}  // namespace museli
