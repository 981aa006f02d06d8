#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "museli/checkpoint.hpp"
#include "museli/corpus.hpp"
#include "museli/training.hpp"
#include "museli/types.hpp"

namespace museli {

struct Prediction {
  std::string id;
  int true_label = 0;
  int predicted_label = 0;
  Vecd probabilities;
  double duration_s = 0.0;
};

struct Predictions {
  std::vector<Prediction> entries;
  std::vector<std::string> language_list;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  int support = 0;
};

struct DurationBucket {
  double lo = 0.0;
  double hi = 0.0;  // +inf for the open-ended bucket
  int count = 0;
  double accuracy = 0.0;  // NaN when count == 0
};

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;          // over classes with nonzero support
  double macro_f1_all_classes = 0.0;
  double macro_precision = 0.0;
  double macro_fpr = 0.0;
  std::vector<ClassMetrics> per_class;
  Eigen::MatrixXi confusion;  // rows = true, cols = predicted
  std::vector<DurationBucket> bucket_accuracy;
  std::vector<std::string> language_list;
  std::string checkpoint_hash;
};

// Deterministic argmax predictions over one split; ties break toward the
// lowest class index.
Predictions predict_corpus(Checkpoint& ckpt, const CorpusManifest& manifest,
                           Split split, const ForwardMode& mode,
                           bool blank_location = false, int batch_size = 16);

Eigen::MatrixXi confusion_matrix(const Predictions& preds,
                                 const std::vector<std::string>& language_list);

// Fills accuracy, macro metrics, and per-class one-vs-rest values from a
// square confusion matrix.
EvalReport compute_metrics(const Eigen::MatrixXi& confusion);

inline const std::vector<double>& default_bucket_edges() {
  static const std::vector<double> edges{
      0.0, 5.0, 10.0, 15.0, 20.0, std::numeric_limits<double>::infinity()};
  return edges;
}

std::vector<DurationBucket> duration_bucket_accuracy(
    const Predictions& preds, const std::vector<double>& bucket_edges);

void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

void write_predictions(const Predictions& preds,
                       const std::filesystem::path& path);

}  // namespace museli
