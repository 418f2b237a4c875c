#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "lesion/tensor.hpp"

namespace lesion {

/// Rows are actual classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t num_classes() const { return counts.size(); }
  std::size_t total() const;
  std::size_t row_sum(std::size_t actual) const;
  std::size_t column_sum(std::size_t predicted) const;
  std::size_t trace() const;
};

/// Class names default to "0", "1", ...
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t classes,
                          std::vector<std::string> names = {});

/// One-vs-rest partition for class c.
struct OvrCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

OvrCounts ovr_counts(const ConfusionMatrix& m, std::size_t c);

/// A ratio whose zero denominator yields 0 with `undefined` set.
struct Rate {
  double value = 0.0;
  bool undefined = false;
};

Rate accuracy(const OvrCounts& c);     // (TP+TN)/(TP+TN+FP+FN)
Rate precision(const OvrCounts& c);    // TP/(TP+FP)
Rate recall(const OvrCounts& c);       // TP/(TP+FN)
Rate f1(const OvrCounts& c);           // 2PR/(P+R); undefined if P or R is, or P+R = 0
Rate specificity(const OvrCounts& c);  // TN/(TN+FP)

struct RocPoint {
  std::optional<double> threshold;  // empty for the (0,0) origin, i.e. +infinity
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// One-vs-rest ROC: one point per distinct score (predict positive when
/// score >= threshold), highest first, from (0,0) to (1,1). AUC by the
/// trapezoidal rule. Labels are 0/1; both must occur.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> binary_labels);

/// Pairwise statistic P(score+ > score-) with ties counted one half.
double mann_whitney_auc(std::span<const double> scores, std::span<const int> binary_labels);

struct ClassReport {
  std::string name;
  std::size_t support = 0;
  Rate precision, recall, f1, specificity;
  Rate accuracy;  // per-class accuracy is the class recall
  Rate auc;       // undefined when the class has no positives or no negatives
  std::vector<RocPoint> roc;
};

struct AverageReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0, specificity = 0.0, auc = 0.0;
};

struct EvalReport {
  std::size_t samples = 0;
  double accuracy = 0.0;     // trace / N
  AverageReport macro;       // unweighted class means; AUC over classes where defined
  AverageReport weighted;    // support-weighted means
  std::vector<ClassReport> per_class;
  ConfusionMatrix confusion;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// scores: [N,K] softmax rows; labels: actual classes in the same order as
/// the samples counted in `m`.
EvalReport macro_report(const ConfusionMatrix& m, const Tensor& scores, std::span<const int> labels);

/// Header row and column of class names.
std::string confusion_csv(const ConfusionMatrix& m);
/// threshold,fpr,tpr rows; the origin's threshold is written as inf.
std::string roc_csv(const std::vector<RocPoint>& points);

}  // namespace lesion
