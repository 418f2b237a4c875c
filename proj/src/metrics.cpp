#include "lesion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "lesion/error.hpp"

namespace lesion {

namespace {

Rate ratio(std::size_t num, std::size_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

void check_class(int c, std::size_t classes) {
  if (c < 0 || static_cast<std::size_t>(c) >= classes) {
    fail(ErrorKind::OutOfRangeClass, "class " + std::to_string(c) + " outside [0," + std::to_string(classes) + ")");
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

nlohmann::json averages_json(const AverageReport& a) {
  return {{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}, {"specificity", a.specificity},
          {"auc", a.auc}};
}

AverageReport averages_from_json(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          j.at("specificity").get<double>(), j.at("auc").get<double>()};
}

struct NamedRate {
  const char* name;
  Rate ClassReport::*member;
};

constexpr NamedRate kClassRates[] = {
    {"precision", &ClassReport::precision}, {"recall", &ClassReport::recall},
    {"f1", &ClassReport::f1},               {"specificity", &ClassReport::specificity},
    {"accuracy", &ClassReport::accuracy},   {"auc", &ClassReport::auc},
};

}  // namespace

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return n;
}

std::size_t ConfusionMatrix::row_sum(std::size_t actual) const {
  return std::accumulate(counts.at(actual).begin(), counts.at(actual).end(), std::size_t{0});
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::size_t n = 0;
  for (const auto& row : counts) n += row.at(predicted);
  return n;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
  return n;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t classes,
                          std::vector<std::string> names) {
  if (preds.size() != labels.size()) {
    fail(ErrorKind::ShapeMismatch, std::to_string(preds.size()) + " predictions for " +
                                       std::to_string(labels.size()) + " labels");
  }
  if (classes == 0) fail(ErrorKind::InvalidConfig, "confusion matrix needs at least one class");
  if (names.empty()) {
    for (std::size_t c = 0; c < classes; ++c) names.push_back(std::to_string(c));
  }
  if (names.size() != classes) fail(ErrorKind::ShapeMismatch, "class name count does not match K");
  ConfusionMatrix m{std::move(names), std::vector<std::vector<std::size_t>>(classes, std::vector<std::size_t>(classes))};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_class(preds[i], classes);
    check_class(labels[i], classes);
    m.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])] += 1;
  }
  return m;
}

OvrCounts ovr_counts(const ConfusionMatrix& m, std::size_t c) {
  if (c >= m.num_classes()) {
    fail(ErrorKind::OutOfRangeClass, "class " + std::to_string(c) + " outside [0," + std::to_string(m.num_classes()) + ")");
  }
  OvrCounts o;
  o.tp = m.counts[c][c];
  o.fp = m.column_sum(c) - o.tp;
  o.fn = m.row_sum(c) - o.tp;
  o.tn = m.total() - o.tp - o.fp - o.fn;
  return o;
}

Rate accuracy(const OvrCounts& c) { return ratio(c.tp + c.tn, c.total()); }
Rate precision(const OvrCounts& c) { return ratio(c.tp, c.tp + c.fp); }
Rate recall(const OvrCounts& c) { return ratio(c.tp, c.tp + c.fn); }
Rate specificity(const OvrCounts& c) { return ratio(c.tn, c.tn + c.fp); }

Rate f1(const OvrCounts& c) {
  const Rate p = precision(c), r = recall(c);
  if (p.undefined || r.undefined || p.value + r.value == 0.0) return {0.0, true};
  return {2.0 * p.value * r.value / (p.value + r.value), false};
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> binary_labels) {
  if (scores.size() != binary_labels.size()) fail(ErrorKind::ShapeMismatch, "scores and labels differ in length");
  std::size_t positives = 0;
  for (int l : binary_labels) {
    if (l != 0 && l != 1) fail(ErrorKind::InvalidLabel, "ROC labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = binary_labels.size() - positives;
  if (positives == 0 || negatives == 0) fail(ErrorKind::DegenerateLabels, "ROC needs both a positive and a negative");
  for (double s : scores) {
    if (!std::isfinite(s)) fail(ErrorKind::InvalidConfig, "ROC scores must be finite");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::nullopt, 0.0, 0.0});
  // Twice the trapezoid area in units of one (positive, negative) pair, kept
  // in integers so the sum is exact before the final division.
  std::size_t tp = 0, fp = 0, area2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    const std::size_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (binary_labels[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
    }
    area2 += (fp - fp0) * (tp + tp0);
    curve.points.push_back({threshold, static_cast<double>(fp) / static_cast<double>(negatives),
                            static_cast<double>(tp) / static_cast<double>(positives)});
  }
  curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
  return curve;
}

double mann_whitney_auc(std::span<const double> scores, std::span<const int> binary_labels) {
  if (scores.size() != binary_labels.size()) fail(ErrorKind::ShapeMismatch, "scores and labels differ in length");
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (binary_labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (binary_labels[j] != 0) continue;
      ++pairs;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  if (pairs == 0) fail(ErrorKind::DegenerateLabels, "Mann-Whitney needs both a positive and a negative");
  return wins / static_cast<double>(pairs);
}

EvalReport macro_report(const ConfusionMatrix& m, const Tensor& scores, std::span<const int> labels) {
  const std::size_t k = m.num_classes();
  if (k < 2) fail(ErrorKind::InvalidConfig, "a report needs at least two classes");
  const std::size_t n = m.total();
  if (scores.rank() != 2 || scores.dim(0) != n || scores.dim(1) != k || labels.size() != n) {
    fail(ErrorKind::ShapeMismatch, "scores " + to_string(scores.shape()) + " and " + std::to_string(labels.size()) +
                                       " labels do not match a " + std::to_string(k) + "-class matrix of " +
                                       std::to_string(n) + " samples");
  }
  std::vector<std::size_t> label_counts(k, 0);
  for (int l : labels) {
    check_class(l, k);
    label_counts[static_cast<std::size_t>(l)] += 1;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (label_counts[c] != m.row_sum(c)) fail(ErrorKind::ShapeMismatch, "labels disagree with the confusion matrix");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += scores[i * k + c];
    if (std::abs(s - 1.0) > 1e-6) fail(ErrorKind::InvalidConfig, "score row " + std::to_string(i) + " is not a softmax output");
  }

  EvalReport r;
  r.samples = n;
  r.confusion = m;
  r.accuracy = n == 0 ? 0.0 : static_cast<double>(m.trace()) / static_cast<double>(n);
  std::size_t auc_classes = 0, auc_support = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const OvrCounts o = ovr_counts(m, c);
    ClassReport cr;
    cr.name = m.classes[c];
    cr.support = m.row_sum(c);
    cr.precision = precision(o);
    cr.recall = recall(o);
    cr.f1 = f1(o);
    cr.specificity = specificity(o);
    cr.accuracy = cr.recall;
    if (cr.support > 0 && cr.support < n) {
      std::vector<double> column(n);
      std::vector<int> binary(n);
      for (std::size_t i = 0; i < n; ++i) {
        column[i] = scores[i * k + c];
        binary[i] = labels[i] == static_cast<int>(c);
      }
      RocCurve curve = roc_auc(column, binary);
      cr.auc = {curve.auc, false};
      cr.roc = std::move(curve.points);
      r.macro.auc += cr.auc.value;
      r.weighted.auc += cr.auc.value * static_cast<double>(cr.support);
      auc_classes += 1;
      auc_support += cr.support;
    } else {
      cr.auc = {0.0, true};
    }
    const double w = static_cast<double>(cr.support);
    r.macro.precision += cr.precision.value;
    r.macro.recall += cr.recall.value;
    r.macro.f1 += cr.f1.value;
    r.macro.specificity += cr.specificity.value;
    r.weighted.precision += w * cr.precision.value;
    r.weighted.recall += w * cr.recall.value;
    r.weighted.f1 += w * cr.f1.value;
    r.weighted.specificity += w * cr.specificity.value;
    r.per_class.push_back(std::move(cr));
  }
  const double kd = static_cast<double>(k);
  r.macro.precision /= kd;
  r.macro.recall /= kd;
  r.macro.f1 /= kd;
  r.macro.specificity /= kd;
  if (auc_classes > 0) r.macro.auc /= static_cast<double>(auc_classes);
  if (n > 0) {
    const double nd = static_cast<double>(n);
    r.weighted.precision /= nd;
    r.weighted.recall /= nd;
    r.weighted.f1 /= nd;
    r.weighted.specificity /= nd;
  }
  if (auc_support > 0) r.weighted.auc /= static_cast<double>(auc_support);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : per_class) {
    nlohmann::json row = {{"name", c.name}, {"support", c.support}};
    nlohmann::json undefined = nlohmann::json::array();
    for (const auto& nr : kClassRates) {
      const Rate& rate = c.*(nr.member);
      row[nr.name] = rate.value;
      if (rate.undefined) undefined.push_back(nr.name);
    }
    row["undefined"] = undefined;
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : c.roc) {
      roc.push_back({{"threshold", p.threshold ? nlohmann::json(*p.threshold) : nlohmann::json()},
                     {"fpr", p.fpr},
                     {"tpr", p.tpr}});
    }
    row["roc"] = roc;
    classes.push_back(row);
  }
  return {{"samples", samples},
          {"accuracy", accuracy},
          {"averaging", "macro"},
          {"macro", averages_json(macro)},
          {"weighted", averages_json(weighted)},
          {"per_class", classes},
          {"confusion", {{"classes", confusion.classes}, {"counts", confusion.counts}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.samples = j.at("samples").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.macro = averages_from_json(j.at("macro"));
    r.weighted = averages_from_json(j.at("weighted"));
    r.confusion.classes = j.at("confusion").at("classes").get<std::vector<std::string>>();
    r.confusion.counts = j.at("confusion").at("counts").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& row : j.at("per_class")) {
      ClassReport c;
      c.name = row.at("name").get<std::string>();
      c.support = row.at("support").get<std::size_t>();
      const auto undefined = row.at("undefined").get<std::vector<std::string>>();
      for (const auto& nr : kClassRates) {
        Rate& rate = c.*(nr.member);
        rate.value = row.at(nr.name).get<double>();
        rate.undefined = std::find(undefined.begin(), undefined.end(), nr.name) != undefined.end();
      }
      for (const auto& p : row.at("roc")) {
        RocPoint point{std::nullopt, p.at("fpr").get<double>(), p.at("tpr").get<double>()};
        if (!p.at("threshold").is_null()) point.threshold = p.at("threshold").get<double>();
        c.roc.push_back(point);
      }
      r.per_class.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("bad report JSON: ") + e.what());
  }
  return r;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "actual\\predicted";
  for (const auto& name : m.classes) out += "," + csv_field(name);
  out += "\n";
  for (std::size_t a = 0; a < m.num_classes(); ++a) {
    out += csv_field(m.classes[a]);
    for (std::size_t v : m.counts[a]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

std::string roc_csv(const std::vector<RocPoint>& points) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : points) {
    out += (p.threshold ? format_number(*p.threshold) : std::string("inf")) + "," + format_number(p.fpr) + "," +
           format_number(p.tpr) + "\n";
  }
  return out;
}

}  // namespace lesion
