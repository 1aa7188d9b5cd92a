#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "herdlife/classes.hpp"
#include "herdlife/csv.hpp"
#include "herdlife/error.hpp"

namespace herdlife {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

namespace detail {

inline void same_length(std::size_t a, std::size_t b) {
  if (a != b) throw UsageError("metric inputs differ in length (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// 1 - SS_res / SS_tot.
inline double r2(const std::vector<double>& actual, const std::vector<double>& predicted) {
  detail::same_length(actual.size(), predicted.size());
  if (actual.size() < 2) throw UsageError("R^2 needs at least 2 samples");
  const double mean = detail::mean_of(actual);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  if (ss_tot == 0.0) throw NumericError("R^2 undefined: actual values have zero variance");
  return 1.0 - ss_res / ss_tot;
}

/// 1 - (1 - R^2)(n - 1)/(n - p - 1) for p predictors.
inline double r2_adjusted(const std::vector<double>& actual, const std::vector<double>& predicted, std::size_t p) {
  const std::size_t n = actual.size();
  if (n <= p + 1) throw UsageError("adjusted R^2 needs n > p + 1");
  const double r = r2(actual, predicted);
  return 1.0 - (1.0 - r) * static_cast<double>(n - 1) / static_cast<double>(n - p - 1);
}

inline double mae(const std::vector<double>& actual, const std::vector<double>& predicted) {
  detail::same_length(actual.size(), predicted.size());
  if (actual.empty()) throw UsageError("MAE needs at least 1 sample");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) s += std::abs(actual[i] - predicted[i]);
  return s / static_cast<double>(actual.size());
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  detail::same_length(x.size(), y.size());
  if (x.size() < 2) throw UsageError("correlation needs at least 2 samples");
  const double mx = detail::mean_of(x), my = detail::mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Rows are actual {low, medium, high}; columns are predicted.
struct ConfusionMatrix3 {
  std::array<std::array<std::int64_t, 3>, 3> counts{};

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& row : counts)
      for (std::int64_t c : row) t += c;
    return t;
  }
  std::int64_t support(std::size_t actual) const { return counts[actual][0] + counts[actual][1] + counts[actual][2]; }
  std::int64_t predicted(std::size_t cls) const { return counts[0][cls] + counts[1][cls] + counts[2][cls]; }

  friend bool operator==(const ConfusionMatrix3&, const ConfusionMatrix3&) = default;
};

inline ConfusionMatrix3 confusion(const std::vector<int>& actual, const std::vector<int>& predicted) {
  detail::same_length(actual.size(), predicted.size());
  ConfusionMatrix3 cm;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0 || actual[i] > 2 || predicted[i] < 0 || predicted[i] > 2) {
      throw UsageError("unknown class label at position " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(actual[i])][static_cast<std::size_t>(predicted[i])];
  }
  return cm;
}

struct ClassReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  bool precision_undefined = false;  // no predictions of this class
  bool recall_undefined = false;     // no actual members of this class
};

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline std::array<ClassReport, 3> prf1(const ConfusionMatrix3& cm) {
  std::array<ClassReport, 3> out;
  for (std::size_t c = 0; c < 3; ++c) {
    ClassReport& r = out[c];
    const auto tp = static_cast<double>(cm.counts[c][c]);
    const std::int64_t predicted = cm.predicted(c);
    r.support = cm.support(c);
    r.precision_undefined = predicted == 0;
    r.recall_undefined = r.support == 0;
    r.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    r.recall = r.support ? tp / static_cast<double>(r.support) : 0.0;
    r.f1 = f1_score(r.precision, r.recall);
  }
  return out;
}

inline double accuracy(const ConfusionMatrix3& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw UsageError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.counts[0][0] + cm.counts[1][1] + cm.counts[2][2]) / static_cast<double>(total);
}

/// Critically misclassified cows: the two corner cells of the matrix.
struct CritMis {
  std::int64_t low_as_high = 0;
  std::int64_t high_as_low = 0;
  double low_as_high_rate = 0.0;  // over actual-low support (0 when empty)
  double high_as_low_rate = 0.0;  // over actual-high support (0 when empty)
};

inline CritMis crit_mis(const ConfusionMatrix3& cm) {
  CritMis m;
  m.low_as_high = cm.counts[0][2];
  m.high_as_low = cm.counts[2][0];
  const std::int64_t low = cm.support(0), high = cm.support(2);
  m.low_as_high_rate = low ? static_cast<double>(m.low_as_high) / static_cast<double>(low) : 0.0;
  m.high_as_low_rate = high ? static_cast<double>(m.high_as_low) / static_cast<double>(high) : 0.0;
  return m;
}

/// Integer percent as printed in class reports.
inline int percent(double fraction) { return static_cast<int>(std::lround(100.0 * fraction)); }

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Per-sample outcomes. Regression and classification parts are each optional (leave empty).
struct Predictions {
  std::vector<std::string> farm_ids;
  std::vector<double> actual_hl;
  std::vector<double> predicted_hl;
  std::vector<int> actual_class;
  std::vector<int> predicted_class;

  std::size_t size() const { return farm_ids.size(); }
  bool has_regression() const { return !predicted_hl.empty(); }
  bool has_classification() const { return !predicted_class.empty(); }

  Predictions subset(const std::vector<std::size_t>& idx) const {
    Predictions out;
    for (std::size_t i : idx) {
      out.farm_ids.push_back(farm_ids[i]);
      if (has_regression()) {
        out.actual_hl.push_back(actual_hl[i]);
        out.predicted_hl.push_back(predicted_hl[i]);
      }
      if (has_classification()) {
        out.actual_class.push_back(actual_class[i]);
        out.predicted_class.push_back(predicted_class[i]);
      }
    }
    return out;
  }
};

struct EvalReport {
  std::size_t samples = 0;
  double r2 = kNaN;
  double r2_adjusted = kNaN;
  double mae_days = kNaN;
  double accuracy = kNaN;
  std::array<ClassReport, 3> classes{};
  ConfusionMatrix3 confusion;
  CritMis crit;
  bool has_regression = false;
  bool has_classification = false;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"samples", samples}};
    if (has_regression) {
      j["r2"] = r2;
      j["r2_adjusted"] = r2_adjusted;
      j["mae_days"] = mae_days;
    }
    if (has_classification) {
      j["accuracy"] = accuracy;
      nlohmann::json classes_json = nlohmann::json::object();
      for (std::size_t c = 0; c < 3; ++c) {
        const ClassReport& r = classes[c];
        classes_json[std::string(kClassNames[c])] = {{"precision", r.precision},
                                                     {"recall", r.recall},
                                                     {"f1", r.f1},
                                                     {"support", r.support},
                                                     {"precision_undefined", r.precision_undefined},
                                                     {"recall_undefined", r.recall_undefined}};
      }
      j["classes"] = classes_json;
      j["confusion_matrix"] = confusion.counts;
      j["crit_mis"] = {{"low_as_high", crit.low_as_high},
                       {"high_as_low", crit.high_as_low},
                       {"low_as_high_rate", crit.low_as_high_rate},
                       {"high_as_low_rate", crit.high_as_low_rate}};
    }
    return j;
  }
};

/// Metrics over one set of predictions. `p` > 0 also fills adjusted R^2.
/// Undefined values (too few samples, constant actuals) are left as NaN.
inline EvalReport evaluate_predictions(const Predictions& pred, std::size_t p = 0) {
  EvalReport rep;
  rep.samples = pred.size();
  if (pred.has_regression()) {
    detail::same_length(pred.actual_hl.size(), pred.predicted_hl.size());
    rep.has_regression = true;
    if (!pred.actual_hl.empty()) rep.mae_days = mae(pred.actual_hl, pred.predicted_hl);
    try {
      rep.r2 = r2(pred.actual_hl, pred.predicted_hl);
      if (p > 0 && pred.size() > p + 1) rep.r2_adjusted = r2_adjusted(pred.actual_hl, pred.predicted_hl, p);
    } catch (const Error&) {
      rep.r2 = kNaN;
    }
  }
  if (pred.has_classification()) {
    rep.has_classification = true;
    rep.confusion = confusion(pred.actual_class, pred.predicted_class);
    rep.classes = prf1(rep.confusion);
    rep.crit = crit_mis(rep.confusion);
    if (rep.confusion.total() > 0) rep.accuracy = accuracy(rep.confusion);
  }
  return rep;
}

/// One report per farm (sorted by farm id) followed by the pooled "overall" row.
inline std::vector<std::pair<std::string, EvalReport>> per_farm_report(const Predictions& pred, std::size_t p = 0) {
  std::map<std::string, std::vector<std::size_t>> by_farm;
  for (std::size_t i = 0; i < pred.size(); ++i) by_farm[pred.farm_ids[i]].push_back(i);
  std::vector<std::pair<std::string, EvalReport>> out;
  for (const auto& [farm, idx] : by_farm) out.emplace_back(farm, evaluate_predictions(pred.subset(idx), p));
  out.emplace_back("overall", evaluate_predictions(pred, p));
  return out;
}

inline void write_per_farm_csv(const std::filesystem::path& path,
                               const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::vector<csv::Row> out;
  for (const auto& [farm, r] : rows) {
    out.push_back({farm, std::to_string(r.samples), csv::format_number(r.r2), csv::format_number(r.mae_days),
                   csv::format_number(r.accuracy)});
  }
  csv::write_file(path, {"farm", "samples", "r2", "mae_days", "accuracy"}, out);
}

inline void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix3& cm) {
  std::vector<csv::Row> out;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t p = 0; p < 3; ++p) {
      out.push_back({std::string(kClassNames[a]), std::string(kClassNames[p]), std::to_string(cm.counts[a][p])});
    }
  csv::write_file(path, {"actual", "predicted", "count"}, out);
}

}  // namespace herdlife
