#pragma once

// End-to-end helpers: split and standardize, model comparison, sequence-length sweep.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "herdlife/baselines.hpp"
#include "herdlife/csv.hpp"
#include "herdlife/ingestion.hpp"
#include "herdlife/metrics.hpp"
#include "herdlife/parallel.hpp"
#include "herdlife/sequencing.hpp"
#include "herdlife/transformer.hpp"

namespace herdlife {

struct SplitConfig {
  double train_fraction = 0.8;
  double validation_fraction = 0.1;  // carved out of the training cows for early stopping
  std::uint64_t seed = 7;
};

/// Standardized cow histories partitioned at cow level.
struct PreparedData {
  std::vector<CowHistory> train;       // fitting set
  std::vector<CowHistory> validation;  // early stopping
  std::vector<CowHistory> test;
  Standardizer standardizer;

  /// Training plus validation cows; what the tabular baselines fit on.
  std::vector<CowHistory> train_all() const {
    std::vector<CowHistory> all = train;
    all.insert(all.end(), validation.begin(), validation.end());
    return all;
  }

  nlohmann::json summary() const {
    return {{"train_cows", train.size()},
            {"validation_cows", validation.size()},
            {"test_cows", test.size()},
            {"standardizer", standardizer.to_json()}};
  }
};

inline PreparedData prepare(std::vector<CowHistory> histories, const SplitConfig& config = {}) {
  Split outer = split_by_cow(std::move(histories), config.train_fraction, config.seed);
  std::vector<CowHistory> fit = std::move(outer.train), val;
  if (config.validation_fraction > 0.0) {
    Split inner = split_by_cow(std::move(fit), 1.0 - config.validation_fraction, mix_seed(config.seed) + 1);
    fit = std::move(inner.train);
    val = std::move(inner.test);
  }
  PreparedData out;
  out.standardizer = fit_standardizer(fit);
  out.train = apply_standardizer(out.standardizer, std::move(fit));
  out.validation = apply_standardizer(out.standardizer, std::move(val));
  out.test = apply_standardizer(out.standardizer, std::move(outer.test));
  return out;
}

/// Actual targets and farm ids of `histories`, with predictions left empty.
inline Predictions prediction_frame(const std::vector<CowHistory>& histories) {
  Predictions p;
  for (const CowHistory& h : histories) p.farm_ids.push_back(h.farm_id);
  return p;
}

inline Predictions regression_predictions(const std::vector<CowHistory>& histories, std::vector<double> predicted) {
  if (predicted.size() != histories.size()) throw ShapeError("one prediction per cow expected");
  Predictions p = prediction_frame(histories);
  for (const CowHistory& h : histories) p.actual_hl.push_back(static_cast<double>(h.hl_days));
  p.predicted_hl = std::move(predicted);
  return p;
}

inline Predictions class_predictions(const std::vector<CowHistory>& histories, const std::vector<HlClass>& predicted) {
  if (predicted.size() != histories.size()) throw ShapeError("one prediction per cow expected");
  Predictions p = prediction_frame(histories);
  for (std::size_t i = 0; i < histories.size(); ++i) {
    p.actual_class.push_back(static_cast<int>(histories[i].hl_class));
    p.predicted_class.push_back(static_cast<int>(predicted[i]));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

struct CompareConfig {
  ModelConfig transformer;  // task is overridden per row
  ForestConfig forest;
  double glm_lambda = 1.0;
  bool classification = true;
};

struct ComparisonRow {
  std::string model;
  Task task = Task::Regression;
  std::string metric;  // "r2" or "accuracy"
  double value = 0.0;
  EvalReport report;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::vector<std::pair<std::string, EvalReport>> transformer_per_farm;

  const ComparisonRow& row(const std::string& model, Task task) const {
    for (const ComparisonRow& r : rows) {
      if (r.model == model && r.task == task) return r;
    }
    throw UsageError("comparison has no row for " + model + "/" + task_name(task));
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const ComparisonRow& r : rows) {
      j.push_back({{"model", r.model},
                   {"task", task_name(r.task)},
                   {"metric", r.metric},
                   {"value", r.value},
                   {"report", r.report.to_json()}});
    }
    return j;
  }
};

inline void write_comparison_csv(const std::filesystem::path& path, const ComparisonResult& result) {
  std::vector<csv::Row> rows;
  for (const ComparisonRow& r : result.rows) {
    rows.push_back({task_name(r.task), r.model, r.metric, csv::format_number(r.value)});
  }
  csv::write_file(path, {"task", "model", "metric", "value"}, rows);
}

/// Transformer, OLS, GLM and random forest on one split; regression then classification.
inline ComparisonResult compare(const PreparedData& data, const CompareConfig& config,
                                const std::function<void(const std::string&, const EpochRecord&)>& on_epoch = {}) {
  ComparisonResult out;
  const std::vector<TabularRow> tab_train = tabularize(data.train_all());
  const std::vector<TabularRow> tab_test = tabularize(data.test);
  const std::size_t L = config.transformer.seq_len;
  const auto seq_train = build_sequences(data.train, L);
  const auto seq_val = build_sequences(data.validation, L);
  const auto seq_test = build_sequences(data.test, L);

  auto add_regression = [&](const std::string& name, std::vector<double> predicted, std::size_t p) {
    ComparisonRow row{name, Task::Regression, "r2", 0.0, evaluate_predictions(regression_predictions(data.test, std::move(predicted)), p)};
    row.value = row.report.r2;
    out.rows.push_back(std::move(row));
  };
  auto add_classification = [&](const std::string& name, const std::vector<HlClass>& predicted) {
    ComparisonRow row{name, Task::Classification, "accuracy", 0.0, evaluate_predictions(class_predictions(data.test, predicted))};
    row.value = row.report.accuracy;
    out.rows.push_back(std::move(row));
  };
  auto progress = [&](const std::string& name) -> std::function<void(const EpochRecord&)> {
    if (!on_epoch) return {};
    return [&on_epoch, name](const EpochRecord& r) { on_epoch(name, r); };
  };

  add_regression("ols", ols_fit(tab_train).predict(tab_test), kNumFeatures);
  add_regression("glm", glm_fit(tab_train, config.glm_lambda).predict(tab_test), kNumFeatures);
  add_regression("rf", rf_fit(tab_train, config.forest, Task::Regression).predict(tab_test), kNumFeatures);
  {
    ModelConfig mc = config.transformer;
    mc.task = Task::Regression;
    TrainResult trained = train_transformer(seq_train, seq_val, mc, progress("transformer/regression"));
    const auto predicted = trained.model.predict_hl(seq_test);
    add_regression("transformer", predicted, 0);
    out.transformer_per_farm = per_farm_report(regression_predictions(data.test, predicted));
  }
  if (config.classification) {
    add_classification("rf", rf_fit(tab_train, config.forest, Task::Classification).predict_class(tab_test));
    ModelConfig mc = config.transformer;
    mc.task = Task::Classification;
    TrainResult trained = train_transformer(seq_train, seq_val, mc, progress("transformer/classification"));
    std::vector<HlClass> labels;
    for (const ClassPrediction& p : trained.model.predict_class(seq_test)) labels.push_back(p.label);
    add_classification("transformer", labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence-length sweep
// ---------------------------------------------------------------------------

struct SweepCell {
  std::size_t train_length = 0;
  std::size_t eval_k = 0;
  double r2 = kNaN;
  double mae_days = kNaN;
  std::string error;  // empty when the cell trained
};

/// Trains one regression model per length and scores it on the latest-k views of the test set.
/// A cell whose training fails records the error and the sweep continues.
inline std::vector<SweepCell> length_sweep(const PreparedData& data, const std::vector<std::size_t>& lengths,
                                           const std::vector<std::size_t>& k_grid, const ModelConfig& base,
                                           std::size_t threads = thread_count()) {
  std::vector<std::vector<SweepCell>> per_length(lengths.size());
  parallel_for(
      lengths.size(),
      [&](std::size_t li) {
        const std::size_t L = lengths[li];
        std::vector<std::size_t> ks;
        for (std::size_t k : k_grid)
          if (k >= 1 && k <= L) ks.push_back(k);
        auto& cells = per_length[li];
        try {
          ModelConfig mc = base;
          mc.seq_len = L;
          mc.task = Task::Regression;
          TrainResult trained =
              train_transformer(build_sequences(data.train, L), build_sequences(data.validation, L), mc);
          const auto test = build_sequences(data.test, L);
          for (std::size_t k : ks) {
            const EvalReport rep =
                evaluate_predictions(regression_predictions(data.test, trained.model.predict_hl(latest_k_views(test, k))));
            cells.push_back({L, k, rep.r2, rep.mae_days, ""});
          }
        } catch (const Error& e) {
          cells.clear();
          for (std::size_t k : ks) cells.push_back({L, k, kNaN, kNaN, e.what()});
        }
      },
      threads);
  std::vector<SweepCell> out;
  for (auto& cells : per_length) out.insert(out.end(), cells.begin(), cells.end());
  return out;
}

inline void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepCell>& cells) {
  std::vector<csv::Row> rows;
  for (const SweepCell& c : cells) {
    rows.push_back({std::to_string(c.train_length), std::to_string(c.eval_k), csv::format_number(c.r2),
                    csv::format_number(c.mae_days), c.error});
  }
  csv::write_file(path, {"train_length", "eval_k", "r2", "mae_days", "error"}, rows);
}

}  // namespace herdlife
