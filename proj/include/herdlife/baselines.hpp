#pragma once

// Tabular baselines on one row per cow: OLS, ridge GLM and random forests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "herdlife/checkpoint.hpp"
#include "herdlife/classes.hpp"
#include "herdlife/error.hpp"
#include "herdlife/ingestion.hpp"
#include "herdlife/parallel.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/transformer.hpp"

namespace herdlife {

struct TabularRow {
  FeatureVector features{};
  double hl_days = 0.0;
  HlClass hl_class = HlClass::Low;
  std::string cow_id;
  std::string farm_id;
};

/// The latest record of each cow (by date; the later input wins a same-date tie).
inline std::vector<TabularRow> tabularize(const std::vector<CowHistory>& histories) {
  std::vector<TabularRow> rows;
  rows.reserve(histories.size());
  for (const CowHistory& h : histories) {
    if (h.records.empty()) throw DataError("cow " + h.cow_id + " has no records");
    std::size_t latest = 0;
    for (std::size_t i = 1; i < h.records.size(); ++i) {
      if (!(h.records[i].date < h.records[latest].date)) latest = i;
    }
    rows.push_back({select_features(h.records[latest]), static_cast<double>(h.hl_days), h.hl_class, h.cow_id,
                    h.farm_id});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Linear models
// ---------------------------------------------------------------------------

struct LinearModel {
  std::string kind = "ols";
  double lambda = 0.0;
  double intercept = 0.0;
  std::array<double, kNumFeatures> coefficients{};

  double predict(const FeatureVector& x) const {
    double y = intercept;
    for (std::size_t j = 0; j < kNumFeatures; ++j) y += coefficients[j] * x[j];
    return y;
  }

  std::vector<double> predict(const std::vector<TabularRow>& rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const TabularRow& r : rows) out.push_back(predict(r.features));
    return out;
  }

  /// Same model expressed on unstandardized features.
  LinearModel to_raw_units(const Standardizer& s) const {
    LinearModel raw = *this;
    for (std::size_t j = 0; j < kNumContinuous; ++j) {
      if (!s.active[j]) {
        raw.coefficients[j] = 0.0;
        continue;
      }
      raw.coefficients[j] = coefficients[j] / s.sd[j];
      raw.intercept -= coefficients[j] * s.mean[j] / s.sd[j];
    }
    return raw;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    c.header["model"] = kind;
    c.header["lambda"] = lambda;
    c.header["intercept"] = intercept;
    c.tensors.emplace_back("coefficients", Tensor({kNumFeatures}, std::vector<double>(coefficients.begin(), coefficients.end())));
    return c;
  }

  static LinearModel from_checkpoint(const Checkpoint& c) {
    LinearModel m;
    try {
      m.kind = c.header.at("model");
      m.lambda = c.header.at("lambda");
      m.intercept = c.header.at("intercept");
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("bad linear model header: ") + e.what());
    }
    const Tensor& t = c.tensor("coefficients");
    if (t.numel() != kNumFeatures) throw CheckpointError("coefficient vector has the wrong length");
    std::copy(t.values().begin(), t.values().end(), m.coefficients.begin());
    return m;
  }
};

inline constexpr double kOlsJitter = 1e-10;

namespace detail {

/// Baselines take standardized rows; raw rows may still hold NaN for missing values.
inline void require_complete(const std::vector<TabularRow>& rows) {
  for (const TabularRow& r : rows) {
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
      if (!std::isfinite(r.features[j])) {
        throw DataError("cow " + r.cow_id + ": feature " + std::string(kFeatureNames[j]) +
                        " is missing (standardize before fitting)");
      }
    }
    if (!std::isfinite(r.hl_days)) throw DataError("cow " + r.cow_id + ": herd life is missing");
  }
}

}  // namespace detail

/// Penalized least squares with an unpenalized intercept:
/// minimize sum (y - b0 - x.b)^2 + lambda |b|^2.
///
/// Solved on centred columns via LDLT. Columns with zero variance get coefficient 0.
inline LinearModel glm_fit(const std::vector<TabularRow>& rows, double lambda) {
  if (!(lambda >= 0.0)) throw UsageError("l2 lambda must be non-negative");
  if (rows.size() < 2) throw DataError("linear fit needs at least 2 rows, got " + std::to_string(rows.size()));
  detail::require_complete(rows);
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd mean_x = Eigen::VectorXd::Zero(kNumFeatures);
  double mean_y = 0.0;
  for (const TabularRow& r : rows) {
    for (std::size_t j = 0; j < kNumFeatures; ++j) mean_x[static_cast<Eigen::Index>(j)] += r.features[j];
    mean_y += r.hl_days;
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);

  std::vector<Eigen::Index> used;
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    bool varies = false;
    for (const TabularRow& r : rows) varies = varies || r.features[j] != rows.front().features[j];
    if (varies) used.push_back(static_cast<Eigen::Index>(j));
  }
  const auto p = static_cast<Eigen::Index>(used.size());
  if (lambda == 0.0 && rows.size() <= used.size()) {
    throw DataError("least squares needs more rows than varying columns (" + std::to_string(used.size()) + "), got " +
                    std::to_string(rows.size()));
  }
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < p; ++k) x(i, k) = rows[static_cast<std::size_t>(i)].features[static_cast<std::size_t>(used[static_cast<std::size_t>(k)])] - mean_x[used[static_cast<std::size_t>(k)]];
    y[i] = rows[static_cast<std::size_t>(i)].hl_days - mean_y;
  }
  LinearModel model;
  model.kind = lambda == 0.0 ? "ols" : "glm";
  model.lambda = lambda;
  if (p > 0) {
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += kOlsJitter + lambda;
    const Eigen::VectorXd rhs = x.transpose() * y;
    Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success || !solver.isPositive()) throw DataError("degenerate design matrix");
    const Eigen::VectorXd beta = solver.solve(rhs);
    if (!beta.allFinite()) throw DataError("degenerate design matrix");
    for (Eigen::Index k = 0; k < p; ++k) model.coefficients[static_cast<std::size_t>(used[static_cast<std::size_t>(k)])] = beta[k];
  }
  model.intercept = mean_y;
  for (std::size_t j = 0; j < kNumFeatures; ++j) model.intercept -= model.coefficients[j] * mean_x[static_cast<Eigen::Index>(j)];
  return model;
}

inline LinearModel ols_fit(const std::vector<TabularRow>& rows) { return glm_fit(rows, 0.0); }

inline double linear_predict(const LinearModel& model, const TabularRow& row) { return model.predict(row.features); }

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

struct ForestConfig {
  std::size_t n_trees = 200;
  std::size_t max_depth = 12;  // 0 = unlimited
  std::size_t min_samples_leaf = 5;
  std::size_t max_features = 4;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_trees == 0 || min_samples_leaf == 0 || max_features == 0 || max_features > kNumFeatures) {
      throw UsageError("forest needs n_trees, min_samples_leaf >= 1 and 1 <= max_features <= 16");
    }
  }

  nlohmann::json to_json() const {
    return {{"n_trees", n_trees}, {"max_depth", max_depth}, {"min_samples_leaf", min_samples_leaf},
            {"max_features", max_features}, {"bootstrap", bootstrap}, {"seed", seed}};
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // leaf mean (regression) or class index (classification)
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  std::array<double, kNumFeatures> importance{};  // summed weighted impurity decrease

  double predict(const FeatureVector& x) const {
    std::size_t at = 0;
    while (nodes[at].feature >= 0) {
      const TreeNode& n = nodes[at];
      at = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[at].value;
  }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<TabularRow>& rows, Task task, const ForestConfig& config, Rng& rng)
      : rows_(rows), task_(task), config_(config), rng_(rng) {
    for (const TabularRow& r : rows) targets_.push_back(task == Task::Regression ? r.hl_days : static_cast<double>(r.hl_class));
  }

  DecisionTree build(std::vector<std::size_t> sample) {
    DecisionTree tree;
    grow(tree, sample, 0);
    return tree;
  }

 private:
  struct Stats {
    double n = 0.0, sum = 0.0, sum_sq = 0.0;
    std::array<double, 3> counts{};

    void add(double y, bool classify) {
      n += 1.0;
      if (classify) {
        counts[static_cast<std::size_t>(y)] += 1.0;
      } else {
        sum += y;
        sum_sq += y * y;
      }
    }
    void remove(double y, bool classify) {
      n -= 1.0;
      if (classify) {
        counts[static_cast<std::size_t>(y)] -= 1.0;
      } else {
        sum -= y;
        sum_sq -= y * y;
      }
    }
    // n * impurity: SSE for regression, n * Gini for classification
    double weighted_impurity(bool classify) const {
      if (n <= 0.0) return 0.0;
      if (classify) {
        double sq = 0.0;
        for (double c : counts) sq += c * c;
        return n - sq / n;
      }
      return std::max(0.0, sum_sq - sum * sum / n);
    }
  };

  bool classify() const { return task_ == Task::Classification; }

  double leaf_value(const Stats& s) const {
    if (!classify()) return s.sum / s.n;
    return static_cast<double>(argmax_lowest(s.counts));
  }

  std::int32_t grow(DecisionTree& tree, std::vector<std::size_t>& sample, std::size_t depth) {
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.push_back({});
    Stats total;
    for (std::size_t i : sample) total.add(targets_[i], classify());
    tree.nodes[static_cast<std::size_t>(id)].value = leaf_value(total);
    const double parent = total.weighted_impurity(classify());
    const bool depth_ok = config_.max_depth == 0 || depth < config_.max_depth;
    if (!depth_ok || sample.size() < 2 * config_.min_samples_leaf || parent <= 1e-12) return id;

    std::array<std::size_t, kNumFeatures> features{};
    std::iota(features.begin(), features.end(), std::size_t{0});
    for (std::size_t k = 0; k < config_.max_features; ++k) {
      std::swap(features[k], features[k + rng_.index(kNumFeatures - k)]);
    }

    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order = sample;
    for (std::size_t k = 0; k < config_.max_features; ++k) {
      const std::size_t f = features[k];
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = rows_[a].features[f], vb = rows_[b].features[f];
        return va < vb || (va == vb && a < b);
      });
      Stats left, right = total;
      for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
        const double y = targets_[order[pos]];
        left.add(y, classify());
        right.remove(y, classify());
        const double here = rows_[order[pos]].features[f];
        const double next = rows_[order[pos + 1]].features[f];
        if (here == next) continue;
        if (pos + 1 < config_.min_samples_leaf || order.size() - pos - 1 < config_.min_samples_leaf) continue;
        const double gain = parent - left.weighted_impurity(classify()) - right.weighted_impurity(classify());
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = here + (next - here) / 2.0;
          if (best_threshold >= next) best_threshold = here;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left_sample, right_sample;
    for (std::size_t i : sample) {
      (rows_[i].features[static_cast<std::size_t>(best_feature)] <= best_threshold ? left_sample : right_sample).push_back(i);
    }
    sample.clear();
    sample.shrink_to_fit();
    tree.importance[static_cast<std::size_t>(best_feature)] += best_gain;
    const std::int32_t l = grow(tree, left_sample, depth + 1);
    const std::int32_t r = grow(tree, right_sample, depth + 1);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const std::vector<TabularRow>& rows_;
  Task task_;
  const ForestConfig& config_;
  Rng& rng_;
  std::vector<double> targets_;
};

}  // namespace detail

struct RandomForest {
  Task task = Task::Regression;
  ForestConfig config;
  std::vector<DecisionTree> trees;

  /// Mean over trees (regression) or the voted class index (classification; ties go to the lower class).
  double predict(const FeatureVector& x) const {
    if (task == Task::Regression) {
      double s = 0.0;
      for (const DecisionTree& t : trees) s += t.predict(x);
      return s / static_cast<double>(trees.size());
    }
    std::array<double, 3> votes{};
    for (const DecisionTree& t : trees) votes[static_cast<std::size_t>(t.predict(x))] += 1.0;
    return static_cast<double>(argmax_lowest(votes));
  }

  std::vector<double> predict(const std::vector<TabularRow>& rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const TabularRow& r : rows) out.push_back(predict(r.features));
    return out;
  }

  std::vector<HlClass> predict_class(const std::vector<TabularRow>& rows) const {
    if (task != Task::Classification) throw UsageError("predict_class needs a classification forest");
    std::vector<HlClass> out;
    for (const TabularRow& r : rows) out.push_back(class_from_index(static_cast<int>(predict(r.features))));
    return out;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    c.header["model"] = "rf";
    c.header["task"] = task_name(task);
    c.header["forest"] = config.to_json();
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const DecisionTree& tree = trees[t];
      Tensor nodes({tree.nodes.size(), 5});
      for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const TreeNode& n = tree.nodes[i];
        nodes.at({i, 0}) = n.feature;
        nodes.at({i, 1}) = n.threshold;
        nodes.at({i, 2}) = n.left;
        nodes.at({i, 3}) = n.right;
        nodes.at({i, 4}) = n.value;
      }
      c.tensors.emplace_back("tree" + std::to_string(t), std::move(nodes));
      c.tensors.emplace_back("importance" + std::to_string(t),
                             Tensor({kNumFeatures}, std::vector<double>(tree.importance.begin(), tree.importance.end())));
    }
    return c;
  }

  static RandomForest from_checkpoint(const Checkpoint& c) {
    RandomForest f;
    try {
      if (c.header.at("model") != "rf") throw CheckpointError("checkpoint does not hold a random forest");
      f.task = task_from_name(c.header.at("task"));
      const auto& j = c.header.at("forest");
      f.config.n_trees = j.at("n_trees");
      f.config.max_depth = j.at("max_depth");
      f.config.min_samples_leaf = j.at("min_samples_leaf");
      f.config.max_features = j.at("max_features");
      f.config.bootstrap = j.at("bootstrap");
      f.config.seed = j.at("seed");
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("bad forest header: ") + e.what());
    }
    for (std::size_t t = 0; t < f.config.n_trees; ++t) {
      const Tensor& nodes = c.tensor("tree" + std::to_string(t));
      const Tensor& imp = c.tensor("importance" + std::to_string(t));
      if (nodes.rank() != 2 || nodes.dim(1) != 5 || imp.numel() != kNumFeatures) throw CheckpointError("bad tree tensor");
      DecisionTree tree;
      for (std::size_t i = 0; i < nodes.dim(0); ++i) {
        tree.nodes.push_back({static_cast<int>(nodes.at({i, 0})), nodes.at({i, 1}),
                              static_cast<std::int32_t>(nodes.at({i, 2})), static_cast<std::int32_t>(nodes.at({i, 3})),
                              nodes.at({i, 4})});
      }
      std::copy(imp.values().begin(), imp.values().end(), tree.importance.begin());
      f.trees.push_back(std::move(tree));
    }
    return f;
  }
};

/// Bootstrap CART ensemble. Tree i draws from its own RNG stream, so the forest
/// does not depend on how trees are spread over threads.
inline RandomForest rf_fit(const std::vector<TabularRow>& rows, const ForestConfig& config, Task task) {
  config.validate();
  if (rows.size() < 2) throw DataError("random forest needs at least 2 rows");
  detail::require_complete(rows);
  RandomForest forest;
  forest.task = task;
  forest.config = config;
  forest.trees.resize(config.n_trees);
  parallel_for(config.n_trees, [&](std::size_t t) {
    Rng rng = Rng::stream(config.seed, t);
    std::vector<std::size_t> sample(rows.size());
    if (config.bootstrap) {
      for (std::size_t& s : sample) s = rng.index(rows.size());
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    detail::TreeBuilder builder(rows, task, config, rng);
    forest.trees[t] = builder.build(std::move(sample));
  });
  return forest;
}

/// Impurity-decrease importance summed over trees and normalized to 1 (all zeros if no tree ever split).
inline std::array<double, kNumFeatures> rf_feature_importance(const RandomForest& forest) {
  std::array<double, kNumFeatures> total{};
  for (const DecisionTree& t : forest.trees)
    for (std::size_t j = 0; j < kNumFeatures; ++j) total[j] += t.importance[j];
  const double sum = std::accumulate(total.begin(), total.end(), 0.0);
  if (sum > 0.0)
    for (double& v : total) v /= sum;
  return total;
}

}  // namespace herdlife
