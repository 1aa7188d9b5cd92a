#include <gtest/gtest.h>

#include <cstdlib>

#include "herdlife/baselines.hpp"
#include "herdlife/generator.hpp"
#include "support/fixtures.hpp"

using namespace herdlife;
using namespace herdlife::test_support;

namespace {

TabularRow row_with(std::initializer_list<std::pair<std::size_t, double>> values, double y) {
  TabularRow r;
  for (auto [j, v] : values) r.features[j] = v;
  r.hl_days = y;
  return r;
}

std::vector<TabularRow> noisy_rows(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TabularRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    TabularRow r;
    for (std::size_t j = 0; j < kNumFeatures; ++j) r.features[j] = rng.normal();
    r.hl_days = 2600.0 + 300.0 * r.features[2] - 100.0 * r.features[7] + 200.0 * rng.normal();
    r.hl_class = hl_to_class(std::max(0.0, r.hl_days));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST(Tabularize, LatestRecordPerCow) {
  auto histories = make_histories(3, 1, 1);
  histories[1] = make_histories(1, 1, 200).front();
  histories[1].cow_id = "C_LONG";
  std::swap(histories[1].records[0], histories[1].records[150]);  // order in storage must not matter
  const auto rows = tabularize(histories);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].features, select_features(histories[0].records[0]));
  EXPECT_EQ(rows[1].cow_id, "C_LONG");
  EXPECT_EQ(rows[1].features[kCurrentLife], 800.0 + 30.0 * 199);
  EXPECT_EQ(rows[1].hl_days, static_cast<double>(histories[1].hl_days));
  histories[2].records.clear();
  EXPECT_THROW(tabularize(histories), DataError);
}

TEST(Ols, RecoversExactLine) {
  std::vector<TabularRow> rows;
  for (int i = 0; i < 10; ++i) rows.push_back(row_with({{3, i * 0.7}}, 2.0 * i * 0.7 + 1.0));
  const LinearModel m = ols_fit(rows);
  EXPECT_NEAR(m.coefficients[3], 2.0, 1e-8);
  EXPECT_NEAR(m.intercept, 1.0, 1e-8);
  for (std::size_t j = 0; j < kNumFeatures; ++j)
    if (j != 3) EXPECT_EQ(m.coefficients[j], 0.0) << "constant column";
}

TEST(Ols, ResidualsAreOrthogonalToColumns) {
  const auto rows = noisy_rows(300, 1);
  const LinearModel m = ols_fit(rows);
  const auto predicted = m.predict(rows);
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    double dot = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      dot += (rows[i].hl_days - predicted[i]) * rows[i].features[j];
      norm += rows[i].features[j] * rows[i].features[j];
    }
    EXPECT_LT(std::abs(dot) / std::sqrt(norm), 1e-6) << j;
  }
}

TEST(Ols, TooFewRowsIsAnError) {
  auto rows = noisy_rows(16, 2);
  EXPECT_THROW(ols_fit(rows), DataError);
  EXPECT_NO_THROW(glm_fit(rows, 1.0));
  EXPECT_THROW(glm_fit(rows, -1.0), UsageError);
}

TEST(Ols, RecoversPlantedLinearGenerator) {
  GeneratorConfig config;
  config.mode = SignalMode::Linear;
  const GeneratedData data = generate(config);
  const IngestResult ingested = ingest_tables(data.tables);
  ASSERT_EQ(ingested.histories.size(), config.n_cows);
  const LinearModel m = ols_fit(tabularize(ingested.histories));
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    const double planted = config.linear_coefficients[j];
    if (planted != 0.0) EXPECT_LE(std::abs(m.coefficients[j] - planted), 0.02 * std::abs(planted)) << kFeatureNames[j];
  }
  EXPECT_LE(std::abs(m.intercept - config.linear_intercept), 0.02 * std::abs(config.linear_intercept));
}

TEST(Glm, LambdaZeroEqualsOls) {
  const auto rows = noisy_rows(200, 3);
  const LinearModel a = ols_fit(rows), b = glm_fit(rows, 0.0);
  EXPECT_NEAR(a.intercept, b.intercept, 1e-8);
  for (std::size_t j = 0; j < kNumFeatures; ++j) EXPECT_NEAR(a.coefficients[j], b.coefficients[j], 1e-8);
}

TEST(Glm, HugeLambdaShrinksToMean) {
  const auto rows = noisy_rows(200, 4);
  const LinearModel m = glm_fit(rows, 1e12);
  double mean = 0.0;
  for (const auto& r : rows) mean += r.hl_days / static_cast<double>(rows.size());
  for (double c : m.coefficients) EXPECT_NEAR(c, 0.0, 1e-6);
  EXPECT_NEAR(m.intercept, mean, 1e-4);
}

TEST(Glm, ThreePointFixtureMatchesHandSolve) {
  // x = (0, 1, 2), y = (1, 3, 4), lambda = 1, intercept unpenalized:
  // [3 3; 3 5+1] [b0 b1]' = [8 11]'  ->  b1 = 1, b0 = 5/3.
  std::vector<TabularRow> rows = {row_with({{0, 0.0}}, 1.0), row_with({{0, 1.0}}, 3.0), row_with({{0, 2.0}}, 4.0)};
  const LinearModel m = glm_fit(rows, 1.0);
  EXPECT_NEAR(m.coefficients[0], 1.0, 1e-8);
  EXPECT_NEAR(m.intercept, 5.0 / 3.0, 1e-8);
}

TEST(Linear, RawUnitsAndCheckpoint) {
  auto histories = make_histories(60, 2, 3);
  const Standardizer s = fit_standardizer(histories);
  const auto z = apply_standardizer(s, histories);
  const LinearModel m = glm_fit(tabularize(z), 0.5);
  const LinearModel raw = m.to_raw_units(s);
  const auto zr = tabularize(z), rr = tabularize(histories);
  for (std::size_t i = 0; i < zr.size(); ++i) EXPECT_NEAR(m.predict(zr[i].features), raw.predict(rr[i].features), 1e-6);
  const LinearModel back = LinearModel::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(m.to_checkpoint())));
  EXPECT_EQ(back.kind, "glm");
  EXPECT_EQ(back.coefficients, m.coefficients);
  EXPECT_EQ(back.intercept, m.intercept);
}

TEST(Forest, SingleFullTreeMemorizesDistinctRows) {
  const auto rows = noisy_rows(50, 5);
  ForestConfig c;
  c.n_trees = 1;
  c.max_depth = 0;
  c.min_samples_leaf = 1;
  c.max_features = kNumFeatures;
  c.bootstrap = false;
  const RandomForest f = rf_fit(rows, c, Task::Regression);
  const auto predicted = f.predict(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_DOUBLE_EQ(predicted[i], rows[i].hl_days);
}

TEST(Forest, VoteTieRule) {
  RandomForest f;
  f.task = Task::Classification;
  auto leaf = [](double cls) {
    DecisionTree t;
    t.nodes.push_back({-1, 0.0, -1, -1, cls});
    return t;
  };
  f.trees = {leaf(0), leaf(0), leaf(2)};
  EXPECT_EQ(f.predict(FeatureVector{}), 0.0);
  f.trees = {leaf(2), leaf(1)};
  EXPECT_EQ(f.predict(FeatureVector{}), 1.0);
  f.trees = {leaf(2), leaf(0), leaf(1)};
  EXPECT_EQ(f.predict(FeatureVector{}), 0.0);
}

TEST(Forest, SameSeedSameForestAcrossThreadCounts) {
  const auto rows = noisy_rows(120, 6);
  ForestConfig c;
  c.n_trees = 12;
  c.seed = 9;
  ::setenv("HERDLIFE_THREADS", "1", 1);
  const RandomForest a = rf_fit(rows, c, Task::Classification);
  ::setenv("HERDLIFE_THREADS", "4", 1);
  const RandomForest b = rf_fit(rows, c, Task::Classification);
  ::unsetenv("HERDLIFE_THREADS");
  EXPECT_EQ(serialize_checkpoint(a.to_checkpoint()), serialize_checkpoint(b.to_checkpoint()));
  EXPECT_EQ(a.predict_class(rows), b.predict_class(rows));
  c.seed = 10;
  EXPECT_NE(serialize_checkpoint(rf_fit(rows, c, Task::Classification).to_checkpoint()),
            serialize_checkpoint(a.to_checkpoint()));
}

TEST(Forest, CheckpointRoundTrip) {
  const auto rows = noisy_rows(80, 7);
  ForestConfig c;
  c.n_trees = 5;
  const RandomForest f = rf_fit(rows, c, Task::Regression);
  const RandomForest back = RandomForest::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(f.to_checkpoint())));
  EXPECT_EQ(back.predict(rows), f.predict(rows));
  EXPECT_EQ(rf_feature_importance(back), rf_feature_importance(f));
  EXPECT_THROW(f.predict_class(rows), UsageError);
}

TEST(Forest, ImportanceNormalizedAndZeroForUnusedFeatures) {
  auto rows = noisy_rows(150, 8);
  for (auto& r : rows) r.features[11] = 1.0;  // constant: never split on
  ForestConfig c;
  c.n_trees = 20;
  const auto imp = rf_feature_importance(rf_fit(rows, c, Task::Regression));
  double sum = 0.0;
  for (double v : imp) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(imp[11], 0.0);
  EXPECT_EQ(std::max_element(imp.begin(), imp.end()) - imp.begin(), 2);
}

TEST(Forest, DominantGeneratorFeatureRanksFirst) {
  GeneratorConfig config;
  config.mode = SignalMode::DominantFeature;
  config.n_cows = 600;
  const IngestResult ingested = ingest_tables(generate(config).tables);
  ForestConfig c;
  c.n_trees = 50;
  const auto z = apply_standardizer(fit_standardizer(ingested.histories), ingested.histories);
  const auto imp = rf_feature_importance(rf_fit(tabularize(z), c, Task::Regression));
  EXPECT_EQ(static_cast<std::size_t>(std::max_element(imp.begin(), imp.end()) - imp.begin()),
            feature_index(config.dominant_feature));
}

TEST(Forest, ConfigValidation) {
  ForestConfig c;
  c.max_features = 17;
  EXPECT_THROW(rf_fit(noisy_rows(10, 1), c, Task::Regression), UsageError);
  EXPECT_THROW(rf_fit({}, ForestConfig{}, Task::Regression), DataError);
}
