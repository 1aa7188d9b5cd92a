#include <gtest/gtest.h>

#include <cmath>

#include "herdlife/generator.hpp"
#include "herdlife/metrics.hpp"
#include "herdlife/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace herdlife;

namespace {

// Rows actual low/medium/high, columns predicted.
ConfusionMatrix3 reference_matrix() {
  ConfusionMatrix3 cm;
  cm.counts = {{{2153, 47, 0}, {319, 567, 36}, {34, 200, 440}}};
  return cm;
}

}  // namespace

TEST(R2, PerfectMeanAndHandFixture) {
  const std::vector<double> y = {1, 2, 3, 4};
  EXPECT_EQ(r2(y, y), 1.0);
  EXPECT_EQ(r2(y, {2.5, 2.5, 2.5, 2.5}), 0.0);
  // SS_res = .01 + .01 + .04 + .04 = .10; SS_tot = 5.
  EXPECT_NEAR(r2(y, {1.1, 1.9, 3.2, 3.8}), 1.0 - 0.10 / 5.0, 1e-12);
  EXPECT_THROW(r2({3, 3, 3}, {1, 2, 3}), NumericError);
  EXPECT_THROW(r2({1, 2}, {1}), UsageError);
  // 1 - (1 - .98) * 3 / (4 - 1 - 1)
  EXPECT_NEAR(r2_adjusted(y, {1.1, 1.9, 3.2, 3.8}, 1), 1.0 - 0.02 * 3.0 / 2.0, 1e-12);
}

TEST(Mae, HandArithmeticAndSymmetry) {
  EXPECT_EQ(mae({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(mae({0, 10}, {5, 5}), 5.0);
  EXPECT_EQ(mae({0, 0}, {3, -3}), mae({0, 0}, {-3, 3}));
}

TEST(Pearson, IdentityNegationAffineInvariance) {
  const std::vector<double> x = {1.0, 4.0, 2.5, 8.0, -1.0};
  std::vector<double> neg, affine;
  for (double v : x) {
    neg.push_back(-v);
    affine.push_back(3.7 * v + 12.0);
  }
  const std::vector<double> y = {2.0, 1.0, 3.0, 7.0, 0.5};
  EXPECT_DOUBLE_EQ(pearson(x, x), 1.0);
  EXPECT_DOUBLE_EQ(pearson(x, neg), -1.0);
  EXPECT_NEAR(pearson(affine, y), pearson(x, y), 1e-12);
}

TEST(Classification, ReferenceRowsFromPrecisionRecall) {
  EXPECT_EQ(percent(f1_score(0.86, 0.98)), 92);
  EXPECT_EQ(percent(f1_score(0.70, 0.61)), 65);
  // 0.92/0.65 gives 0.7618 at face value; the reference 77 lies within the rounding of P and R.
  double lo = 1.0, hi = 0.0;
  for (double p : {0.915, 0.925})
    for (double r : {0.645, 0.655}) {
      lo = std::min(lo, f1_score(p, r));
      hi = std::max(hi, f1_score(p, r));
    }
  EXPECT_LE(percent(lo), 77);
  EXPECT_GE(percent(hi), 77);
}

TEST(Classification, ReferenceMatrixReproducesClassReport) {
  const ConfusionMatrix3 cm = reference_matrix();
  const auto rows = prf1(cm);
  const std::array<std::array<int, 3>, 3> expected = {{{86, 98, 92}, {70, 61, 65}, {92, 65, 77}}};
  const std::array<std::int64_t, 3> support = {2200, 922, 674};
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(percent(rows[c].precision), expected[c][0]) << c;
    EXPECT_EQ(percent(rows[c].recall), expected[c][1]) << c;
    EXPECT_EQ(percent(rows[c].f1), expected[c][2]) << c;
    EXPECT_EQ(rows[c].support, support[c]);
  }
  EXPECT_EQ(percent(accuracy(cm)), 83);
  const CritMis m = crit_mis(cm);
  EXPECT_EQ(m.low_as_high, 0);
  EXPECT_EQ(m.high_as_low, 34);
  EXPECT_EQ(percent(m.high_as_low_rate), 5);
}

TEST(Classification, AllCorrectAndEdgeCases) {
  const std::vector<int> labels = {0, 1, 2, 2, 1, 0, 0};
  const ConfusionMatrix3 cm = confusion(labels, labels);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t p = 0; p < 3; ++p)
      if (a != p) EXPECT_EQ(cm.counts[a][p], 0);
  EXPECT_EQ(accuracy(cm), 1.0);
  EXPECT_EQ(crit_mis(cm).low_as_high, 0);
  EXPECT_EQ(crit_mis(cm).high_as_low, 0);
  EXPECT_THROW(confusion({0, 3}, {0, 1}), UsageError);
  const auto rows = prf1(confusion({0, 0}, {0, 0}));
  EXPECT_TRUE(rows[2].precision_undefined);
  EXPECT_TRUE(rows[2].recall_undefined);
  EXPECT_EQ(rows[2].f1, 0.0);
}

TEST(PerFarm, SingleFarmEqualsOverall) {
  Predictions p;
  p.farm_ids = {"A", "A", "A"};
  p.actual_hl = {1000, 2000, 3000};
  p.predicted_hl = {1100, 1900, 3300};
  const auto rows = per_farm_report(p);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].second.to_json().dump(), rows[1].second.to_json().dump());
}

TEST(PerFarm, SevenFarmsOverallMaeIsWeightedMean) {
  GeneratorConfig config;
  config.n_cows = 700;
  const PreparedData data = prepare(ingest_tables(generate(config).tables).histories);
  const auto train = tabularize(data.train_all());
  const auto test = tabularize(data.test);
  const auto rows = per_farm_report(regression_predictions(data.test, ols_fit(train).predict(test)));
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows.back().first, "overall");
  double weighted = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    weighted += rows[i].second.mae_days * static_cast<double>(rows[i].second.samples);
    n += rows[i].second.samples;
  }
  EXPECT_EQ(n, rows.back().second.samples);
  EXPECT_NEAR(weighted / static_cast<double>(n), rows.back().second.mae_days, 1e-9);
}

TEST(Sweep, CellCountAndDeterminism) {
  GeneratorConfig config;
  config.n_cows = 200;
  const PreparedData data = prepare(ingest_tables(generate(config).tables).histories);
  ModelConfig base;
  base.d_model = 8;
  base.heads = 2;
  base.layers = 1;
  base.d_ff = 16;
  base.train.max_epochs = 2;
  const std::vector<std::size_t> lengths = {2, 5}, ks = {1, 3, 5};
  const auto a = length_sweep(data, lengths, ks, base);
  ASSERT_EQ(a.size(), 1u + 3u);  // L=2 gets k=1; L=5 gets k=1,3,5
  for (const SweepCell& c : a) {
    EXPECT_TRUE(c.error.empty()) << c.error;
    EXPECT_LE(c.eval_k, c.train_length);
  }
  const auto b = length_sweep(data, lengths, ks, base, 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].r2, b[i].r2);
    EXPECT_EQ(a[i].mae_days, b[i].mae_days);
  }
}

TEST(Sweep, FailedCellIsRecordedAndOthersContinue) {
  GeneratorConfig config;
  config.n_cows = 100;
  const PreparedData data = prepare(ingest_tables(generate(config).tables).histories);
  ModelConfig base;
  base.d_model = 8;
  base.heads = 2;
  base.layers = 1;
  base.d_ff = 16;
  base.train.max_epochs = 3;
  base.train.learning_rate = 1e300;
  auto cells = length_sweep(data, {3}, {1, 3}, base);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_FALSE(cells[0].error.empty());
  EXPECT_TRUE(std::isnan(cells[0].r2));
}
