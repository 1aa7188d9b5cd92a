#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "herdlife/generator.hpp"
#include "herdlife/pipeline.hpp"
#include "herdlife/transformer.hpp"

using namespace herdlife;

namespace {

ModelConfig small_config(Task task = Task::Regression) {
  ModelConfig c;
  c.seq_len = 6;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 2;
  c.d_ff = 32;
  c.dropout = 0.0;
  c.task = task;
  c.train.seed = 3;
  return c;
}

// Herd life planted as 2600 + 600 * (mean of milk_305 over the valid rows) + noise.
std::vector<SequenceSample> planted_fixture(std::size_t n, std::size_t L, std::uint64_t seed, double noise_sd = 0.0) {
  Rng rng(seed);
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SequenceSample s;
    s.length = L;
    s.features.assign(L * kNumFeatures, 0.0);
    s.mask.assign(L, 0.0);
    const std::size_t valid = 1 + rng.index(L);
    double mean = 0.0;
    for (std::size_t p = L - valid; p < L; ++p) {
      s.mask[p] = 1.0;
      for (std::size_t f = 0; f < kNumFeatures; ++f) s.at(p, f) = rng.normal();
      mean += s.at(p, kMilk305) / static_cast<double>(valid);
    }
    s.hl_days = std::llround(2600.0 + 600.0 * mean + noise_sd * rng.normal());
    s.hl_class = hl_to_class(static_cast<double>(std::max<std::int64_t>(s.hl_days, 0)));
    s.cow_id = "C" + std::to_string(i);
    s.farm_id = "F0";
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Transformer, OutputShapes) {
  const auto samples = planted_fixture(5, 6, 1);
  const Batch b = collate(samples, {0, 1, 2});
  for (Task task : {Task::Regression, Task::Classification}) {
    TransformerModel m(small_config(task), 1);
    ag::Tape tape(false);
    EXPECT_EQ(m.forward(tape, b.features, b.mask).value().shape(),
              (std::vector<std::size_t>{3, task == Task::Regression ? 1u : 3u}));
    EXPECT_THROW(m.forward(tape, Tensor({3, 5, kNumFeatures}), b.mask), ShapeError);
  }
}

TEST(Transformer, AttentionRowsSumToOneWithZerosOnMaskedKeys) {
  const auto samples = planted_fixture(4, 6, 2);
  const Batch b = collate(samples, {0, 1, 2, 3});
  TransformerModel m(small_config(), 1);
  ag::Tape tape(false);
  std::vector<Tensor> attention;
  m.forward(tape, b.features, b.mask, nullptr, &attention);
  ASSERT_EQ(attention.size(), 2u);
  const std::size_t H = 2, L = 6;
  for (const Tensor& w : attention) {
    ASSERT_EQ(w.shape(), (std::vector<std::size_t>{4 * H, L, L}));
    for (std::size_t bh = 0; bh < 4 * H; ++bh) {
      const std::size_t sample = bh / H;
      for (std::size_t q = 0; q < L; ++q) {
        double sum = 0.0;
        for (std::size_t k = 0; k < L; ++k) {
          const double v = w.at({bh, q, k});
          sum += v;
          if (b.mask.at({sample, k}) == 0.0) EXPECT_EQ(v, 0.0);
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    }
  }
}

TEST(Transformer, MaskedPositionsDoNotAffectOutput) {
  auto samples = planted_fixture(8, 6, 3);
  TransformerModel m(small_config(), 4);
  const auto before = m.raw_outputs(samples);
  Rng rng(9);
  for (SequenceSample& s : samples)
    for (std::size_t p = 0; p < s.length; ++p)
      if (s.mask[p] == 0.0)
        for (std::size_t f = 0; f < kNumFeatures; ++f) s.at(p, f) = 100.0 * rng.normal();
  const auto after = m.raw_outputs(samples);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i][0], after[i][0], 1e-6);
}

TEST(Transformer, FullyMaskedSampleIsRejected) {
  auto samples = planted_fixture(2, 6, 4);
  std::fill(samples[1].mask.begin(), samples[1].mask.end(), 0.0);
  TransformerModel m(small_config(), 1);
  EXPECT_THROW(m.raw_outputs(samples), NumericError);
}

TEST(Transformer, ConfigValidation) {
  ModelConfig c = small_config();
  c.heads = 3;
  EXPECT_THROW(TransformerModel(c, 1), UsageError);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(TransformerModel(c, 1), UsageError);
  c = small_config();
  c.train.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Transformer, ZeroHeadPredictsTrainingMean) {
  const auto samples = planted_fixture(10, 6, 5);
  TransformerModel m(small_config(), 1);
  m.target = {2617.0, 903.0};
  m.parameter("head.weight").value.fill(0.0);
  m.parameter("head.bias").value.fill(0.0);
  for (double hl : m.predict_hl(samples)) EXPECT_EQ(hl, 2617.0);
  EXPECT_THROW(m.predict_class(samples), UsageError);
}

TEST(Transformer, NonFiniteParametersRefusePrediction) {
  const auto samples = planted_fixture(3, 6, 6);
  TransformerModel m(small_config(), 1);
  m.parameter("head.bias").value[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(m.predict_hl(samples), NumericError);
}

TEST(Transformer, ClassProbabilitiesAndTieRule) {
  const auto samples = planted_fixture(20, 6, 7);
  TransformerModel m(small_config(Task::Classification), 2);
  for (const ClassPrediction& p : m.predict_class(samples)) {
    EXPECT_NEAR(p.probabilities[0] + p.probabilities[1] + p.probabilities[2], 1.0, 1e-6);
  }
  const std::array<double, 3> equal = {0.3, 0.3, 0.3};
  EXPECT_EQ(argmax_lowest(equal), 0);
  const std::array<double, 3> upper_tie = {0.1, 0.5, 0.5};
  EXPECT_EQ(argmax_lowest(upper_tie), 1);
  m.parameter("head.weight").value.fill(0.0);
  m.parameter("head.bias").value.fill(0.0);
  for (const ClassPrediction& p : m.predict_class(samples)) EXPECT_EQ(p.label, HlClass::Low);
}

TEST(Training, RecoversPlantedRegressionSignal) {
  const auto train = planted_fixture(400, 6, 10, 50.0);
  const auto val = planted_fixture(100, 6, 11, 50.0);
  const auto test = planted_fixture(100, 6, 12, 50.0);
  ModelConfig c = small_config();
  c.train.max_epochs = 60;
  TrainResult r = train_transformer(train, val, c);
  const auto predicted = r.model.predict_hl(test);
  double abs_error = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ASSERT_TRUE(std::isfinite(predicted[i]));
    abs_error += std::abs(predicted[i] - static_cast<double>(test[i].hl_days)) / static_cast<double>(test.size());
  }
  // Noise sd is 50 days; an unfit model is off by about 400.
  EXPECT_LT(abs_error, 150.0);
}

TEST(Training, ClassifiesPlantedSignal) {
  const auto train = planted_fixture(400, 6, 20);
  const auto val = planted_fixture(100, 6, 21);
  const auto test = planted_fixture(100, 6, 22);
  ModelConfig c = small_config(Task::Classification);
  c.train.max_epochs = 60;
  TrainResult r = train_transformer(train, val, c);
  std::size_t correct = 0;
  const auto predicted = r.model.predict_class(test);
  for (std::size_t i = 0; i < test.size(); ++i) correct += predicted[i].label == test[i].hl_class;
  EXPECT_GE(correct, 80u);
}

TEST(Training, MemorizesSmallSet) {
  const auto train = planted_fixture(32, 6, 30, 300.0);
  ModelConfig c = small_config();
  c.train.max_epochs = 500;
  TrainResult r = train_transformer(train, {}, c);
  EXPECT_EQ(r.best_epoch, 500u);
  // Loss is the MSE of the standardized target.
  EXPECT_LT(r.history.back().train_loss, 0.01);
}

TEST(Training, LossDecreasesOnDefaultSyntheticData) {
  const GeneratedData data = generate(default_config());
  PreparedData prepared = prepare(ingest_tables(data.tables).histories);
  ModelConfig c;
  c.train.max_epochs = 5;
  c.train.seed = 7;
  const TrainResult r = train_transformer(build_sequences(prepared.train, c.seq_len), {}, c);
  ASSERT_EQ(r.history.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.history[e].train_loss, r.history[e - 1].train_loss) << e;
}

TEST(Training, SameSeedGivesBitIdenticalParameters) {
  const auto train = planted_fixture(64, 6, 40);
  const auto val = planted_fixture(16, 6, 41);
  ModelConfig c = small_config();
  c.dropout = 0.1;
  c.train.max_epochs = 4;
  const TrainResult a = train_transformer(train, val, c);
  const TrainResult b = train_transformer(train, val, c);
  ASSERT_EQ(a.model.parameters().size(), b.model.parameters().size());
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i) {
    EXPECT_EQ(a.model.parameters()[i].value, b.model.parameters()[i].value) << a.model.parameters()[i].name;
  }
  c.train.seed = 4;
  const TrainResult other = train_transformer(train, val, c);
  EXPECT_NE(other.model.parameters()[0].value, a.model.parameters()[0].value);
}

TEST(Training, DivergenceIsReported) {
  const auto train = planted_fixture(32, 6, 50);
  ModelConfig c = small_config();
  c.train.max_epochs = 20;
  c.train.learning_rate = 1e300;
  EXPECT_THROW(train_transformer(train, {}, c), DivergenceError);
  EXPECT_THROW(train_transformer({}, {}, small_config()), DataError);
}

TEST(Checkpoint, RoundTripPredictionsAndHeader) {
  const auto samples = planted_fixture(100, 6, 60);
  ModelConfig c = small_config(Task::Classification);
  c.train.max_epochs = 2;
  c.train.seed = 77;
  TrainResult r = train_transformer(samples, {}, c);
  const auto path = std::filesystem::temp_directory_path() / "herdlife_test_model.ckpt";
  r.model.save(path);
  TransformerModel back = TransformerModel::load(path);
  EXPECT_EQ(back.seed, 77u);
  const Checkpoint raw = load_checkpoint(path);
  EXPECT_EQ(raw.header.at("seed"), 77);
  EXPECT_EQ(raw.header.at("thresholds"), nlohmann::json({2158.0, 2997.0}));
  const auto a = r.model.predict_class(samples);
  const auto b = back.predict_class(samples);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].probabilities, b[i].probabilities);
  }

  // Truncated file.
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(TransformerModel::load(path), CheckpointError);
  // Wrong version.
  bytes[8] = 99;
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(TransformerModel::load(path), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(TransformerModel::load(path), CheckpointError);
}
