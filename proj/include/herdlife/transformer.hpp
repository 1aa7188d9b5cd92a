#pragma once

// Pre-norm multi-head self-attention encoder with a regression or 3-class head.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "herdlife/autograd.hpp"
#include "herdlife/checkpoint.hpp"
#include "herdlife/classes.hpp"
#include "herdlife/error.hpp"
#include "herdlife/ingestion.hpp"
#include "herdlife/optim.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/sequencing.hpp"
#include "herdlife/tensor.hpp"

namespace herdlife {

enum class Task { Regression, Classification };

inline std::string task_name(Task t) { return t == Task::Regression ? "regression" : "classification"; }

inline Task task_from_name(const std::string& name) {
  if (name == "regression") return Task::Regression;
  if (name == "classification") return Task::Classification;
  throw UsageError("unknown task '" + name + "' (expected regression or classification)");
}

struct TrainConfig {
  std::size_t max_epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  std::size_t seq_len = 10;
  std::size_t num_features = kNumFeatures;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  Task task = Task::Regression;
  ClassThresholds thresholds;
  TrainConfig train;

  std::size_t outputs() const { return task == Task::Regression ? 1 : 3; }

  void validate() const {
    if (seq_len == 0 || num_features == 0 || d_model == 0 || heads == 0 || layers == 0 || d_ff == 0) {
      throw UsageError("model extents must be positive");
    }
    if (d_model % heads != 0) throw UsageError("d_model must be divisible by the number of heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
    if (!(thresholds.low < thresholds.high)) throw UsageError("class thresholds must satisfy low < high");
    if (train.batch_size == 0) throw UsageError("batch size must be at least 1");
    if (!(train.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  }

  nlohmann::json to_json() const {
    return {{"seq_len", seq_len},
            {"num_features", num_features},
            {"d_model", d_model},
            {"heads", heads},
            {"layers", layers},
            {"d_ff", d_ff},
            {"dropout", dropout},
            {"task", task_name(task)},
            {"threshold_low", thresholds.low},
            {"threshold_high", thresholds.high},
            {"max_epochs", train.max_epochs},
            {"batch_size", train.batch_size},
            {"learning_rate", train.learning_rate},
            {"patience", train.patience},
            {"seed", train.seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.seq_len = j.at("seq_len");
    c.num_features = j.at("num_features");
    c.d_model = j.at("d_model");
    c.heads = j.at("heads");
    c.layers = j.at("layers");
    c.d_ff = j.at("d_ff");
    c.dropout = j.at("dropout");
    c.task = task_from_name(j.at("task"));
    c.thresholds.low = j.at("threshold_low");
    c.thresholds.high = j.at("threshold_high");
    c.train.max_epochs = j.at("max_epochs");
    c.train.batch_size = j.at("batch_size");
    c.train.learning_rate = j.at("learning_rate");
    c.train.patience = j.at("patience");
    c.train.seed = j.at("seed");
    return c;
  }
};

/// Mean and sd used to z-score the regression target.
struct TargetScaler {
  double mean = 0.0;
  double sd = 1.0;
};

struct ClassPrediction {
  HlClass label = HlClass::Low;
  std::array<double, 3> probabilities{};
};

/// Index of the largest value; ties go to the lowest index.
inline int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

inline std::array<double, 3> softmax3(std::span<const double> logits) {
  const double top = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> p{};
  double z = 0.0;
  for (std::size_t i = 0; i < 3; ++i) z += (p[i] = std::exp(logits[i] - top));
  for (double& v : p) v /= z;
  return p;
}

class TransformerModel {
 public:
  TransformerModel() = default;

  /// Fresh model with seeded initialization.
  TransformerModel(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng = Rng::stream(init_seed, 0x1417);
    const std::size_t d = config_.d_model, f = config_.num_features, ff = config_.d_ff;
    add_linear("input", f, d, rng);
    add("position", Tensor::randn({config_.seq_len, d}, rng.next_u64()), 0.02);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add(p + "ln1.gamma", Tensor({d}, 1.0));
      add(p + "ln1.beta", Tensor({d}, 0.0));
      add_linear(p + "attn.q", d, d, rng);
      add_linear(p + "attn.k", d, d, rng);
      add_linear(p + "attn.v", d, d, rng);
      add_linear(p + "attn.o", d, d, rng);
      add(p + "ln2.gamma", Tensor({d}, 1.0));
      add(p + "ln2.beta", Tensor({d}, 0.0));
      add_linear(p + "ff.1", d, ff, rng);
      add_linear(p + "ff.2", ff, d, rng);
    }
    add("final_ln.gamma", Tensor({d}, 1.0));
    add("final_ln.beta", Tensor({d}, 0.0));
    add_linear("head", d, config_.outputs(), rng);
  }

  const ModelConfig& config() const noexcept { return config_; }

  std::vector<ag::Parameter>& parameters() noexcept { return params_; }
  const std::vector<ag::Parameter>& parameters() const noexcept { return params_; }

  std::vector<ag::Parameter*> parameter_pointers() {
    std::vector<ag::Parameter*> out;
    for (ag::Parameter& p : params_) out.push_back(&p);
    return out;
  }

  ag::Parameter& parameter(const std::string& name) {
    for (ag::Parameter& p : params_) {
      if (p.name == name) return p;
    }
    throw UsageError("model has no parameter '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const ag::Parameter& p : params_) n += p.value.numel();
    return n;
  }

  bool finite() const {
    return std::all_of(params_.begin(), params_.end(), [](const ag::Parameter& p) { return p.value.all_finite(); });
  }

  /// Forward pass to the head output [B, outputs].
  ///
  /// `dropout_rng` enables dropout (training); pass nullptr for inference.
  /// When `attention` is given, each layer's attention weights [B*H, L, L] are appended.
  ag::Var forward(ag::Tape& tape, const Tensor& features, const Tensor& mask, Rng* dropout_rng = nullptr,
                  std::vector<Tensor>* attention = nullptr) {
    using namespace ag;
    const std::size_t L = config_.seq_len, d = config_.d_model, H = config_.heads;
    if (features.rank() != 3 || features.dim(1) != L || features.dim(2) != config_.num_features) {
      throw ShapeError("features must be [B, " + std::to_string(L) + ", " + std::to_string(config_.num_features) +
                       "], got " + shape_string(features.shape()));
    }
    if (mask.rank() != 2 || mask.dim(0) != features.dim(0) || mask.dim(1) != L) {
      throw ShapeError("mask must be [B, L], got " + shape_string(mask.shape()));
    }
    const double p_drop = dropout_rng ? config_.dropout : 0.0;
    std::size_t next = 0;
    auto take = [&]() -> Var { return tape.parameter(params_.at(next++)); };
    auto linear = [&](const Var& x) {
      Var w = take();
      Var b = take();
      return affine(x, w, b);
    };

    Var x = linear(tape.constant(features));
    x = ag::add(x, take());
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d / H));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      Var g1 = take(), b1 = take();
      Var y = layer_norm(x, g1, b1);
      Var q = split_heads(linear(y), H);
      Var k = split_heads(linear(y), H);
      Var v = split_heads(linear(y), H);
      Var scores = scale(matmul(q, transpose(k)), scale_factor);
      Var weights = masked_softmax(scores, mask);
      if (attention) attention->push_back(weights.value());
      Var context = linear(merge_heads(matmul(weights, v), H));
      if (p_drop > 0.0) context = dropout(context, p_drop, *dropout_rng);
      x = ag::add(x, context);
      Var g2 = take(), b2 = take();
      Var hidden = gelu(linear(layer_norm(x, g2, b2)));
      Var out = linear(hidden);
      if (p_drop > 0.0) out = dropout(out, p_drop, *dropout_rng);
      x = ag::add(x, out);
    }
    Var gf = take(), bf = take();
    x = layer_norm(x, gf, bf);
    Var pooled = masked_mean_pool(x, mask);
    return linear(pooled);
  }

  /// Raw head outputs for every sample, [N, outputs], computed in inference mode.
  std::vector<std::array<double, 3>> raw_outputs(const std::vector<SequenceSample>& samples,
                                                 std::size_t batch_size = 256) {
    if (!finite()) throw NumericError("model parameters are not finite");
    std::vector<std::array<double, 3>> out;
    out.reserve(samples.size());
    if (samples.empty()) return out;
    const std::size_t k = config_.outputs();
    for (const auto& group : batch_indices(samples.size(), batch_size, 0, false)) {
      const Batch b = collate(samples, group);
      ag::Tape tape(false);
      const Tensor& y = forward(tape, b.features, b.mask).value();
      for (std::size_t i = 0; i < b.size(); ++i) {
        std::array<double, 3> row{};
        for (std::size_t j = 0; j < k; ++j) row[j] = y[i * k + j];
        out.push_back(row);
      }
    }
    return out;
  }

  /// Herd life in days for each sample (regression models).
  std::vector<double> predict_hl(const std::vector<SequenceSample>& samples) {
    if (config_.task != Task::Regression) throw UsageError("predict_hl needs a regression model");
    std::vector<double> out;
    for (const auto& row : raw_outputs(samples)) out.push_back(target.mean + target.sd * row[0]);
    return out;
  }

  /// Class and softmax probabilities for each sample (classification models).
  std::vector<ClassPrediction> predict_class(const std::vector<SequenceSample>& samples) {
    if (config_.task != Task::Classification) throw UsageError("predict_class needs a classification model");
    std::vector<ClassPrediction> out;
    for (const auto& row : raw_outputs(samples)) {
      ClassPrediction p;
      p.probabilities = softmax3(row);
      p.label = class_from_index(argmax_lowest(row));
      out.push_back(p);
    }
    return out;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    c.header["model"] = "transformer";
    c.header["config"] = config_.to_json();
    c.header["target_mean"] = target.mean;
    c.header["target_sd"] = target.sd;
    c.header["seed"] = seed;
    c.header["thresholds"] = {config_.thresholds.low, config_.thresholds.high};
    if (standardizer) c.header["standardizer"] = standardizer->to_json();
    for (const ag::Parameter& p : params_) c.tensors.emplace_back(p.name, p.value);
    return c;
  }

  static TransformerModel from_checkpoint(const Checkpoint& c) {
    if (c.header.value("model", "") != "transformer") throw CheckpointError("checkpoint does not hold a transformer");
    TransformerModel m;
    try {
      m.config_ = ModelConfig::from_json(c.header.at("config"));
      m.config_.validate();
      m.target.mean = c.header.at("target_mean");
      m.target.sd = c.header.at("target_sd");
      m.seed = c.header.at("seed");
      if (c.header.contains("standardizer")) m.standardizer = Standardizer::from_json(c.header.at("standardizer"));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("bad transformer header: ") + e.what());
    } catch (const UsageError& e) {
      throw CheckpointError(std::string("bad transformer config: ") + e.what());
    }
    TransformerModel reference(m.config_, 0);
    for (const ag::Parameter& p : reference.params_) {
      const Tensor& t = c.tensor(p.name);
      if (t.shape() != p.value.shape()) throw CheckpointError("tensor '" + p.name + "' has the wrong shape");
      m.params_.emplace_back(p.name, t);
    }
    return m;
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }
  static TransformerModel load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

  std::optional<Standardizer> standardizer;
  TargetScaler target;
  std::uint64_t seed = 0;

 private:
  void add(const std::string& name, Tensor value, double scale = 1.0) {
    if (scale != 1.0)
      for (double& v : value.values()) v *= scale;
    params_.emplace_back(name, std::move(value));
  }

  // Weight and bias uniform in +-1/sqrt(fan_in).
  void add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w({in, out}), b({out});
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    for (double& v : b.values()) v = rng.uniform(-bound, bound);
    params_.emplace_back(name + ".weight", std::move(w));
    params_.emplace_back(name + ".bias", std::move(b));
  }

  ModelConfig config_;
  std::vector<ag::Parameter> params_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // R^2 (regression) or accuracy (classification)
};

struct TrainResult {
  TransformerModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

namespace detail {

inline double r2_of(const std::vector<double>& actual, const std::vector<double>& predicted) {
  double mean = 0.0;
  for (double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
}

inline ag::Var batch_loss(TransformerModel& model, ag::Tape& tape, const Batch& b, Rng* dropout_rng) {
  ag::Var out = model.forward(tape, b.features, b.mask, dropout_rng);
  if (model.config().task == Task::Regression) {
    Tensor target({b.size()});
    for (std::size_t i = 0; i < b.size(); ++i) target[i] = (b.hl_days[i] - model.target.mean) / model.target.sd;
    return ag::mse_loss(out, target);
  }
  return ag::cross_entropy_loss(out, b.classes);
}

// Loss and metric over a whole sample set, inference mode.
inline std::pair<double, double> evaluate_loss(TransformerModel& model, const std::vector<SequenceSample>& samples) {
  const auto outputs = model.raw_outputs(samples);
  double loss = 0.0;
  if (model.config().task == Task::Regression) {
    std::vector<double> actual, predicted;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double z = (static_cast<double>(samples[i].hl_days) - model.target.mean) / model.target.sd;
      loss += (outputs[i][0] - z) * (outputs[i][0] - z);
      actual.push_back(static_cast<double>(samples[i].hl_days));
      predicted.push_back(model.target.mean + model.target.sd * outputs[i][0]);
    }
    return {loss / static_cast<double>(samples.size()), r2_of(actual, predicted)};
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto p = softmax3(outputs[i]);
    const auto label = static_cast<std::size_t>(samples[i].hl_class);
    loss -= std::log(std::max(p[label], 1e-300));
    correct += static_cast<std::size_t>(argmax_lowest(outputs[i])) == label ? 1 : 0;
  }
  return {loss / static_cast<double>(samples.size()), static_cast<double>(correct) / static_cast<double>(samples.size())};
}

}  // namespace detail

/// Adam training with early stopping on the validation metric; returns the best-epoch model.
///
/// With an empty validation set the last epoch is kept and training runs for max_epochs.
/// `on_epoch` (optional) is called after each epoch.
inline TrainResult train_transformer(const std::vector<SequenceSample>& train, const std::vector<SequenceSample>& val,
                                     const ModelConfig& config,
                                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (train.empty()) throw DataError("training set is empty");
  for (const SequenceSample& s : train) {
    if (s.length != config.seq_len) throw ShapeError("training sample length differs from config.seq_len");
  }
  const std::uint64_t seed = config.train.seed;
  TransformerModel model(config, seed);
  model.seed = seed;
  if (config.task == Task::Regression) {
    double mean = 0.0;
    for (const auto& s : train) mean += static_cast<double>(s.hl_days);
    mean /= static_cast<double>(train.size());
    double ss = 0.0;
    for (const auto& s : train) ss += (static_cast<double>(s.hl_days) - mean) * (static_cast<double>(s.hl_days) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(train.size()));
    model.target = {mean, sd > 0.0 ? sd : 1.0};
  }

  AdamState adam;
  adam.config.learning_rate = config.train.learning_rate;
  std::vector<ag::Parameter*> params = model.parameter_pointers();

  TrainResult result{model, {}, 0};
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.train.max_epochs; ++epoch) {
    const auto groups = batch_indices(train.size(), config.train.batch_size, mix_seed(seed) ^ epoch, true);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < groups.size(); ++bi) {
      const Batch b = collate(train, groups[bi]);
      Rng dropout_rng = Rng::stream(seed, (epoch << 20) + bi);
      for (ag::Parameter* p : params) p->zero_grad();
      double value = 0.0;
      try {
        ag::Tape tape;
        ag::Var loss = detail::batch_loss(model, tape, b, &dropout_rng);
        value = loss.value().item();
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + ": " + e.what());
      }
      if (!std::isfinite(value)) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + ": loss is not finite");
      }
      adam_step(params, adam);
      loss_sum += value * static_cast<double>(b.size());
    }
    if (!model.finite()) throw DivergenceError("epoch " + std::to_string(epoch) + ": parameters became non-finite");
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    if (!val.empty()) {
      std::tie(rec.val_loss, rec.val_metric) = detail::evaluate_loss(model, val);
    } else {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_metric = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (val.empty()) {
      result.model = model;
      result.best_epoch = epoch;
      continue;
    }
    if (rec.val_metric > best_metric) {
      best_metric = rec.val_metric;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.train.patience) {
      break;
    }
  }
  return result;
}

inline void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::vector<csv::Row> rows;
  for (const EpochRecord& r : history) {
    rows.push_back({std::to_string(r.epoch), csv::format_number(r.train_loss), csv::format_number(r.val_loss),
                    csv::format_number(r.val_metric)});
  }
  csv::write_file(path, {"epoch", "train_loss", "val_loss", "val_metric"}, rows);
}

}  // namespace herdlife
