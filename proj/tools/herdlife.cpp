// herdlife: batch command-line driver.
//
//   herdlife generate --cows 2000 --seed 7 --out-dir data
//   herdlife compare  --data-dir data --out-dir runs/compare
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 training divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "herdlife/herdlife.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace herdlife;

namespace {

struct RunOptions {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 7;
  std::string model = "transformer";
  std::string task = "regression";
  std::size_t seq_len = 10;
  std::string out_dir = "out";
  std::string data_dir;
  std::size_t cows = 2000;
  std::string signal_mode = "nonlinear-sequential";
  std::string checkpoint;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t patience = 10;
  std::vector<std::size_t> lengths = {5, 10, 20, 40};
  std::vector<std::size_t> k_grid = {1, 5, 10, 20, 40};
  bool quiet = false;
  json generator_overlay = json::object();
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

GeneratorConfig generator_config(const RunOptions& o) {
  GeneratorConfig c = default_config();
  c.update_from_json(o.generator_overlay);
  c.n_cows = o.cows;
  c.seed = o.seed;
  c.mode = signal_mode_from_name(o.signal_mode);
  return c;
}

/// Where a run's cows come from: a directory of CSVs or an in-memory generated dataset.
json data_source(const RunOptions& o) {
  if (!o.data_dir.empty()) return {{"data_dir", o.data_dir}};
  return {{"generator", generator_config(o).to_json()}};
}

IngestResult load_source(const json& source, bool require_target = true) {
  CleanOptions options;
  options.require_target = require_target;
  if (source.contains("data_dir")) return ingest_directory(source.at("data_dir").get<std::string>(), options);
  GeneratorConfig c = default_config();
  c.update_from_json(source.at("generator"));
  return ingest_tables(generate(c).tables, options);
}

SplitConfig split_config(std::uint64_t seed) { return {0.8, 0.1, seed}; }

ModelConfig model_config(const RunOptions& o, Task task) {
  ModelConfig mc;
  mc.seq_len = o.seq_len;
  mc.task = task;
  mc.train.max_epochs = o.epochs;
  mc.train.batch_size = o.batch_size;
  mc.train.learning_rate = o.learning_rate;
  mc.train.patience = o.patience;
  mc.train.seed = o.seed;
  return mc;
}

ForestConfig forest_config(const RunOptions& o) {
  ForestConfig f;
  f.seed = o.seed;
  return f;
}

std::function<void(const EpochRecord&)> epoch_logger(const RunOptions& o, const std::string& label) {
  if (o.quiet) return {};
  return [label](const EpochRecord& r) {
    std::cout << label << " epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss
              << " val_metric " << r.val_metric << std::endl;
  };
}

// ---------------------------------------------------------------------------
// Loaded checkpoints
// ---------------------------------------------------------------------------

struct LoadedModel {
  std::string kind;
  Task task = Task::Regression;
  json run;
  Standardizer standardizer;
  std::optional<TransformerModel> transformer;
  std::optional<LinearModel> linear;
  std::optional<RandomForest> forest;

  static LoadedModel load(const fs::path& path) {
    const Checkpoint c = load_checkpoint(path);
    LoadedModel m;
    m.kind = c.header.value("model", "");
    if (!c.header.contains("run") || !c.header.contains("standardizer")) {
      throw CheckpointError("checkpoint lacks run metadata; write it with `herdlife train`");
    }
    m.run = c.header.at("run");
    m.standardizer = Standardizer::from_json(c.header.at("standardizer"));
    if (m.kind == "transformer") {
      m.transformer = TransformerModel::from_checkpoint(c);
      m.task = m.transformer->config().task;
    } else if (m.kind == "ols" || m.kind == "glm") {
      m.linear = LinearModel::from_checkpoint(c);
    } else if (m.kind == "rf") {
      m.forest = RandomForest::from_checkpoint(c);
      m.task = m.forest->task;
    } else {
      throw CheckpointError("unknown model kind '" + m.kind + "'");
    }
    return m;
  }

  std::vector<double> predict_hl(const std::vector<CowHistory>& h) {
    if (transformer) return transformer->predict_hl(build_sequences(h, transformer->config().seq_len));
    if (linear) return linear->predict(tabularize(h));
    return forest->predict(tabularize(h));
  }

  std::vector<ClassPrediction> predict_class(const std::vector<CowHistory>& h) {
    if (transformer) return transformer->predict_class(build_sequences(h, transformer->config().seq_len));
    std::vector<ClassPrediction> out;
    for (HlClass c : forest->predict_class(tabularize(h))) {
      ClassPrediction p;
      p.label = c;
      p.probabilities[static_cast<std::size_t>(c)] = 1.0;
      out.push_back(p);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_generate(const RunOptions& o) {
  const GeneratorConfig c = generator_config(o);
  const GeneratedData data = generate(c);
  const fs::path out = o.out_dir;
  write_generated(out, data);
  write_json(out / "marginal_report.json", marginal_report(data.tables, c).to_json());
  std::cout << "wrote " << c.n_cows << " cows (" << signal_mode_name(c.mode) << ", seed " << c.seed << ") to "
            << out.string() << "\n";
  return 0;
}

int cmd_ingest(const RunOptions& o) {
  if (o.data_dir.empty()) throw UsageError("ingest needs --data-dir");
  const IngestResult r = ingest_directory(o.data_dir);
  const fs::path out = o.out_dir;
  json report = r.report();
  report["seed"] = o.seed;
  write_json(out / "ingest_report.json", report);
  write_history_dump(out / "histories.csv", r.histories);
  write_sequence_dump(out / "sequences.csv", build_sequences(r.histories, o.seq_len));

  // Records per cow and per-feature correlation with herd life.
  std::vector<csv::Row> counts;
  for (const CowHistory& h : r.histories) counts.push_back({h.cow_id, h.farm_id, std::to_string(h.records.size())});
  csv::write_file(out / "record_counts.csv", {"cow_id", "farm_id", "records"}, counts);
  std::vector<csv::Row> corr;
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    std::vector<double> x, y;
    for (const CowHistory& h : r.histories)
      for (const MergedRecord& rec : h.records) {
        if (std::isnan(rec.values[j])) continue;
        x.push_back(rec.values[j]);
        y.push_back(static_cast<double>(h.hl_days));
      }
    double c = kNaN;
    try {
      c = pearson(x, y);
    } catch (const Error&) {
    }
    corr.push_back({std::string(kFeatureNames[j]), csv::format_number(c)});
  }
  csv::write_file(out / "correlations.csv", {"feature", "pearson_hl"}, corr);
  const RecordCountSummary s = record_count_summary(r.histories);
  std::cout << "ingested " << r.histories.size() << " cows; records per cow " << s.min << ".." << s.max << ", mean "
            << s.mean << ", over 5: " << s.fraction_over_5 << "\n";
  return 0;
}

int cmd_train(const RunOptions& o) {
  const Task task = task_from_name(o.task);
  const json source = data_source(o);
  const PreparedData data = prepare(load_source(source).histories, split_config(o.seed));
  const json run = {{"seed", o.seed}, {"source", source}, {"split", {{"train_fraction", 0.8}, {"validation_fraction", 0.1}}}};
  const fs::path out = o.out_dir;
  fs::create_directories(out);
  Checkpoint ckpt;
  json summary = {{"model", o.model}, {"task", o.task}, {"seed", o.seed}, {"train_cows", data.train.size()},
                  {"validation_cows", data.validation.size()}, {"test_cows", data.test.size()}};
  if (o.model == "transformer") {
    const ModelConfig mc = model_config(o, task);
    TrainResult r = train_transformer(build_sequences(data.train, mc.seq_len), build_sequences(data.validation, mc.seq_len),
                                      mc, epoch_logger(o, "transformer"));
    r.model.standardizer = data.standardizer;
    write_history_csv(out / "history.csv", r.history);
    ckpt = r.model.to_checkpoint();
    summary["best_epoch"] = r.best_epoch;
    summary["epochs_run"] = r.history.size();
  } else if (o.model == "ols" || o.model == "glm") {
    if (task != Task::Regression) throw UsageError(o.model + " supports only --task regression");
    const auto rows = tabularize(data.train_all());
    ckpt = (o.model == "ols" ? ols_fit(rows) : glm_fit(rows, CompareConfig{}.glm_lambda)).to_checkpoint();
    ckpt.header["standardizer"] = data.standardizer.to_json();
  } else if (o.model == "rf") {
    ckpt = rf_fit(tabularize(data.train_all()), forest_config(o), task).to_checkpoint();
    ckpt.header["standardizer"] = data.standardizer.to_json();
  } else {
    throw UsageError("unknown --model '" + o.model + "' (transformer | ols | glm | rf)");
  }
  ckpt.header["run"] = run;
  save_checkpoint(out / "model.ckpt", ckpt);
  write_json(out / "train_summary.json", summary);
  std::cout << "saved " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_evaluate(const RunOptions& o) {
  LoadedModel m = LoadedModel::load(o.checkpoint);
  const std::uint64_t seed = m.run.at("seed");
  const json source = o.data_dir.empty() ? m.run.at("source") : json{{"data_dir", o.data_dir}};
  Split split = split_by_cow(load_source(source).histories, split_config(seed).train_fraction, seed);
  const std::vector<CowHistory> test = apply_standardizer(m.standardizer, std::move(split.test));

  Predictions pred;
  std::size_t p = 0;
  if (m.task == Task::Regression) {
    pred = regression_predictions(test, m.predict_hl(test));
    p = m.transformer ? 0 : kNumFeatures;
  } else {
    std::vector<HlClass> labels;
    for (const ClassPrediction& c : m.predict_class(test)) labels.push_back(c.label);
    pred = class_predictions(test, labels);
  }
  const EvalReport rep = evaluate_predictions(pred, p);
  const auto farms = per_farm_report(pred, p);
  const fs::path out = o.out_dir;
  json j = rep.to_json();
  j["model"] = m.kind;
  j["task"] = task_name(m.task);
  j["seed"] = seed;
  json farm_json = json::object();
  for (const auto& [farm, r] : farms) farm_json[farm] = r.to_json();
  j["per_farm"] = farm_json;
  write_json(out / "eval_report.json", j);
  write_per_farm_csv(out / "per_farm.csv", farms);
  if (m.task == Task::Classification) write_confusion_csv(out / "confusion.csv", rep.confusion);
  if (m.forest) {
    const auto imp = rf_feature_importance(*m.forest);
    std::vector<csv::Row> rows;
    for (std::size_t f = 0; f < kNumFeatures; ++f) rows.push_back({std::string(kFeatureNames[f]), csv::format_number(imp[f])});
    csv::write_file(out / "feature_importance.csv", {"feature", "importance"}, rows);
  }
  if (m.task == Task::Regression) {
    std::cout << m.kind << " R2 " << rep.r2 << " MAE " << rep.mae_days << " days on " << rep.samples << " test cows\n";
  } else {
    std::cout << m.kind << " accuracy " << percent(rep.accuracy) << "%\n";
    for (std::size_t c = 0; c < 3; ++c) {
      const ClassReport& r = rep.classes[c];
      std::cout << "  " << kClassNames[c] << " P " << percent(r.precision) << " R " << percent(r.recall) << " F1 "
                << percent(r.f1) << " support " << r.support << "\n";
    }
    std::cout << "  critmis low->high " << rep.crit.low_as_high << ", high->low " << rep.crit.high_as_low << "\n";
  }
  return 0;
}

int cmd_predict(const RunOptions& o) {
  if (o.data_dir.empty()) throw UsageError("predict needs --data-dir");
  LoadedModel m = LoadedModel::load(o.checkpoint);
  const std::vector<CowHistory> cows = apply_standardizer(m.standardizer, load_source({{"data_dir", o.data_dir}}, false).histories);
  std::vector<csv::Row> rows;
  if (m.task == Task::Regression) {
    const auto hl = m.predict_hl(cows);
    for (std::size_t i = 0; i < cows.size(); ++i) {
      const double days = std::max(hl[i], 0.0);
      rows.push_back({cows[i].cow_id, csv::format_fixed(hl[i], 1), std::string(class_name(hl_to_class(days))), "", "", ""});
    }
  } else {
    const auto pc = m.predict_class(cows);
    for (std::size_t i = 0; i < cows.size(); ++i) {
      rows.push_back({cows[i].cow_id, "", std::string(class_name(pc[i].label)), csv::format_number(pc[i].probabilities[0]),
                      csv::format_number(pc[i].probabilities[1]), csv::format_number(pc[i].probabilities[2])});
    }
  }
  const fs::path path = fs::path(o.out_dir) / "predictions.csv";
  csv::write_file(path, {"cow_id", "predicted_hl_days", "predicted_class", "p_low", "p_medium", "p_high"}, rows);
  std::cout << "wrote " << rows.size() << " predictions to " << path.string() << "\n";
  return 0;
}

int cmd_sweep(const RunOptions& o) {
  const json source = data_source(o);
  const PreparedData data = prepare(load_source(source).histories, split_config(o.seed));
  const auto cells = length_sweep(data, o.lengths, o.k_grid, model_config(o, Task::Regression));
  const fs::path out = o.out_dir;
  write_sweep_csv(out / "sweep.csv", cells);
  json j = json::array();
  for (const SweepCell& c : cells) {
    j.push_back({{"train_length", c.train_length}, {"eval_k", c.eval_k}, {"r2", c.r2}, {"mae_days", c.mae_days}, {"error", c.error}});
  }
  write_json(out / "sweep.json", {{"seed", o.seed}, {"source", source}, {"cells", j}});
  for (const SweepCell& c : cells) {
    std::cout << "L=" << c.train_length << " k=" << c.eval_k << " R2 " << c.r2;
    if (!c.error.empty()) std::cout << " (" << c.error << ")";
    std::cout << "\n";
  }
  return 0;
}

int cmd_compare(const RunOptions& o) {
  const json source = data_source(o);
  const PreparedData data = prepare(load_source(source).histories, split_config(o.seed));
  CompareConfig cc;
  cc.transformer = model_config(o, Task::Regression);
  cc.forest = forest_config(o);
  const ComparisonResult result = compare(data, cc, [&](const std::string& label, const EpochRecord& r) {
    if (auto log = epoch_logger(o, label)) log(r);
  });
  const fs::path out = o.out_dir;
  write_comparison_csv(out / "comparison.csv", result);
  write_per_farm_csv(out / "per_farm.csv", result.transformer_per_farm);
  const ComparisonRow* tc = nullptr;
  for (const ComparisonRow& r : result.rows)
    if (r.model == "transformer" && r.task == Task::Classification) tc = &r;
  if (tc) write_confusion_csv(out / "confusion.csv", tc->report.confusion);
  write_json(out / "comparison.json",
             {{"seed", o.seed}, {"source", source}, {"split", data.summary()}, {"rows", result.to_json()}});

  std::cout << "task            model        performance\n";
  for (const ComparisonRow& r : result.rows) {
    std::string value = r.task == Task::Regression ? "R2 = " + csv::format_fixed(r.value, 2)
                                                   : "Accuracy = " + std::to_string(percent(r.value)) + "%";
    std::printf("%-15s %-12s %s\n", task_name(r.task).c_str(), r.model.c_str(), value.c_str());
  }
  if (tc) {
    for (std::size_t c = 0; c < 3; ++c) {
      const ClassReport& r = tc->report.classes[c];
      std::printf("  %-6s P %3d R %3d F1 %3d support %zu\n", std::string(kClassNames[c]).c_str(), percent(r.precision),
                  percent(r.recall), percent(r.f1), r.support);
    }
  }
  return 0;
}

// Turns `--config file.json` into flags placed right after the subcommand, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args, json& generator_overlay) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const json cfg = read_json(path);
  if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
  std::vector<std::string> injected;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "generator") {
      generator_overlay = value;
      continue;
    }
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& v : value) text += (text.empty() ? "" : ",") + v.dump();
    } else if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back("--" + key);
      continue;
    } else {
      text = value.dump();
    }
    injected.push_back("--" + key);
    injected.push_back(text);
  }
  std::size_t at = 1;
  while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
  if (at < args.size()) ++at;
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
  return args;
}

int run(int argc, char** argv) {
  RunOptions o;
  CLI::App app{"herdlife: herd-life prediction pipeline on seven-table dairy records"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", o.config_path, "JSON file setting any flag; explicit flags override it");
    sub->add_option("--seed", o.seed, "random seed (recorded in outputs)");
    sub->add_option("--out-dir", o.out_dir, "output directory");
    sub->add_flag("--quiet", o.quiet, "no per-epoch progress");
  };
  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--data-dir", o.data_dir, "directory holding ds102.csv .. ds202.csv (default: generate in memory)");
    sub->add_option("--cows", o.cows, "cows to generate when no --data-dir is given");
    sub->add_option("--signal-mode", o.signal_mode, "linear | nonlinear-sequential | dominant-feature");
  };
  auto train_flags = [&](CLI::App* sub) {
    sub->add_option("--task", o.task, "regression | classification");
    sub->add_option("--seq-len", o.seq_len, "sequence length L");
    sub->add_option("--epochs", o.epochs, "maximum training epochs");
    sub->add_option("--batch-size", o.batch_size, "mini-batch size");
    sub->add_option("--lr", o.learning_rate, "Adam learning rate");
    sub->add_option("--patience", o.patience, "early-stopping patience in epochs");
  };

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic seven-table dataset and manifest");
  common(gen);
  gen->add_option("--cows", o.cows, "number of cows");
  gen->add_option("--signal-mode", o.signal_mode, "linear | nonlinear-sequential | dominant-feature");

  CLI::App* ing = app.add_subcommand("ingest", "merge, clean and dump processed data with a cleansing report");
  common(ing);
  ing->add_option("--data-dir", o.data_dir, "input directory")->required();
  ing->add_option("--seq-len", o.seq_len, "sequence length for the sequence dump");

  CLI::App* tr = app.add_subcommand("train", "train one model and write its checkpoint");
  common(tr);
  data_flags(tr);
  train_flags(tr);
  tr->add_option("--model", o.model, "transformer | ols | glm | rf");

  CLI::App* ev = app.add_subcommand("evaluate", "score a checkpoint on its held-out cows");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "model checkpoint from `train`")->required();
  ev->add_option("--data-dir", o.data_dir, "override the data source recorded in the checkpoint");

  CLI::App* pr = app.add_subcommand("predict", "per-cow predictions from a checkpoint");
  common(pr);
  pr->add_option("--checkpoint", o.checkpoint, "model checkpoint from `train`")->required();
  pr->add_option("--data-dir", o.data_dir, "input directory")->required();

  CLI::App* sw = app.add_subcommand("sweep", "sequence-length sweep");
  common(sw);
  data_flags(sw);
  train_flags(sw);
  sw->add_option("--lengths", o.lengths, "training lengths")->delimiter(',');
  sw->add_option("--k-grid", o.k_grid, "evaluation k values")->delimiter(',');

  CLI::App* cmp = app.add_subcommand("compare", "transformer vs OLS, GLM and random forest on one split");
  common(cmp);
  data_flags(cmp);
  train_flags(cmp);

  std::vector<std::string> args(argv, argv + argc);
  args = expand_config(std::move(args), o.generator_overlay);
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  }

  if (*gen) return cmd_generate(o);
  if (*ing) return cmd_ingest(o);
  if (*tr) return cmd_train(o);
  if (*ev) return cmd_evaluate(o);
  if (*pr) return cmd_predict(o);
  if (*sw) return cmd_sweep(o);
  return cmd_compare(o);
}

void fail(const char* kind, const std::string& message) {
  std::string one_line = message;
  for (char& c : one_line)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "herdlife: " << kind << ": " << one_line << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    fail("usage-error", e.what());
    return 1;
  } catch (const UsageError& e) {
    fail("usage-error", e.what());
    return 1;
  } catch (const DivergenceError& e) {
    fail("divergence", e.what());
    return 3;
  } catch (const Error& e) {
    fail("data-error", e.what());
    return 2;
  } catch (const std::exception& e) {
    fail("data-error", e.what());
    return 2;
  }
}
