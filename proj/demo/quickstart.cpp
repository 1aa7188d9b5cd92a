// Generate a small herd, train a transformer and an OLS baseline, compare them on held-out cows.

#include <iostream>

#include "herdlife/herdlife.hpp"

int main() {
  using namespace herdlife;

  GeneratorConfig gen = default_config();
  gen.n_cows = 400;
  gen.seed = 11;
  const GeneratedData data = generate(gen);

  IngestResult ingested = ingest_tables(data.tables);
  std::cout << "cows after cleaning: " << ingested.histories.size() << "\n";
  const PreparedData split = prepare(std::move(ingested.histories), {0.8, 0.1, 11});

  ModelConfig config;
  config.seq_len = 10;
  config.d_model = 32;
  config.d_ff = 64;
  config.train.max_epochs = 15;
  config.train.seed = 11;
  TrainResult trained = train_transformer(build_sequences(split.train, config.seq_len),
                                          build_sequences(split.validation, config.seq_len), config);
  const auto test_seq = build_sequences(split.test, config.seq_len);
  const EvalReport tm = evaluate_predictions(regression_predictions(split.test, trained.model.predict_hl(test_seq)));

  const LinearModel ols = ols_fit(tabularize(split.train_all()));
  const EvalReport lr = evaluate_predictions(regression_predictions(split.test, ols.predict(tabularize(split.test))));

  std::cout << "transformer R2 " << tm.r2 << " MAE " << tm.mae_days << " days (best epoch " << trained.best_epoch << ")\n";
  std::cout << "ols         R2 " << lr.r2 << " MAE " << lr.mae_days << " days\n";
  return 0;
}
