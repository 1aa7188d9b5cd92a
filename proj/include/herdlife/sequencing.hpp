#pragma once

// Fixed-length, left-padded sequences of the latest records of each cow.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "herdlife/classes.hpp"
#include "herdlife/csv.hpp"
#include "herdlife/error.hpp"
#include "herdlife/ingestion.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/tensor.hpp"

namespace herdlife {

/// L x 16 feature matrix with a validity mask. Valid rows sit at the end, oldest first.
struct SequenceSample {
  std::size_t length = 0;
  std::vector<double> features;  // length * kNumFeatures, row-major
  std::vector<double> mask;      // length; 1 = real record
  std::int64_t hl_days = -1;
  HlClass hl_class = HlClass::Low;
  std::string cow_id;
  std::string farm_id;

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
  }
  double& at(std::size_t position, std::size_t feature) { return features[position * kNumFeatures + feature]; }
  double at(std::size_t position, std::size_t feature) const { return features[position * kNumFeatures + feature]; }

  friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

/// Keeps the `length` most recent records; shorter histories are padded with zero rows in front.
inline SequenceSample build_sequence(const CowHistory& history, std::size_t length) {
  if (length == 0) throw UsageError("sequence length must be at least 1");
  if (history.records.empty()) throw DataError("cow " + history.cow_id + " has no records");
  std::vector<std::size_t> order(history.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return history.records[a].date < history.records[b].date;
  });
  const std::size_t keep = std::min(length, order.size());
  SequenceSample s;
  s.length = length;
  s.features.assign(length * kNumFeatures, 0.0);
  s.mask.assign(length, 0.0);
  s.hl_days = history.hl_days;
  s.hl_class = history.hl_class;
  s.cow_id = history.cow_id;
  s.farm_id = history.farm_id;
  const std::size_t first = order.size() - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t pos = length - keep + i;
    const FeatureVector f = select_features(history.records[order[first + i]]);
    std::copy(f.begin(), f.end(), s.features.begin() + static_cast<std::ptrdiff_t>(pos * kNumFeatures));
    s.mask[pos] = 1.0;
  }
  return s;
}

inline std::vector<SequenceSample> build_sequences(const std::vector<CowHistory>& histories, std::size_t length) {
  std::vector<SequenceSample> out;
  out.reserve(histories.size());
  for (const CowHistory& h : histories) out.push_back(build_sequence(h, length));
  return out;
}

/// Same sample restricted to its k most recent valid rows, re-padded to the full length.
inline SequenceSample latest_k_view(const SequenceSample& sample, std::size_t k) {
  if (k < 1 || k > sample.length) {
    throw UsageError("k must lie in [1, " + std::to_string(sample.length) + "], got " + std::to_string(k));
  }
  SequenceSample out = sample;
  const std::size_t cut = sample.length - k;
  for (std::size_t pos = 0; pos < cut; ++pos) {
    out.mask[pos] = 0.0;
    std::fill_n(out.features.begin() + static_cast<std::ptrdiff_t>(pos * kNumFeatures), kNumFeatures, 0.0);
  }
  return out;
}

inline std::vector<SequenceSample> latest_k_views(const std::vector<SequenceSample>& samples, std::size_t k) {
  std::vector<SequenceSample> out;
  out.reserve(samples.size());
  for (const SequenceSample& s : samples) out.push_back(latest_k_view(s, k));
  return out;
}

struct Batch {
  Tensor features;  // [B, L, F]
  Tensor mask;      // [B, L]
  std::vector<double> hl_days;
  std::vector<int> classes;
  std::vector<std::size_t> indices;  // positions in the source sample list

  std::size_t size() const noexcept { return indices.size(); }
};

/// Stacks the selected samples into batch tensors.
inline Batch collate(const std::vector<SequenceSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw UsageError("cannot collate an empty batch");
  const std::size_t length = samples.at(indices.front()).length;
  Batch b;
  b.features = Tensor({indices.size(), length, kNumFeatures});
  b.mask = Tensor({indices.size(), length});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const SequenceSample& s = samples.at(indices[i]);
    if (s.length != length) throw ShapeError("samples in one batch differ in length");
    std::copy(s.features.begin(), s.features.end(), b.features.data() + i * length * kNumFeatures);
    std::copy(s.mask.begin(), s.mask.end(), b.mask.data() + i * length);
    b.hl_days.push_back(static_cast<double>(s.hl_days));
    b.classes.push_back(static_cast<int>(s.hl_class));
  }
  b.indices = indices;
  return b;
}

/// Index groups of at most batch_size; the last group may be partial. Shuffled with `seed` when asked.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                           std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  if (count == 0) throw UsageError("no samples to batch");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, start + batch_size)));
  }
  return out;
}

inline std::vector<Batch> batch(const std::vector<SequenceSample>& samples, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle) {
  std::vector<Batch> out;
  for (const auto& group : batch_indices(samples.size(), batch_size, seed, shuffle)) {
    out.push_back(collate(samples, group));
  }
  return out;
}

struct RecordCountSummary {
  std::size_t cows = 0;
  std::size_t min = 0;
  std::size_t max = 0;
  double mean = 0.0;
  double fraction_over_5 = 0.0;
  std::vector<std::size_t> counts;  // per cow, input order
};

inline RecordCountSummary record_count_summary(const std::vector<CowHistory>& histories) {
  RecordCountSummary s;
  s.cows = histories.size();
  if (histories.empty()) return s;
  s.min = histories.front().records.size();
  std::size_t over5 = 0, total = 0;
  for (const CowHistory& h : histories) {
    const std::size_t n = h.records.size();
    s.counts.push_back(n);
    s.min = std::min(s.min, n);
    s.max = std::max(s.max, n);
    total += n;
    over5 += n > 5 ? 1 : 0;
  }
  s.mean = static_cast<double>(total) / static_cast<double>(s.cows);
  s.fraction_over_5 = static_cast<double>(over5) / static_cast<double>(s.cows);
  return s;
}

/// One row per (cow, position).
inline void write_sequence_dump(const std::filesystem::path& path, const std::vector<SequenceSample>& samples) {
  csv::Row header = {"cow_id", "position", "mask"};
  for (std::string_view name : kFeatureNames) header.emplace_back(name);
  std::vector<csv::Row> rows;
  for (const SequenceSample& s : samples)
    for (std::size_t pos = 0; pos < s.length; ++pos) {
      csv::Row row = {s.cow_id, std::to_string(pos), csv::format_number(s.mask[pos])};
      for (std::size_t j = 0; j < kNumFeatures; ++j) row.push_back(csv::format_number(s.at(pos, j)));
      rows.push_back(std::move(row));
    }
  csv::write_file(path, header, rows);
}

}  // namespace herdlife
