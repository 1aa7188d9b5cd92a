#include <gtest/gtest.h>

#include <algorithm>

#include "herdlife/sequencing.hpp"
#include "support/fixtures.hpp"

using namespace herdlife;
using namespace herdlife::test_support;

namespace {

CowHistory history_with(std::size_t records, std::uint64_t seed) {
  CowHistory h = make_histories(1, 1, records, seed).front();
  for (std::size_t r = 0; r < records; ++r) h.records[r].values[kLactation] = static_cast<double>(r);
  Rng rng(seed);
  rng.shuffle(h.records);  // input order must not matter
  return h;
}

void check_invariants(const SequenceSample& s, std::size_t records) {
  const std::size_t L = s.length;
  EXPECT_EQ(s.valid_count(), std::min(records, L));
  bool seen_valid = false;
  for (std::size_t p = 0; p < L; ++p) {
    if (s.mask[p] == 1.0) seen_valid = true;
    EXPECT_EQ(s.mask[p] == 1.0, seen_valid) << "mask must be a suffix of ones";
    if (s.mask[p] == 0.0)
      for (std::size_t f = 0; f < kNumFeatures; ++f) EXPECT_EQ(s.at(p, f), 0.0);
  }
}

}  // namespace

TEST(BuildSequence, MatchesSortAndTakeLatestOracle) {
  for (std::size_t records : {1u, 3u, 10u, 37u, 200u}) {
    const CowHistory h = history_with(records, records);
    // Oracle: record r (by date) carries lactation == r, so the valid rows must read
    // records-keep, ..., records-1 in order.
    for (std::size_t L : {1u, 3u, 10u, 200u}) {
      const SequenceSample s = build_sequence(h, L);
      check_invariants(s, records);
      const std::size_t keep = std::min(records, L);
      for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t pos = L - keep + i;
        EXPECT_EQ(s.at(pos, kLactation), static_cast<double>(records - keep + i)) << records << "/" << L;
      }
    }
  }
}

TEST(BuildSequence, ThreeRecordsPaddedToTen) {
  const SequenceSample s = build_sequence(history_with(3, 2), 10);
  for (std::size_t p = 0; p < 7; ++p) EXPECT_EQ(s.mask[p], 0.0);
  for (std::size_t p = 7; p < 10; ++p) EXPECT_EQ(s.mask[p], 1.0);
  EXPECT_EQ(s.at(7, kLactation), 0.0);
  EXPECT_EQ(s.at(9, kLactation), 2.0);
  EXPECT_LT(s.at(7, kCurrentLife), s.at(8, kCurrentLife));
}

TEST(BuildSequence, ExactLengthHasNoPadding) {
  const SequenceSample s = build_sequence(history_with(10, 3), 10);
  EXPECT_EQ(s.valid_count(), 10u);
}

TEST(BuildSequence, Errors) {
  CowHistory empty;
  empty.cow_id = "X";
  EXPECT_THROW(build_sequence(empty, 10), DataError);
  EXPECT_THROW(build_sequence(history_with(3, 1), 0), UsageError);
}

TEST(LatestK, ViewsOfAFullSample) {
  const SequenceSample full = build_sequence(history_with(12, 4), 10);
  EXPECT_EQ(latest_k_view(full, 10), full);
  const SequenceSample five = latest_k_view(full, 5);
  EXPECT_EQ(five.valid_count(), 5u);
  check_invariants(five, 5);
  for (std::size_t p = 5; p < 10; ++p)
    for (std::size_t f = 0; f < kNumFeatures; ++f) EXPECT_EQ(five.at(p, f), full.at(p, f));
  const SequenceSample one = latest_k_view(full, 1);
  EXPECT_EQ(one.valid_count(), 1u);
  EXPECT_EQ(one.mask[9], 1.0);
  EXPECT_EQ(one.at(9, kLactation), 11.0);
  EXPECT_THROW(latest_k_view(full, 0), UsageError);
  EXPECT_THROW(latest_k_view(full, 11), UsageError);
}

TEST(LatestK, ShortHistoryKeepsItsRecords) {
  const SequenceSample s = build_sequence(history_with(3, 5), 10);
  EXPECT_EQ(latest_k_view(s, 5), s);
  EXPECT_EQ(latest_k_view(s, 2).valid_count(), 2u);
}

TEST(Batching, SizesOrderAndDeterminism) {
  const auto plain = batch_indices(10, 4, 1, false);
  ASSERT_EQ(plain.size(), 3u);
  EXPECT_EQ(plain[0].size(), 4u);
  EXPECT_EQ(plain[1].size(), 4u);
  EXPECT_EQ(plain[2].size(), 2u);
  std::size_t expect = 0;
  for (const auto& b : plain)
    for (std::size_t i : b) EXPECT_EQ(i, expect++);
  EXPECT_EQ(batch_indices(10, 4, 9, true), batch_indices(10, 4, 9, true));
  EXPECT_NE(batch_indices(50, 4, 9, true), batch_indices(50, 4, 10, true));
  EXPECT_THROW(batch_indices(0, 4, 1, false), UsageError);
  EXPECT_THROW(batch_indices(10, 0, 1, false), UsageError);
}

TEST(Batching, CollateStacksSamples) {
  const auto samples = build_sequences(make_histories(5, 2, 4), 6);
  const Batch b = collate(samples, {3, 1});
  EXPECT_EQ(b.features.shape(), (std::vector<std::size_t>{2, 6, kNumFeatures}));
  EXPECT_EQ(b.mask.shape(), (std::vector<std::size_t>{2, 6}));
  for (std::size_t p = 0; p < 6; ++p) {
    EXPECT_EQ(b.mask.at({0, p}), samples[3].mask[p]);
    for (std::size_t f = 0; f < kNumFeatures; ++f) EXPECT_EQ(b.features.at({1, p, f}), samples[1].at(p, f));
  }
  EXPECT_EQ(b.hl_days[0], static_cast<double>(samples[3].hl_days));
  EXPECT_THROW(collate(samples, {}), UsageError);
  auto mixed = samples;
  mixed.push_back(build_sequence(make_histories(1, 1, 2).front(), 3));
  EXPECT_THROW(collate(mixed, {0, 5}), ShapeError);
}
