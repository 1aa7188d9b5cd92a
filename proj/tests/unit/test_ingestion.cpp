#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "herdlife/generator.hpp"
#include "herdlife/ingestion.hpp"
#include "support/fixtures.hpp"

using namespace herdlife;
using namespace herdlife::test_support;

namespace {

csv::Document parse_csv(const std::string& text) {
  std::istringstream in(text);
  return csv::read_stream(in);
}

std::string header_of(TableKind kind) {
  std::string out;
  for (const ColumnSpec& c : schema(kind).columns) out += (out.empty() ? "" : ",") + c.name;
  return out;
}

}  // namespace

TEST(Dates, HerdLifeDays) {
  EXPECT_EQ(compute_hl_days(day(2015, 1, 1), day(2016, 1, 1)), 365);
  EXPECT_EQ(compute_hl_days(day(2015, 6, 3), day(2015, 6, 3)), 0);
  EXPECT_EQ(compute_hl_days(day(2016, 2, 28), day(2016, 3, 1)), 2);
  EXPECT_EQ(compute_hl_days(day(2015, 2, 28), day(2015, 3, 1)), 1);
  EXPECT_THROW(compute_hl_days(day(2016, 1, 2), day(2016, 1, 1)), DataError);
}

TEST(Dates, ParseIsStrict) {
  EXPECT_EQ(Date::parse("2016-02-29")->iso(), "2016-02-29");
  EXPECT_FALSE(Date::parse("2015-02-29"));
  EXPECT_FALSE(Date::parse("2015/02/01"));
  EXPECT_FALSE(Date::parse("2015-2-1"));
  EXPECT_FALSE(Date::parse(""));
}

TEST(Dates, ProductiveLife) {
  EXPECT_EQ(pl_from_hl(2617, 730), 1887);
  EXPECT_EQ(pl_from_hl(1234, 0), 1234);
  EXPECT_EQ(pl_from_hl(1000, 1000), 0);
  EXPECT_THROW(pl_from_hl(1000, 1001), UsageError);
  EXPECT_THROW(pl_from_hl(1000, -1), UsageError);
}

TEST(Classes, Thresholds) {
  EXPECT_EQ(hl_to_class(2157), HlClass::Low);
  EXPECT_EQ(hl_to_class(2158), HlClass::Medium);
  EXPECT_EQ(hl_to_class(2997), HlClass::Medium);
  EXPECT_EQ(hl_to_class(2998), HlClass::High);
  EXPECT_THROW(hl_to_class(-1), UsageError);
}

TEST(Csv, QuotedFieldsRoundTrip) {
  const csv::Row row = csv::split_line(R"(a,"b,c","d ""e""",)");
  ASSERT_EQ(row.size(), 4u);
  EXPECT_EQ(row[1], "b,c");
  EXPECT_EQ(row[2], "d \"e\"");
  EXPECT_EQ(row[3], "");
  EXPECT_EQ(csv::quote("b,c"), "\"b,c\"");
}

TEST(ParseTable, EmptyFileWithHeaderHasNoRows) {
  const RawTable t = parse_table(parse_csv(header_of(TableKind::TestDay) + "\n"), TableKind::TestDay);
  EXPECT_TRUE(t.rows.empty());
  EXPECT_TRUE(t.rejects.empty());
}

TEST(ParseTable, MalformedDateGoesToRejects) {
  const std::string good = "NID1,HERD01,,2016-01-05,4.1,3.3,4.9,120,30,";
  const std::string bad = "NID1,HERD01,,2016-13-05,4.1,3.3,4.9,120,30,";
  const RawTable t = parse_table(parse_csv(header_of(TableKind::TestDay) + "\n" + good + "\n" + good + "\n" + bad),
                                 TableKind::TestDay);
  EXPECT_EQ(t.rows.size(), 2u);
  ASSERT_EQ(t.rejects.size(), 1u);
  EXPECT_EQ(t.rejects[0].line, 4u);
  EXPECT_NE(t.rejects[0].reason.find("malformed date"), std::string::npos);
}

TEST(ParseTable, HeaderMismatchAndMostlyBadRowsThrow) {
  EXPECT_THROW(parse_table(parse_csv("National Cow ID,Bogus\n"), TableKind::TestDay), DataError);
  std::string missing_column = header_of(TableKind::TestDay);
  missing_column = missing_column.substr(0, missing_column.rfind(','));
  EXPECT_THROW(parse_table(parse_csv(missing_column + "\n"), TableKind::TestDay), DataError);
  const std::string bad = "NID1,HERD01,,nope,4.1,3.3,4.9,120,30,";
  EXPECT_THROW(parse_table(parse_csv(header_of(TableKind::TestDay) + "\n" + bad + "\n" + bad), TableKind::TestDay),
               DataError);
  EXPECT_THROW(load_table("/nonexistent/ds104.csv", TableKind::TestDay), DataError);
}

TEST(ParseTable, ColumnOrderInFileDoesNotMatter) {
  const RawTable t = parse_table(
      parse_csv("Date,National Herd ID,National Cow ID,Anatomical Position,Health Event Code,Health Treatment Code\n"
                "2017-03-04,HERD02,NID9,,MAST,\n"),
      TableKind::HerdHealth);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(text_at(t.rows[0], 0), "NID9");
  EXPECT_EQ(date_at(t.rows[0], 2)->iso(), "2017-03-04");
}

TEST(ParseTable, GeneratedTestDayTableRoundTrips) {
  GeneratorConfig config;
  config.n_cows = 30;
  const GeneratedData data = generate(config);
  const RawTable& original = data.tables[TableKind::TestDay];
  const auto dir = std::filesystem::temp_directory_path() / "herdlife_roundtrip";
  std::filesystem::create_directories(dir);
  write_table(dir / "ds104.csv", original);
  const RawTable back = load_table(dir / "ds104.csv", TableKind::TestDay);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(back.rows.size(), original.rows.size());
  EXPECT_TRUE(back.rejects.empty());
  for (std::size_t r = 0; r < back.rows.size(); ++r) {
    ASSERT_EQ(back.rows[r].cells.size(), original.rows[r].cells.size());
    for (std::size_t c = 0; c < back.rows[r].cells.size(); ++c) {
      EXPECT_EQ(back.rows[r].cells[c], original.rows[r].cells[c]) << "row " << r << " col " << c;
    }
  }
}

TEST(Merge, PedigreeOnlyCowHasNoRecords) {
  RawTables t;
  add_cow(t, "NID1", day(2010, 1, 1), day(2016, 1, 1));
  const MergeResult m = merge_on_nid(t);
  ASSERT_EQ(m.histories.size(), 1u);
  EXPECT_TRUE(m.histories[0].records.empty());
}

TEST(Merge, TestDaysAndHealthEventOnDistinctDatesGiveDateOrderedRecords) {
  RawTables t;
  add_cow(t, "NID1", day(2010, 1, 1), day(2016, 1, 1));
  add_test_day(t, "NID1", day(2014, 5, 1));
  add_health(t, "NID1", day(2013, 2, 1));
  add_test_day(t, "NID1", day(2015, 5, 1));
  add_test_day(t, "NID1", day(2012, 5, 1));
  const auto records = merge_on_nid(t).histories.at(0).records;
  ASSERT_EQ(records.size(), 4u);
  for (std::size_t i = 1; i < records.size(); ++i) EXPECT_LT(records[i - 1].date, records[i].date);
  EXPECT_EQ(records[1].values[kTreatedFlag], 1.0);
  EXPECT_EQ(records[1].values[kTestedFlag], 0.0);
  EXPECT_EQ(records[0].values[kCurrentLife], static_cast<double>(day(2012, 5, 1) - day(2010, 1, 1)));
}

TEST(Merge, FlagsFollowContributingTables) {
  RawTables t;
  add_cow(t, "NID1", day(2010, 1, 1), day(2016, 1, 1));
  add_test_day(t, "NID1", day(2012, 1, 1));
  add_test_day(t, "NID1", day(2013, 1, 1));
  add_health(t, "NID1", day(2013, 1, 1));
  add_pregnancy(t, "NID1", day(2014, 1, 1), 60);
  const auto r = merge_on_nid(t).histories.at(0).records;
  ASSERT_EQ(r.size(), 3u);
  auto flags = [](const MergedRecord& m) {
    return std::array<double, 3>{m.values[kTestedFlag], m.values[kBredFlag], m.values[kTreatedFlag]};
  };
  EXPECT_EQ(flags(r[0]), (std::array<double, 3>{1, 0, 0}));
  EXPECT_EQ(flags(r[1]), (std::array<double, 3>{1, 0, 1}));
  EXPECT_EQ(flags(r[2]), (std::array<double, 3>{0, 1, 0}));
  EXPECT_EQ(r[2].values[kDaysPregnant], 60.0);
}

TEST(Merge, StateTablesCarryForward) {
  RawTables t;
  add_cow(t, "NID1", day(2010, 1, 1), day(2016, 1, 1));
  add_test_day(t, "NID1", day(2011, 6, 1));
  add_lactation(t, "NID1", day(2012, 1, 1), 1, 7000);
  add_test_day(t, "NID1", day(2012, 1, 1));
  add_test_day(t, "NID1", day(2012, 3, 1));
  add_lactation(t, "NID1", day(2013, 2, 1), 2, 8000);
  add_test_day(t, "NID1", day(2013, 4, 1));
  RawRow& abv = add_row(t, TableKind::Abv, "NID1");
  set(abv, TableKind::Abv, "Health Weighted Index", 55.0);
  const CowHistory h = merge_on_nid(t).histories.at(0);
  ASSERT_EQ(h.records.size(), 4u);
  EXPECT_EQ(h.records[0].values[kLactation], 0.0);
  EXPECT_TRUE(std::isnan(h.records[0].values[kMilk305]));
  EXPECT_EQ(h.records[1].values[kLactation], 1.0);  // calving on a test date applies that day
  EXPECT_EQ(h.records[2].values[kMilk305], 7000.0);
  EXPECT_EQ(h.records[3].values[kLactation], 2.0);
  EXPECT_EQ(h.records[3].values[kMilk305], 8000.0);
  for (const MergedRecord& r : h.records) EXPECT_EQ(r.values[kHwi], 55.0);
  EXPECT_EQ(h.age_at_first_calving_days, day(2012, 1, 1) - day(2010, 1, 1));
}

TEST(Merge, FiveCowFixtureRecordCounts) {
  // Expected counts are the distinct test-day/pregnancy/health dates per cow, counted by hand.
  RawTables t;
  for (int c = 1; c <= 5; ++c) add_cow(t, "NID" + std::to_string(c), day(2010, 1, 1), day(2017, 1, 1));
  // NID1: nothing. NID2: 2 test days + health on one of them + 1 pregnancy = 3 dates.
  add_test_day(t, "NID2", day(2012, 1, 1));
  add_test_day(t, "NID2", day(2012, 2, 1));
  add_health(t, "NID2", day(2012, 2, 1));
  add_pregnancy(t, "NID2", day(2012, 3, 1), 30);
  // NID3: lactation and calving-ease rows only add state, 1 test day.
  add_lactation(t, "NID3", day(2012, 1, 1), 1, 6000);
  add_test_day(t, "NID3", day(2012, 4, 1));
  // NID4: duplicate test day on one date, 2 health events on another = 2 dates.
  add_test_day(t, "NID4", day(2013, 1, 1));
  add_test_day(t, "NID4", day(2013, 1, 1), 300);
  add_health(t, "NID4", day(2013, 5, 1));
  add_health(t, "NID4", day(2013, 5, 1));
  // NID5: 5 distinct dates across the three event tables.
  add_test_day(t, "NID5", day(2014, 1, 1));
  add_test_day(t, "NID5", day(2014, 2, 1));
  add_pregnancy(t, "NID5", day(2014, 3, 1), 0);
  add_health(t, "NID5", day(2014, 4, 1));
  add_pregnancy(t, "NID5", day(2014, 5, 1), 40);
  // Orphan row.
  add_test_day(t, "NID404", day(2014, 5, 1));

  const MergeResult m = merge_on_nid(t);
  ASSERT_EQ(m.histories.size(), 5u);
  const std::vector<std::size_t> expected = {0, 3, 1, 2, 5};
  std::size_t total = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(m.histories[i].records.size(), expected[i]) << m.histories[i].cow_id;
    total += m.histories[i].records.size();
  }
  EXPECT_EQ(total, 11u);
  EXPECT_EQ(m.report.orphan_rows, 1u);
  // Same-date duplicates: the later row wins.
  EXPECT_EQ(m.histories[3].records[0].values[kScc], 300.0);
}

TEST(Merge, CowWithoutBirthDateIsExcludedAndCounted) {
  RawTables t;
  add_cow(t, "NID1", day(2010, 1, 1), day(2016, 1, 1));
  add_row(t, TableKind::Pedigree, "NID2");
  const MergeResult m = merge_on_nid(t);
  EXPECT_EQ(m.histories.size(), 1u);
  EXPECT_EQ(m.report.excluded_no_birth_date, 1u);
}

TEST(Clean, HerdLifeRangeAndValueBounds) {
  RawTables t;
  add_cow(t, "NID1", day(2010, 1, 1), day(2010, 1, 1).plus_days(50));
  add_cow(t, "NID2", day(2010, 1, 1), day(2010, 1, 1).plus_days(101));
  add_cow(t, "NID3", day(2010, 1, 1), day(2010, 1, 1).plus_days(5001));
  add_cow(t, "NID4", day(2010, 1, 1), std::nullopt);
  for (const char* id : {"NID1", "NID2", "NID3", "NID4"}) add_test_day(t, id, day(2010, 1, 1).plus_days(40));
  add_test_day(t, "NID2", day(2010, 1, 1).plus_days(60), -5.0);
  add_test_day(t, "NID2", day(2010, 1, 1).plus_days(200));  // after culling

  const IngestResult r = ingest_tables(t);
  ASSERT_EQ(r.histories.size(), 1u);
  const CowHistory& h = r.histories[0];
  EXPECT_EQ(h.cow_id, "NID2");
  EXPECT_EQ(h.hl_days, 101);
  EXPECT_EQ(r.cleaning.dropped_hl_below_min, 1u);
  EXPECT_EQ(r.cleaning.dropped_hl_above_max, 1u);
  EXPECT_EQ(r.cleaning.dropped_no_target, 1u);
  EXPECT_EQ(r.cleaning.records_outside_lifespan, 1u);
  ASSERT_EQ(h.records.size(), 2u);
  EXPECT_TRUE(std::isnan(h.records[1].values[kScc]));
  EXPECT_EQ(r.cleaning.values_out_of_range.at("scc"), 1u);
  for (const MergedRecord& rec : h.records) EXPECT_LE(rec.values[kCurrentLife], static_cast<double>(h.hl_days));
}

TEST(Features, SelectionKeepsSixteenSlotsAndMissingMarker) {
  MergedRecord r;
  for (std::size_t i = 0; i < kNumRecordFields; ++i) r.values[i] = static_cast<double>(i);
  FeatureVector f = select_features(r);
  for (std::size_t i = 0; i < kNumFeatures; ++i) EXPECT_EQ(f[i], static_cast<double>(i));
  r.values[kMilk305] = kMissing;
  f = select_features(r);
  EXPECT_TRUE(std::isnan(f[kMilk305]));
  for (std::string_view name : kFeatureNames) EXPECT_EQ(name.find("id"), std::string_view::npos);
}

TEST(Standardizer, TrainingDataHasZeroMeanUnitSd) {
  const auto histories = make_histories(40, 3, 5);
  const Standardizer s = fit_standardizer(histories);
  const auto z = apply_standardizer(s, histories);
  for (std::size_t j = 0; j < kNumContinuous; ++j) {
    double sum = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (const CowHistory& h : z)
      for (const MergedRecord& r : h.records) {
        sum += r.values[j];
        ss += r.values[j] * r.values[j];
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    EXPECT_NEAR(mean, 0.0, 1e-9) << j;
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(n) - mean * mean), 1.0, 1e-9) << j;
  }
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t r = 0; r < z[i].records.size(); ++r)
      for (std::size_t j = kNumContinuous; j < kNumFeatures; ++j)
        EXPECT_EQ(z[i].records[r].values[j], histories[i].records[r].values[j]);
}

TEST(Standardizer, DeterministicAndRoundTripsThroughJson) {
  const auto histories = make_histories(20, 2, 3);
  const Standardizer s = fit_standardizer(histories);
  const Standardizer back = Standardizer::from_json(s.to_json());
  const auto a = apply_standardizer(s, histories);
  const auto b = apply_standardizer(back, histories);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t r = 0; r < a[i].records.size(); ++r) EXPECT_EQ(a[i].records[r].values, b[i].records[r].values);
  EXPECT_THROW(apply_standardizer(s, a), UsageError);
}

TEST(Standardizer, ConstantFeatureIsDroppedWithWarning) {
  auto histories = make_histories(10, 2, 2);
  for (CowHistory& h : histories)
    for (MergedRecord& r : h.records) r.values[kLactation] = 2.0;
  const Standardizer s = fit_standardizer(histories);
  EXPECT_FALSE(s.active[kLactation]);
  ASSERT_EQ(s.warnings.size(), 1u);
  const auto z = apply_standardizer(s, histories);
  EXPECT_EQ(z[0].records[0].values[kLactation], 0.0);
}

TEST(Split, TenCowsEightTwoDisjoint) {
  const Split s = split_by_cow(make_histories(10, 1), 0.8, 3);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.test.size(), 2u);
  std::set<std::string> ids;
  for (const auto& h : s.train) ids.insert(h.cow_id);
  for (const auto& h : s.test) EXPECT_FALSE(ids.count(h.cow_id));
}

TEST(Split, SameSeedSameSplitDifferentSeedDiffers) {
  auto ids = [](const Split& s) {
    std::vector<std::string> out;
    for (const auto& h : s.test) out.push_back(h.cow_id);
    return out;
  };
  const auto histories = make_histories(100, 4);
  EXPECT_EQ(ids(split_by_cow(histories, 0.8, 5)), ids(split_by_cow(histories, 0.8, 5)));
  EXPECT_NE(ids(split_by_cow(histories, 0.8, 5)), ids(split_by_cow(histories, 0.8, 6)));
}

TEST(Split, PerFarmProportionsWithinOneCow) {
  const auto histories = make_histories(203, 7);
  const Split s = split_by_cow(histories, 0.8, 11);
  std::map<std::string, std::pair<int, int>> counts;
  for (const auto& h : s.train) ++counts[h.farm_id].first;
  for (const auto& h : s.test) ++counts[h.farm_id].second;
  ASSERT_EQ(counts.size(), 7u);
  for (const auto& [farm, c] : counts) {
    const double n = c.first + c.second;
    EXPECT_LE(std::abs(c.first - 0.8 * n), 1.0) << farm;
  }
}

TEST(Split, Preconditions) {
  EXPECT_THROW(split_by_cow(make_histories(1, 1), 0.8, 1), DataError);
  EXPECT_THROW(split_by_cow(make_histories(10, 1), 1.0, 1), UsageError);
  EXPECT_THROW(split_by_cow(make_histories(10, 1), 0.0, 1), UsageError);
}
