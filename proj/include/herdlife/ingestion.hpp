#pragma once

// Raw tables -> per-cow merged histories -> cleaned feature records.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "herdlife/classes.hpp"
#include "herdlife/date.hpp"
#include "herdlife/error.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/schema.hpp"
#include "herdlife/tables.hpp"

namespace herdlife {

inline constexpr std::size_t kNumFeatures = 16;
inline constexpr std::size_t kNumContinuous = 13;  // features [0, 13) are z-scored; [13, 16) are flags

enum Feature : std::size_t {
  kCurrentLife = 0,
  kLactation,
  kMilk305,
  kLactoseYield,
  kPiFat,
  kNumPiTests,
  kMilkFat,
  kLactosePercentage,
  kScc,
  kDaysPregnant,
  kMammarySystem,
  kHwi,
  kMastitisResistance,
  kTestedFlag,
  kBredFlag,
  kTreatedFlag,
};

inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "current_life_days", "lactation",      "milk_305",       "lactose_yield",
    "pi_fat",            "num_pi_tests",   "milk_fat",       "lactose_percentage",
    "scc",               "days_pregnant",  "mammary_system", "hwi",
    "abv_mastitis_resistance", "tested_flag", "bred_flag",   "treated_flag"};

inline std::size_t feature_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (kFeatureNames[i] == name) return i;
  }
  throw UsageError("unknown feature '" + std::string(name) + "'");
}

/// Fields of a merged record. The first 16 are the model features, in Feature order;
/// the rest are carried from the source tables but not selected.
enum RecordField : std::size_t {
  kFieldLactationMilkYield = kNumFeatures,
  kFieldFatYield,
  kFieldTotalSolids305,
  kFieldFat305,
  kFieldProtein305,
  kFieldProteinYield,
  kFieldSolidsYield,
  kFieldPiMilk,
  kFieldPiProtein,
  kFieldCustomPi,
  kFieldLactose305,
  kFieldProteinPercentage,
  kFieldTestMilkYield,
  kFieldLitterSize,
  kFieldCalvingEase,
  kFieldMastitisReliability,
  kFieldDaysInMilk,
  kNumRecordFields,
};

using FeatureVector = std::array<double, kNumFeatures>;
using RecordValues = std::array<double, kNumRecordFields>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// One merged per-date record of a cow.
struct MergedRecord {
  Date date;
  RecordValues values{};
};

struct CowHistory {
  std::string cow_id;
  std::string farm_id;
  Date birth_date;
  std::optional<Date> culling_date;
  std::optional<std::int64_t> age_at_first_calving_days;
  std::vector<MergedRecord> records;
  std::int64_t hl_days = -1;  // -1 until targets are computed
  HlClass hl_class = HlClass::Low;
  bool standardized = false;

  bool has_target() const noexcept { return hl_days >= 0; }
};

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

struct MergeReport {
  std::size_t cows = 0;
  std::size_t excluded_no_birth_date = 0;
  std::size_t duplicate_pedigree_rows = 0;
  std::size_t orphan_rows = 0;  // event/state rows whose cow is not in the pedigree
};

namespace detail {

// Same-date rows are applied in this order, then by input order.
inline int table_priority(TableKind kind) {
  switch (kind) {
    case TableKind::TestDay: return 0;
    case TableKind::Lactation: return 1;
    case TableKind::PregnancyTest: return 2;
    case TableKind::CalvingEase: return 3;
    case TableKind::HerdHealth: return 4;
    default: return 5;
  }
}

struct Columns {
  Columns() {
    const TableSchema& lact = schema(TableKind::Lactation);
    lact_date = lact.index_of("Calving Date");
    lact_parity = lact.index_of("Parity");
    lact_map = {{
        {lact.index_of("Milk 305"), kMilk305},
        {lact.index_of("Lactose Yield"), kLactoseYield},
        {lact.index_of("PI Fat"), kPiFat},
        {lact.index_of("Num PI TEST"), kNumPiTests},
        {lact.index_of("Milk Yield"), kFieldLactationMilkYield},
        {lact.index_of("Fat Yield"), kFieldFatYield},
        {lact.index_of("Total Solids 305"), kFieldTotalSolids305},
        {lact.index_of("Fat 305"), kFieldFat305},
        {lact.index_of("Protein 305"), kFieldProtein305},
        {lact.index_of("Protein Yield"), kFieldProteinYield},
        {lact.index_of("Solids Yield"), kFieldSolidsYield},
        {lact.index_of("PI Milk"), kFieldPiMilk},
        {lact.index_of("PI Protein"), kFieldPiProtein},
        {lact.index_of("Custom PI"), kFieldCustomPi},
        {lact.index_of("Lactose 305"), kFieldLactose305},
    }};
    const TableSchema& test = schema(TableKind::TestDay);
    test_date = test.index_of("Test Date");
    test_map = {{
        {test.index_of("Fat Percentage"), kMilkFat},
        {test.index_of("Lactose Percentage"), kLactosePercentage},
        {test.index_of("Somatic Cell Count"), kScc},
        {test.index_of("Protein Percentage"), kFieldProteinPercentage},
        {test.index_of("Milk Yield"), kFieldTestMilkYield},
    }};
    const TableSchema& preg = schema(TableKind::PregnancyTest);
    preg_date = preg.index_of("Date");
    preg_result = preg.index_of("Result");
    const TableSchema& calv = schema(TableKind::CalvingEase);
    calv_date = calv.index_of("Calving Date");
    calv_map = {{{calv.index_of("Litter Size"), kFieldLitterSize}, {calv.index_of("Calving Ease"), kFieldCalvingEase}}};
    health_date = schema(TableKind::HerdHealth).index_of("Date");
    const TableSchema& abv = schema(TableKind::Abv);
    abv_map = {{
        {abv.index_of("Mammary System"), kMammarySystem},
        {abv.index_of("Health Weighted Index"), kHwi},
        {abv.index_of("ABV Mastitis Resistance"), kMastitisResistance},
        {abv.index_of("Reliability Mastitis Resistance"), kFieldMastitisReliability},
    }};
    const TableSchema& ped = schema(TableKind::Pedigree);
    ped_birth = ped.index_of("Birth Date");
    ped_termination = ped.index_of("Animal Termination Date");
  }

  std::size_t lact_date, lact_parity, test_date, preg_date, preg_result, calv_date, health_date, ped_birth,
      ped_termination;
  std::array<std::pair<std::size_t, std::size_t>, 15> lact_map;
  std::array<std::pair<std::size_t, std::size_t>, 5> test_map;
  std::array<std::pair<std::size_t, std::size_t>, 2> calv_map;
  std::array<std::pair<std::size_t, std::size_t>, 4> abv_map;
};

inline const Columns& columns() {
  static const Columns c;
  return c;
}

inline std::size_t cow_column(TableKind kind) { return schema(kind).index_of(schema(kind).cow_column); }

inline std::size_t date_column(TableKind kind) { return schema(kind).index_of(schema(kind).date_column); }

}  // namespace detail

/// Rows of one cow across the six non-pedigree tables, in input order.
struct CowRows {
  std::array<std::vector<const RawRow*>, 7> by_table;

  std::vector<const RawRow*>& operator[](TableKind k) { return by_table[static_cast<std::size_t>(k)]; }
  const std::vector<const RawRow*>& operator[](TableKind k) const { return by_table[static_cast<std::size_t>(k)]; }
};

/// Builds the merged records of one cow.
///
/// Records exist on every date with a test-day, pregnancy-test or health row.
/// Lactation, calving-ease and ABV rows are state: the latest value on or before
/// each record date is carried onto it. Lactation is 0 before the first calving.
/// A value stays missing until some source row supplies it.
inline std::vector<MergedRecord> assemble_records(Date birth_date, const CowRows& rows) {
  const detail::Columns& col = detail::columns();
  struct Item {
    Date date;
    int priority;
    std::size_t order;
    TableKind kind;
    const RawRow* row;
  };
  std::vector<Item> items;
  std::size_t order = 0;
  for (TableKind kind : {TableKind::TestDay, TableKind::Lactation, TableKind::PregnancyTest, TableKind::CalvingEase,
                         TableKind::HerdHealth}) {
    const std::size_t dc = detail::date_column(kind);
    for (const RawRow* row : rows[kind]) {
      const std::optional<Date> d = date_at(*row, dc);
      if (!d) continue;  // required column; parse_table already rejects these
      items.push_back({*d, detail::table_priority(kind), order++, kind, row});
    }
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.date != b.date) return a.date < b.date;
    if (a.priority != b.priority) return a.priority < b.priority;
    return a.order < b.order;
  });

  RecordValues state;
  state.fill(kMissing);
  state[kLactation] = 0.0;
  for (const RawRow* row : rows[TableKind::Abv]) {
    for (auto [src, dst] : col.abv_map) {
      const double v = number_at(*row, src);
      if (!std::isnan(v)) state[dst] = v;
    }
  }
  std::optional<Date> last_calving;

  auto put = [&](const RawRow& row, std::size_t src, std::size_t dst) {
    const double v = number_at(row, src);
    if (!std::isnan(v)) state[dst] = v;
  };

  std::vector<MergedRecord> out;
  std::size_t i = 0;
  while (i < items.size()) {
    const Date date = items[i].date;
    bool tested = false, bred = false, treated = false;
    for (; i < items.size() && items[i].date == date; ++i) {
      const RawRow& row = *items[i].row;
      switch (items[i].kind) {
        case TableKind::TestDay:
          tested = true;
          for (auto [src, dst] : col.test_map) put(row, src, dst);
          break;
        case TableKind::Lactation: {
          for (auto [src, dst] : col.lact_map) put(row, src, dst);
          const double parity = number_at(row, col.lact_parity);
          state[kLactation] = std::isnan(parity) ? state[kLactation] + 1.0 : parity;
          last_calving = date;
          break;
        }
        case TableKind::PregnancyTest:
          bred = true;
          put(row, col.preg_result, kDaysPregnant);
          break;
        case TableKind::CalvingEase:
          for (auto [src, dst] : col.calv_map) put(row, src, dst);
          break;
        case TableKind::HerdHealth:
          treated = true;
          break;
        default:
          break;
      }
    }
    if (!(tested || bred || treated)) continue;
    MergedRecord record{date, state};
    record.values[kCurrentLife] = static_cast<double>(date - birth_date);
    record.values[kTestedFlag] = tested ? 1.0 : 0.0;
    record.values[kBredFlag] = bred ? 1.0 : 0.0;
    record.values[kTreatedFlag] = treated ? 1.0 : 0.0;
    record.values[kFieldDaysInMilk] = last_calving ? static_cast<double>(date - *last_calving) : kMissing;
    out.push_back(record);
  }
  return out;
}

struct MergeResult {
  std::vector<CowHistory> histories;  // sorted by cow_id
  MergeReport report;
};

/// Joins all tables on the national cow ID. One history per pedigree cow with a birth date.
inline MergeResult merge_on_nid(const RawTables& tables) {
  const detail::Columns& col = detail::columns();
  const RawTable& pedigree = tables[TableKind::Pedigree];
  const std::size_t ped_cow = detail::cow_column(TableKind::Pedigree);
  const std::size_t ped_herd = pedigree.schema().index_of(pedigree.schema().herd_column);

  MergeResult result;
  std::map<std::string, const RawRow*> cows;
  for (const RawRow& row : pedigree.rows) {
    auto [it, inserted] = cows.emplace(text_at(row, ped_cow), &row);
    if (!inserted) {
      ++result.report.duplicate_pedigree_rows;
      it->second = &row;
    }
  }

  std::unordered_map<std::string, CowRows> grouped;
  for (TableKind kind : kAllTables) {
    if (kind == TableKind::Pedigree) continue;
    const std::size_t cc = detail::cow_column(kind);
    for (const RawRow& row : tables[kind].rows) {
      const std::string& id = text_at(row, cc);
      if (!cows.contains(id)) {
        ++result.report.orphan_rows;
        continue;
      }
      grouped[id][kind].push_back(&row);
    }
  }

  static const CowRows kNoRows;
  for (const auto& [id, ped_row] : cows) {
    const std::optional<Date> birth = date_at(*ped_row, col.ped_birth);
    if (!birth) {
      ++result.report.excluded_no_birth_date;
      continue;
    }
    CowHistory h;
    h.cow_id = id;
    h.farm_id = text_at(*ped_row, ped_herd);
    h.birth_date = *birth;
    h.culling_date = date_at(*ped_row, col.ped_termination);
    auto found = grouped.find(id);
    const CowRows& rows = found == grouped.end() ? kNoRows : found->second;
    for (const RawRow* row : rows[TableKind::Lactation]) {
      if (auto d = date_at(*row, col.lact_date)) {
        const std::int64_t age = *d - *birth;
        if (!h.age_at_first_calving_days || age < *h.age_at_first_calving_days) h.age_at_first_calving_days = age;
      }
    }
    h.records = assemble_records(*birth, rows);
    result.histories.push_back(std::move(h));
  }
  result.report.cows = result.histories.size();
  return result;
}

/// Fills hl_days and hl_class from birth and culling dates. Cows without a culling date keep hl_days = -1.
inline void compute_targets(std::vector<CowHistory>& histories, const ClassThresholds& thresholds = {}) {
  for (CowHistory& h : histories) {
    if (!h.culling_date || *h.culling_date < h.birth_date) {
      h.hl_days = -1;
      continue;
    }
    h.hl_days = compute_hl_days(h.birth_date, *h.culling_date);
    h.hl_class = hl_to_class(static_cast<double>(h.hl_days), thresholds);
  }
}

// ---------------------------------------------------------------------------
// Cleaning
// ---------------------------------------------------------------------------

struct FieldBounds {
  std::size_t field;
  double min;
  double max;
};

/// Observed ranges of the modelled traits; values outside become missing.
inline const std::vector<FieldBounds>& field_bounds() {
  static const std::vector<FieldBounds> bounds = {
      {kLactation, 0.0, 12.0},
      {kMilk305, 0.0, 17910.0},
      {kLactoseYield, 0.0, 2966.0},
      {kPiFat, 0.0, 168.0},
      {kNumPiTests, 0.0, 39.0},
      {kMilkFat, 0.0, 11.5},
      {kLactosePercentage, 0.0, 6.5},
      {kScc, 1.0, 13125.0},
      {kDaysPregnant, 0.0, std::numeric_limits<double>::infinity()},
      {kMammarySystem, 68.0, 114.0},
      {kHwi, -342.0, 454.0},
      {kMastitisResistance, 87.0, 110.0},
      {kFieldTestMilkYield, 0.1, 77.2},
  };
  return bounds;
}

inline constexpr std::int64_t kMinHlDays = 100;
inline constexpr std::int64_t kMaxHlDays = 5000;

struct CleaningReport {
  std::size_t cows_in = 0;
  std::size_t cows_out = 0;
  std::size_t records_out = 0;
  std::size_t dropped_no_target = 0;
  std::size_t dropped_hl_below_min = 0;
  std::size_t dropped_hl_above_max = 0;
  std::size_t dropped_no_records = 0;
  std::size_t records_outside_lifespan = 0;
  std::map<std::string, std::size_t> values_out_of_range;

  nlohmann::json to_json() const {
    return {{"cows_in", cows_in},
            {"cows_out", cows_out},
            {"records_out", records_out},
            {"dropped_no_target", dropped_no_target},
            {"dropped_hl_below_100", dropped_hl_below_min},
            {"dropped_hl_above_5000", dropped_hl_above_max},
            {"dropped_no_records", dropped_no_records},
            {"records_outside_lifespan", records_outside_lifespan},
            {"values_out_of_range", values_out_of_range}};
  }
};

struct CleanOptions {
  bool require_target = true;
};

struct CleanResult {
  std::vector<CowHistory> histories;
  CleaningReport report;
};

inline std::string field_name(std::size_t field) {
  if (field < kNumFeatures) return std::string(kFeatureNames[field]);
  if (field == kFieldTestMilkYield) return "test_milk_yield";
  return "field_" + std::to_string(field);
}

/// Drops out-of-range cows and records and blanks out-of-range values.
inline CleanResult clean(std::vector<CowHistory> histories, const CleanOptions& options = {}) {
  CleanResult result;
  result.report.cows_in = histories.size();
  for (CowHistory& h : histories) {
    if (!h.has_target()) {
      if (options.require_target) {
        ++result.report.dropped_no_target;
        continue;
      }
    } else if (h.hl_days < kMinHlDays) {
      ++result.report.dropped_hl_below_min;
      continue;
    } else if (h.hl_days > kMaxHlDays) {
      ++result.report.dropped_hl_above_max;
      continue;
    }
    std::vector<MergedRecord> kept;
    kept.reserve(h.records.size());
    for (MergedRecord& r : h.records) {
      const bool before_birth = r.date < h.birth_date;
      const bool after_culling = h.culling_date && r.date > *h.culling_date;
      if (before_birth || after_culling) {
        ++result.report.records_outside_lifespan;
        continue;
      }
      for (const FieldBounds& b : field_bounds()) {
        double& v = r.values[b.field];
        if (!std::isnan(v) && (v < b.min || v > b.max)) {
          ++result.report.values_out_of_range[field_name(b.field)];
          v = kMissing;
        }
      }
      kept.push_back(r);
    }
    h.records = std::move(kept);
    if (h.records.empty()) {
      ++result.report.dropped_no_records;
      continue;
    }
    result.report.records_out += h.records.size();
    result.histories.push_back(std::move(h));
  }
  result.report.cows_out = result.histories.size();
  return result;
}

/// Projects a merged record onto the 16 model features. Missing values stay NaN.
inline FeatureVector select_features(const MergedRecord& record) {
  FeatureVector f;
  std::copy_n(record.values.begin(), kNumFeatures, f.begin());
  return f;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-feature z-score parameters for the continuous features.
struct Standardizer {
  std::array<double, kNumContinuous> mean{};
  std::array<double, kNumContinuous> sd{};
  std::array<bool, kNumContinuous> active{};  // false: constant in training data, emitted as 0
  std::vector<std::string> warnings;

  double transform(std::size_t feature, double value) const {
    if (feature >= kNumContinuous) return value;
    if (!active[feature] || std::isnan(value)) return 0.0;
    return (value - mean[feature]) / sd[feature];
  }

  double inverse(std::size_t feature, double z) const {
    if (feature >= kNumContinuous || !active[feature]) return z;
    return mean[feature] + sd[feature] * z;
  }

  nlohmann::json to_json() const {
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t j = 0; j < kNumContinuous; ++j) {
      features.push_back({{"name", kFeatureNames[j]}, {"mean", mean[j]}, {"sd", sd[j]}, {"active", bool(active[j])}});
    }
    return {{"features", features}};
  }

  static Standardizer from_json(const nlohmann::json& j) {
    Standardizer s;
    const auto& features = j.at("features");
    if (features.size() != kNumContinuous) throw CheckpointError("standardizer has wrong feature count");
    for (std::size_t k = 0; k < kNumContinuous; ++k) {
      s.mean[k] = features[k].at("mean").get<double>();
      s.sd[k] = features[k].at("sd").get<double>();
      s.active[k] = features[k].at("active").get<bool>();
    }
    return s;
  }
};

/// Fits on every record of the given (training) cows; missing values are skipped.
/// A feature with zero spread is deactivated with a warning.
inline Standardizer fit_standardizer(const std::vector<CowHistory>& train) {
  Standardizer s;
  for (std::size_t j = 0; j < kNumContinuous; ++j) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const CowHistory& h : train)
      for (const MergedRecord& r : h.records)
        if (!std::isnan(r.values[j])) {
          sum += r.values[j];
          ++n;
        }
    if (n == 0) {
      s.active[j] = false;
      s.warnings.push_back(std::string(kFeatureNames[j]) + ": no observed values; dropped");
      continue;
    }
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const CowHistory& h : train)
      for (const MergedRecord& r : h.records)
        if (!std::isnan(r.values[j])) ss += (r.values[j] - mu) * (r.values[j] - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean[j] = mu;
    s.sd[j] = sd;
    s.active[j] = sd > 1e-12 * std::max(1.0, std::abs(mu));
    if (!s.active[j]) s.warnings.push_back(std::string(kFeatureNames[j]) + ": constant in training data; dropped");
  }
  return s;
}

/// Z-scores the continuous features of every record; missing values become 0.
inline std::vector<CowHistory> apply_standardizer(const Standardizer& s, std::vector<CowHistory> histories) {
  for (CowHistory& h : histories) {
    if (h.standardized) throw UsageError("history " + h.cow_id + " is already standardized");
    for (MergedRecord& r : h.records)
      for (std::size_t j = 0; j < kNumContinuous; ++j) r.values[j] = s.transform(j, r.values[j]);
    h.standardized = true;
  }
  return histories;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct Split {
  std::vector<CowHistory> train;
  std::vector<CowHistory> test;
};

/// Cow-level split, stratified by farm: round(fraction * n_farm) cows of each farm go to train.
inline Split split_by_cow(std::vector<CowHistory> histories, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("split fraction must lie in (0, 1)");
  if (histories.size() < 2) throw DataError("need at least 2 cows to split, got " + std::to_string(histories.size()));
  std::sort(histories.begin(), histories.end(),
            [](const CowHistory& a, const CowHistory& b) { return a.cow_id < b.cow_id; });
  std::map<std::string, std::vector<std::size_t>> by_farm;
  for (std::size_t i = 0; i < histories.size(); ++i) by_farm[histories[i].farm_id].push_back(i);

  std::vector<char> to_train(histories.size(), 0);
  std::uint64_t farm_key = 0;
  for (auto& [farm, members] : by_farm) {
    Rng rng = Rng::stream(seed, farm_key++);
    rng.shuffle(members);
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < n_train && k < members.size(); ++k) to_train[members[k]] = 1;
  }
  Split split;
  for (std::size_t i = 0; i < histories.size(); ++i) {
    (to_train[i] ? split.train : split.test).push_back(std::move(histories[i]));
  }
  if (split.train.empty() || split.test.empty()) {
    throw DataError("split leaves an empty partition; add cows or change the fraction");
  }
  return split;
}

// ---------------------------------------------------------------------------
// Convenience
// ---------------------------------------------------------------------------

struct IngestResult {
  std::vector<CowHistory> histories;
  MergeReport merge;
  CleaningReport cleaning;
  nlohmann::json rejects;

  nlohmann::json report() const {
    return {{"load", rejects},
            {"merge",
             {{"cows", merge.cows},
              {"excluded_no_birth_date", merge.excluded_no_birth_date},
              {"duplicate_pedigree_rows", merge.duplicate_pedigree_rows},
              {"orphan_rows", merge.orphan_rows}}},
            {"cleaning", cleaning.to_json()}};
  }
};

/// merge -> targets -> clean on tables already in memory.
inline IngestResult ingest_tables(const RawTables& tables, const CleanOptions& options = {},
                                  const ClassThresholds& thresholds = {}) {
  MergeResult merged = merge_on_nid(tables);
  compute_targets(merged.histories, thresholds);
  CleanResult cleaned = clean(std::move(merged.histories), options);
  return {std::move(cleaned.histories), merged.report, cleaned.report, rejects_report(tables)};
}

inline IngestResult ingest_directory(const std::filesystem::path& dir, const CleanOptions& options = {},
                                     const ClassThresholds& thresholds = {}) {
  return ingest_tables(load_tables(dir), options, thresholds);
}

/// Writes one CSV row per merged record, for inspection.
inline void write_history_dump(const std::filesystem::path& path, const std::vector<CowHistory>& histories) {
  csv::Row header = {"cow_id", "farm_id", "date", "hl_days"};
  for (std::string_view name : kFeatureNames) header.emplace_back(name);
  std::vector<csv::Row> rows;
  for (const CowHistory& h : histories)
    for (const MergedRecord& r : h.records) {
      csv::Row row = {h.cow_id, h.farm_id, r.date.iso(), std::to_string(h.hl_days)};
      for (std::size_t j = 0; j < kNumFeatures; ++j) row.push_back(csv::format_number(r.values[j]));
      rows.push_back(std::move(row));
    }
  csv::write_file(path, header, rows);
}

}  // namespace herdlife
