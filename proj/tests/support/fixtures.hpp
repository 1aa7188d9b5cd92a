#pragma once

// Small hand-built tables and histories for unit tests.

#include <string>
#include <vector>

#include "herdlife/ingestion.hpp"

namespace herdlife::test_support {

inline Date day(int y, unsigned m, unsigned d) { return Date::from_ymd(y, m, d); }

inline void set(RawRow& row, TableKind kind, const std::string& column, Cell value) {
  row.cells[schema(kind).index_of(column)] = std::move(value);
}

/// Row with the cow and herd columns filled in.
inline RawRow& add_row(RawTables& t, TableKind kind, const std::string& cow, const std::string& herd = "HERD01") {
  RawRow& row = t[kind].add_row();
  set(row, kind, schema(kind).cow_column, cow);
  set(row, kind, schema(kind).herd_column, herd);
  return row;
}

inline void add_cow(RawTables& t, const std::string& cow, Date birth, std::optional<Date> culling,
                    const std::string& herd = "HERD01") {
  RawRow& row = add_row(t, TableKind::Pedigree, cow, herd);
  set(row, TableKind::Pedigree, "Birth Date", birth);
  if (culling) set(row, TableKind::Pedigree, "Animal Termination Date", *culling);
}

inline RawRow& add_test_day(RawTables& t, const std::string& cow, Date date, double scc = 150.0) {
  RawRow& row = add_row(t, TableKind::TestDay, cow);
  set(row, TableKind::TestDay, "Test Date", date);
  set(row, TableKind::TestDay, "Somatic Cell Count", scc);
  set(row, TableKind::TestDay, "Fat Percentage", 4.2);
  set(row, TableKind::TestDay, "Lactose Percentage", 4.9);
  set(row, TableKind::TestDay, "Milk Yield", 25.0);
  return row;
}

inline RawRow& add_health(RawTables& t, const std::string& cow, Date date) {
  RawRow& row = add_row(t, TableKind::HerdHealth, cow);
  set(row, TableKind::HerdHealth, "Date", date);
  set(row, TableKind::HerdHealth, "Health Event Code", std::string("MAST"));
  return row;
}

inline RawRow& add_pregnancy(RawTables& t, const std::string& cow, Date date, double days_pregnant) {
  RawRow& row = add_row(t, TableKind::PregnancyTest, cow);
  set(row, TableKind::PregnancyTest, "Date", date);
  set(row, TableKind::PregnancyTest, "Result", days_pregnant);
  return row;
}

inline RawRow& add_lactation(RawTables& t, const std::string& cow, Date calving, double parity, double milk_305) {
  RawRow& row = add_row(t, TableKind::Lactation, cow);
  set(row, TableKind::Lactation, "Calving Date", calving);
  set(row, TableKind::Lactation, "Parity", parity);
  set(row, TableKind::Lactation, "Milk 305", milk_305);
  return row;
}

/// Histories with `records` dated records each, spread over `farms` farms; hl_days set.
inline std::vector<CowHistory> make_histories(std::size_t cows, std::size_t farms, std::size_t records = 1,
                                              std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<CowHistory> out;
  for (std::size_t i = 0; i < cows; ++i) {
    CowHistory h;
    h.cow_id = "C" + std::to_string(1000 + i);
    h.farm_id = "F" + std::to_string(i % farms);
    h.birth_date = day(2010, 1, 1);
    h.hl_days = 1500 + static_cast<std::int64_t>(i % 7) * 200;
    h.culling_date = h.birth_date.plus_days(h.hl_days);
    h.hl_class = hl_to_class(static_cast<double>(h.hl_days));
    for (std::size_t r = 0; r < records; ++r) {
      MergedRecord rec;
      rec.date = h.birth_date.plus_days(static_cast<std::int64_t>(800 + 30 * r));
      for (std::size_t j = 0; j < kNumContinuous; ++j) rec.values[j] = 10.0 * static_cast<double>(j) + rng.normal();
      for (std::size_t j = kNumContinuous; j < kNumFeatures; ++j) rec.values[j] = (r + j) % 2 ? 1.0 : 0.0;
      rec.values[kCurrentLife] = static_cast<double>(rec.date - h.birth_date);
      h.records.push_back(rec);
    }
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace herdlife::test_support
