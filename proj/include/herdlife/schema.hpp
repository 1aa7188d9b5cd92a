#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "herdlife/error.hpp"

namespace herdlife {

enum class TableKind { Pedigree, Lactation, TestDay, PregnancyTest, CalvingEase, HerdHealth, Abv };

inline constexpr std::array<TableKind, 7> kAllTables = {TableKind::Pedigree,   TableKind::Lactation,
                                                        TableKind::TestDay,    TableKind::PregnancyTest,
                                                        TableKind::CalvingEase, TableKind::HerdHealth,
                                                        TableKind::Abv};

enum class ColumnType { Text, Date, Number };

struct ColumnSpec {
  std::string name;
  ColumnType type;
  bool required = false;
};

struct TableSchema {
  TableKind kind;
  std::string code;       // "DS104"
  std::string file_name;  // "ds104.csv"
  std::string title;
  std::vector<ColumnSpec> columns;
  std::string cow_column;
  std::string herd_column;
  std::string date_column;  // empty for tables without an event date

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i].name == name) return i;
    }
    throw UsageError(code + " has no column '" + std::string(name) + "'");
  }
};

namespace detail {

inline TableSchema make_schema(TableKind kind) {
  using T = ColumnType;
  auto text = [](const char* n, bool req = false) { return ColumnSpec{n, T::Text, req}; };
  auto date = [](const char* n, bool req = false) { return ColumnSpec{n, T::Date, req}; };
  auto num = [](const char* n) { return ColumnSpec{n, T::Number, false}; };
  switch (kind) {
    case TableKind::Pedigree:
      return {kind, "DS102", "ds102.csv", "Cow Pedigree Record",
              {text("National Cow ID", true), text("National Herd ID", true), text("Within-Herd Cow ID"),
               date("Birth Date"), text("Sire National ID"), text("Dam National ID"), text("Animal Termination Code"),
               date("Animal Termination Date")},
              "National Cow ID", "National Herd ID", ""};
    case TableKind::Lactation:
      return {kind, "DS103", "ds103.csv", "Lactation Record",
              {num("Milk Yield"), num("Fat Yield"), num("Total Solids 305"), num("Milk 305"), num("Fat 305"),
               num("Protein 305"), num("Protein Yield"), num("Lactose Yield"), num("Solids Yield"), num("PI Milk"),
               num("PI Fat"), num("PI Protein"), num("Custom PI"), text("National Cow ID", true),
               text("National Herd ID", true), text("Within-Herd Cow ID"), date("Calving Date", true),
               text("Calving Code"), num("Parity"), date("Termination Date"), text("Termination Code"),
               num("Num PI TEST"), num("Lactose 305")},
              "National Cow ID", "National Herd ID", "Calving Date"};
    case TableKind::TestDay:
      return {kind, "DS104", "ds104.csv", "Test Day Record",
              {text("National Cow ID", true), text("National Herd ID", true), text("Within-Herd Cow ID"),
               date("Test Date", true), num("Fat Percentage"), num("Protein Percentage"), num("Lactose Percentage"),
               num("Somatic Cell Count"), num("Milk Yield"), date("Calving Date")},
              "National Cow ID", "National Herd ID", "Test Date"};
    case TableKind::PregnancyTest:
      return {kind, "DS108", "ds108.csv", "Pregnancy Test Record",
              {text("National Cow Id", true), text("National Herd Id", true), text("Within-Herd Cow Id"),
               date("Date", true), text("Code"), num("Result"), text("Bull National Id"), text("Technician Code")},
              "National Cow Id", "National Herd Id", "Date"};
    case TableKind::CalvingEase:
      return {kind, "DS112", "ds112.csv", "Calving Ease Record",
              {text("National Cow ID", true), text("National Herd ID", true), text("Within-Herd Cow ID"),
               date("Calving Date", true), num("Parity"), date("Last Mating Date"), num("Litter Size"),
               num("Calving Ease"), text("Sex Of Calf"), text("Fate Of Calf"), text("Size Of Calf")},
              "National Cow ID", "National Herd ID", "Calving Date"};
    case TableKind::HerdHealth:
      return {kind, "DS116", "ds116.csv", "Herd Health Record",
              {text("National Cow ID", true), text("National Herd ID", true), date("Date", true),
               text("Health Event Code"), text("Health Treatment Code"), text("Anatomical Position")},
              "National Cow ID", "National Herd ID", "Date"};
    case TableKind::Abv:
      return {kind, "DS202", "ds202.csv", "ABV",
              {text("National ID", true), text("National Herd ID", true), text("Within-Herd Cow ID"),
               text("Breed Of Cow"), date("Date Of Birth"), num("Mammary System"), num("Health Weighted Index"),
               num("ABV Mastitis Resistance"), num("Reliability Mastitis Resistance")},
              "National ID", "National Herd ID", ""};
  }
  throw UsageError("unknown table kind");
}

}  // namespace detail

inline const TableSchema& schema(TableKind kind) {
  static const std::array<TableSchema, 7> schemas = {
      detail::make_schema(TableKind::Pedigree),    detail::make_schema(TableKind::Lactation),
      detail::make_schema(TableKind::TestDay),     detail::make_schema(TableKind::PregnancyTest),
      detail::make_schema(TableKind::CalvingEase), detail::make_schema(TableKind::HerdHealth),
      detail::make_schema(TableKind::Abv)};
  return schemas[static_cast<std::size_t>(kind)];
}

inline const TableSchema& schema_by_code(std::string_view code) {
  for (TableKind kind : kAllTables) {
    if (schema(kind).code == code) return schema(kind);
  }
  throw UsageError("unknown table code '" + std::string(code) + "'");
}

}  // namespace herdlife
