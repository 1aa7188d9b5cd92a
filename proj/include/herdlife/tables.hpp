#pragma once

// Typed in-memory form of the seven source tables, with CSV load/save.

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "herdlife/csv.hpp"
#include "herdlife/date.hpp"
#include "herdlife/error.hpp"
#include "herdlife/schema.hpp"

namespace herdlife {

using Cell = std::variant<std::monostate, double, Date, std::string>;

/// One parsed row; cells follow the schema's column order, not the file's.
struct RawRow {
  std::vector<Cell> cells;
  std::size_t line = 0;  // 1-based line in the source file (header is line 1)
};

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct RawTable {
  explicit RawTable(TableKind table_kind = TableKind::Pedigree) : kind(table_kind) {}

  const TableSchema& schema() const { return herdlife::schema(kind); }

  /// Appends a row built from named cells; unnamed columns stay empty.
  RawRow& add_row() {
    rows.push_back(RawRow{std::vector<Cell>(schema().columns.size()), rows.size() + 2});
    return rows.back();
  }

  TableKind kind;
  std::vector<RawRow> rows;
  std::vector<RejectedRow> rejects;
};

inline double number_at(const RawRow& row, std::size_t column) {
  if (const double* v = std::get_if<double>(&row.cells[column])) return *v;
  return std::numeric_limits<double>::quiet_NaN();
}

inline std::optional<Date> date_at(const RawRow& row, std::size_t column) {
  if (const Date* v = std::get_if<Date>(&row.cells[column])) return *v;
  return std::nullopt;
}

inline const std::string& text_at(const RawRow& row, std::size_t column) {
  static const std::string empty;
  if (const std::string* v = std::get_if<std::string>(&row.cells[column])) return *v;
  return empty;
}

inline std::string cell_text(const Cell& cell) {
  return std::visit(
      [](const auto& v) -> std::string {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, std::monostate>) {
          return {};
        } else if constexpr (std::is_same_v<V, double>) {
          return csv::format_number(v);
        } else if constexpr (std::is_same_v<V, Date>) {
          return v.iso();
        } else {
          return v;
        }
      },
      cell);
}

/// Parses `doc` against the schema for `kind`.
///
/// The header must hold exactly the schema's column names, in any order.
/// Rows that fail to parse are listed in `rejects`; more than half rejected is an error.
inline RawTable parse_table(const csv::Document& doc, TableKind kind, const std::string& source = "") {
  const TableSchema& s = schema(kind);
  const std::string where = source.empty() ? s.code : source;
  std::vector<std::size_t> file_to_schema(doc.header.size());
  std::vector<bool> seen(s.columns.size(), false);
  for (std::size_t i = 0; i < doc.header.size(); ++i) {
    std::size_t idx = s.columns.size();
    for (std::size_t j = 0; j < s.columns.size(); ++j) {
      if (s.columns[j].name == doc.header[i]) idx = j;
    }
    if (idx == s.columns.size()) throw DataError(where + ": unexpected column '" + doc.header[i] + "'");
    if (seen[idx]) throw DataError(where + ": duplicate column '" + doc.header[i] + "'");
    seen[idx] = true;
    file_to_schema[i] = idx;
  }
  for (std::size_t j = 0; j < s.columns.size(); ++j) {
    if (!seen[j]) throw DataError(where + ": missing column '" + s.columns[j].name + "'");
  }

  RawTable table(kind);
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const csv::Row& fields = doc.rows[r];
    const std::size_t line = r + 2;
    if (fields.size() != doc.header.size()) {
      table.rejects.push_back({line, "expected " + std::to_string(doc.header.size()) + " fields, got " +
                                         std::to_string(fields.size())});
      continue;
    }
    RawRow row{std::vector<Cell>(s.columns.size()), line};
    std::string problem;
    for (std::size_t i = 0; i < fields.size() && problem.empty(); ++i) {
      const ColumnSpec& col = s.columns[file_to_schema[i]];
      const std::string& text = fields[i];
      Cell& cell = row.cells[file_to_schema[i]];
      if (text.empty()) {
        if (col.required) problem = "empty required field '" + col.name + "'";
        continue;
      }
      switch (col.type) {
        case ColumnType::Text:
          cell = text;
          break;
        case ColumnType::Date:
          if (auto d = Date::parse(text)) {
            cell = *d;
          } else {
            problem = "malformed date '" + text + "' in '" + col.name + "'";
          }
          break;
        case ColumnType::Number:
          if (auto v = csv::parse_number(text)) {
            cell = *v;
          } else {
            problem = "malformed number '" + text + "' in '" + col.name + "'";
          }
          break;
      }
    }
    if (!problem.empty()) {
      table.rejects.push_back({line, problem});
      continue;
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rejects.size() * 2 > doc.rows.size()) {
    throw DataError(where + ": " + std::to_string(table.rejects.size()) + " of " + std::to_string(doc.rows.size()) +
                    " rows unparseable (first: line " + std::to_string(table.rejects.front().line) + ", " +
                    table.rejects.front().reason + ")");
  }
  return table;
}

inline RawTable load_table(const std::filesystem::path& path, TableKind kind) {
  if (!std::filesystem::exists(path)) throw DataError("missing file " + path.string());
  return parse_table(csv::read_file(path), kind, path.string());
}

inline void write_table(const std::filesystem::path& path, const RawTable& table) {
  const TableSchema& s = table.schema();
  csv::Row header;
  for (const ColumnSpec& c : s.columns) header.push_back(c.name);
  std::vector<csv::Row> rows;
  rows.reserve(table.rows.size());
  for (const RawRow& row : table.rows) {
    csv::Row out;
    out.reserve(row.cells.size());
    for (const Cell& cell : row.cells) out.push_back(cell_text(cell));
    rows.push_back(std::move(out));
  }
  csv::write_file(path, header, rows);
}

/// All seven tables, indexed by TableKind.
struct RawTables {
  RawTables() {
    for (TableKind k : kAllTables) tables[static_cast<std::size_t>(k)] = RawTable(k);
  }

  RawTable& operator[](TableKind k) { return tables[static_cast<std::size_t>(k)]; }
  const RawTable& operator[](TableKind k) const { return tables[static_cast<std::size_t>(k)]; }

  std::array<RawTable, 7> tables;
};

inline RawTables load_tables(const std::filesystem::path& dir) {
  RawTables out;
  for (TableKind k : kAllTables) out[k] = load_table(dir / schema(k).file_name, k);
  return out;
}

inline void write_tables(const std::filesystem::path& dir, const RawTables& tables) {
  std::filesystem::create_directories(dir);
  for (TableKind k : kAllTables) write_table(dir / schema(k).file_name, tables[k]);
}

inline nlohmann::json rejects_report(const RawTables& tables) {
  nlohmann::json out = nlohmann::json::object();
  for (TableKind k : kAllTables) {
    const RawTable& t = tables[k];
    nlohmann::json entry = {{"rows", t.rows.size()}, {"rejected", t.rejects.size()}};
    nlohmann::json examples = nlohmann::json::array();
    for (std::size_t i = 0; i < t.rejects.size() && i < 5; ++i) {
      examples.push_back({{"line", t.rejects[i].line}, {"reason", t.rejects[i].reason}});
    }
    entry["examples"] = examples;
    out[t.schema().code] = entry;
  }
  return out;
}

}  // namespace herdlife
