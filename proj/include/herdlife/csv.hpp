#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "herdlife/error.hpp"

namespace herdlife::csv {

using Row = std::vector<std::string>;

/// Splits one CSV line. Handles double-quoted fields with "" escapes; embedded newlines are not supported.
inline Row split_line(std::string_view line) {
  Row fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

struct Document {
  Row header;
  std::vector<Row> rows;
};

inline Document read_stream(std::istream& in) {
  Document doc;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
      doc.header = split_line(line);
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    doc.rows.push_back(split_line(line));
  }
  if (!have_header) throw DataError("empty CSV: no header row");
  return doc;
}

inline Document read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_stream(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Shortest decimal text that parses back to exactly `value`. NaN is written as an empty field.
inline std::string format_number(double value) {
  if (std::isnan(value)) return {};
  if (value == 0.0) return "0";
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buffer, ptr);
}

/// Fixed-point text with `digits` decimals, for human-facing tables.
inline std::string format_fixed(double value, int digits) {
  if (std::isnan(value)) return {};
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value, std::chars_format::fixed, digits);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buffer, ptr);
}

/// Parses a whole field as a double; empty or malformed text gives nullopt.
inline std::optional<double> parse_number(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void row(const Row& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << '\n';
  }

 private:
  std::ostream& out_;
};

/// Writes header + rows to `path`, creating parent directories.
inline void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  Writer writer(out);
  writer.row(header);
  for (const Row& r : rows) writer.row(r);
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace herdlife::csv
