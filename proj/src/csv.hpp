#pragma once

// Minimal CSV reader shared by the ASL and sidecar formats.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "biasdiff/errors.hpp"

namespace biasdiff::csv {

struct Row {
  std::size_t line = 0;  // 1-based
  std::vector<std::string> fields;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Skips blank lines, '#' comments, and (if skip_alpha_header) a first line
// whose first field is not numeric.
inline std::vector<Row> read_rows(const std::filesystem::path& path, bool skip_alpha_header = true) {
  std::ifstream f(path);
  if (!f) throw DataError("missing file: " + path.string());
  std::vector<Row> rows;
  std::string line;
  std::size_t n = 0;
  bool first_data = true;
  while (std::getline(f, line)) {
    ++n;
    std::string_view sv = trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    Row row;
    row.line = n;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = sv.find(',', start);
      const std::string_view field =
          trim(sv.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      row.fields.emplace_back(field);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (first_data && skip_alpha_header) {
      first_data = false;
      const char c = row.fields.front().empty() ? ' ' : row.fields.front().front();
      if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.')) continue;
    }
    first_data = false;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

inline double to_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(where(path, line) + ": malformed number '" + s + "'");
  }
  return v;
}

inline std::int64_t to_int64(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(where(path, line) + ": malformed integer '" + s + "'");
  }
  return v;
}

inline void expect_columns(const Row& row, std::size_t n, const std::filesystem::path& path) {
  if (row.fields.size() != n) {
    throw DataError(where(path, row.line) + ": expected " + std::to_string(n) + " columns, got " +
                    std::to_string(row.fields.size()));
  }
}

}  // namespace biasdiff::csv
