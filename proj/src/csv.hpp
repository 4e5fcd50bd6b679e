#pragma once

// Minimal comma-separated reading helpers shared by the file readers.

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "citytrack/errors.hpp"

namespace citytrack::detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(where + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  // Accept integral values written as floats ("3.0"), common in MOT files.
  const double d = parse_double(s, where);
  const auto i = static_cast<long long>(d);
  if (static_cast<double>(i) != d) throw ParseError(where + ": expected integer '" + std::string(s) + "'");
  return i;
}

/// Calls fn(fields, location) for each non-empty, non-comment line.
template <typename Fn>
void for_each_csv_row(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line == "\r") continue;
    fn(split_csv(line), path + ":" + std::to_string(lineno));
  }
}

}  // namespace citytrack::detail
