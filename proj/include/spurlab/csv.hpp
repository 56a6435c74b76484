#pragma once

// Featurized-dataset CSV ingestion and export.
//
// Layout: a header row, then one example per line. The default schema expects
// columns `y`, `a`, `f0` ... `f{D-1}`; numbers are written in shortest
// round-trip form so write-then-read is bit-exact.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "spurlab/dataset.hpp"
#include "spurlab/error.hpp"

namespace spurlab {

struct CsvSchema {
  std::string label_column = "y";
  std::string attribute_column = "a";
  /// Feature columns by name; empty means every column other than label and attribute,
  /// in file order.
  std::vector<std::string> feature_columns;
  /// Raw cell text to {-1, 1}. Unlisted values are rejected.
  std::map<std::string, int, std::less<>> label_values{{"1", 1}, {"-1", -1}, {"0", -1}};
  std::map<std::string, int, std::less<>> attribute_values{{"1", 1}, {"-1", -1}, {"0", -1}};
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline void write_double(std::ostream& os, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, ptr - buf);
}

}  // namespace detail

/// Parses a featurized dataset from a stream. Row numbers in errors are
/// 1-based file lines (the header is line 1).
inline GroupedDataset read_features_csv(std::istream& in, const CsvSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: missing header", 1);
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t, std::less<>> position;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(detail::trim(header[c]));
    if (!position.emplace(name, c).second) throw ParseError("duplicate column '" + name + "'", 1);
  }
  auto column = [&](const std::string& name) {
    const auto it = position.find(name);
    if (it == position.end()) throw ParseError("missing column '" + name + "'", 1);
    return it->second;
  };
  const std::size_t label_col = column(schema.label_column);
  const std::size_t attr_col = column(schema.attribute_column);
  std::vector<std::size_t> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != label_col && c != attr_col) feature_cols.push_back(c);
  } else {
    for (const auto& name : schema.feature_columns) feature_cols.push_back(column(name));
  }
  if (feature_cols.empty()) throw ParseError("no feature columns", 1);

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<int> attributes;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " columns, found " +
                           std::to_string(cells.size()),
                       row);
    auto map_value = [&](std::string_view cell, const auto& table, const char* what) {
      const auto it = table.find(detail::trim(cell));
      if (it == table.end())
        throw ParseError(std::string("unknown ") + what + " value '" +
                             std::string(detail::trim(cell)) + "'",
                         row);
      return it->second;
    };
    labels.push_back(map_value(cells[label_col], schema.label_values, "label"));
    attributes.push_back(map_value(cells[attr_col], schema.attribute_values, "attribute"));
    for (const auto c : feature_cols) {
      const auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ParseError("non-numeric feature in column '" + std::string(detail::trim(header[c])) +
                             "'",
                         row);
      values.push_back(*v);
    }
  }
  if (labels.empty()) throw ParseError("no data rows", 0);
  const auto n = static_cast<Index>(labels.size());
  const auto d = static_cast<Index>(feature_cols.size());
  Eigen::MatrixXd x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                     Eigen::RowMajor>>(values.data(), n, d);
  return GroupedDataset(std::move(x), std::move(labels), std::move(attributes));
}

inline GroupedDataset load_features_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  return read_features_csv(in, schema);
}

/// Writes `ds` in the default schema (y, a, f0..f{D-1}).
inline void write_features_csv(std::ostream& os, const GroupedDataset& ds) {
  os << "y,a";
  for (Index j = 0; j < ds.dim(); ++j) os << ",f" << j;
  os << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    os << ds.labels()[static_cast<std::size_t>(i)] << ','
       << ds.attributes()[static_cast<std::size_t>(i)];
    for (Index j = 0; j < ds.dim(); ++j) {
      os << ',';
      detail::write_double(os, ds.features()(i, j));
    }
    os << '\n';
  }
}

inline void save_features_csv(const std::string& path, const GroupedDataset& ds) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'", 0);
  write_features_csv(out, ds);
}

}  // namespace spurlab
