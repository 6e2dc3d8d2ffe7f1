#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"

namespace fmed {

// Shortest round-trip decimal representation; stable across runs.
inline std::string format_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("failed to format number");
  return std::string(buf, end);
}

inline double parse_double(std::string_view text, const std::string& where) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (text == "inf" || text == "Inf" || text == "+inf") return std::numeric_limits<double>::infinity();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(where + ": cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

// Wide layout: header `subject_id,t0,t1,...` with numeric time labels, one
// row per subject. The time labels must start at 0 and be uniformly spaced.
inline FunctionalSample parse_wide_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "subject_id") {
    throw FormatError(source + ": header must be subject_id followed by at least 3 time labels");
  }
  std::vector<double> times;
  for (std::size_t c = 1; c < header.size(); ++c) {
    times.push_back(parse_double(header[c], source + " header column " + std::to_string(c + 1)));
  }
  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) throw FormatError(source + ": time labels must be increasing");
  if (std::abs(times[0]) > 1e-9 * dt) throw FormatError(source + ": first time label must be 0");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (std::abs(times[k] - static_cast<double>(k) * dt) > 1e-6 * dt) {
      throw FormatError(source + ": time labels are not uniformly spaced (column " +
                        std::to_string(k + 2) + ")");
    }
  }
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw FormatError(source + ": line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    ids.emplace_back(fields[0]);
    std::vector<double> row;
    row.reserve(times.size());
    for (std::size_t c = 1; c < fields.size(); ++c) {
      row.push_back(parse_double(fields[c], source + " line " + std::to_string(line_no)));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(source + ": no subject rows");
  CurveMatrix values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < times.size(); ++k) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  try {
    return FunctionalSample(TimeGrid(static_cast<long>(times.size()), dt), std::move(values), false,
                            std::move(ids));
  } catch (const InvalidArgument& e) {
    throw FormatError(source + ": " + e.what());
  }
}

inline FunctionalSample read_wide_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_wide_csv(in, path);
}

inline void write_wide_csv(std::ostream& out, const FunctionalSample& sample) {
  out << "subject_id";
  for (std::size_t k = 0; k < sample.grid().size(); ++k) out << ',' << format_double(sample.grid().time(k));
  out << '\n';
  for (std::size_t i = 0; i < sample.n_subjects(); ++i) {
    out << sample.ids()[i];
    for (std::size_t k = 0; k < sample.grid().size(); ++k) {
      out << ',' << format_double(sample.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    }
    out << '\n';
  }
}

inline void write_wide_csv(const std::string& path, const FunctionalSample& sample) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_wide_csv(out, sample);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace fmed
