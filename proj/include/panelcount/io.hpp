#pragma once

// Plain-text file formats shared by the command-line tool and anything
// else that wants to exchange panel-count data.
//
// Dataset file: two header lines, then one row per subject.
//
//   #schedule: 0.01,0.35,0.69,1.12
//   #layout: interval-major,event-minor
//   1 0 0 2 1 0 0
//   2 1 0 0 0 0 1
//
// `#schedule:` lists tau_0..tau_k (comma-separated) and must appear
// before the first data row. `#layout:` is optional but, when present,
// must name the one supported layout. Any other `#` line is a comment.
// A data row is a subject id followed by exactly 2k nonnegative
// integer counts, whitespace-separated; ids are echoes for humans and
// diffs, the parser ignores their values.
//
// Constraint file: one constraint per row, five numbers per row -- the
// gradient of h_i(theta) = a_i . theta >= 0.
//
// All doubles are written in shortest round-trip form (std::to_chars),
// so write -> read -> write is byte-stable and bit-exact.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "constraints.hpp"
#include "types.hpp"

namespace panelcount::io {

inline constexpr std::string_view dataset_layout = "interval-major,event-minor";

/// Shortest decimal string that round-trips to exactly this double.
inline std::string format_double(double x) {
  std::array<char, 64> buf;
  const std::to_chars_result res =
      std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

inline std::string where(const std::string& name, int line) {
  return name + ":" + std::to_string(line) + ": ";
}

inline std::vector<std::string_view> split_tokens(std::string_view s,
                                                  char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) next = s.size();
    std::string_view tok = s.substr(pos, next - pos);
    // trim spaces and tabs
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t'))
      tok.remove_prefix(1);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' ||
                            tok.back() == '\r'))
      tok.remove_suffix(1);
    if (!tok.empty()) out.push_back(tok);
    pos = next + 1;
    if (next == s.size()) break;
  }
  return out;
}

inline double parse_double(std::string_view tok, const std::string& name,
                           int line) {
  double v = 0.0;
  const std::from_chars_result res =
      std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw DataError(where(name, line) + "expected a number, got '" +
                    std::string(tok) + "'");
  return v;
}

inline int parse_count(std::string_view tok, const std::string& name,
                       int line) {
  int v = 0;
  const std::from_chars_result res =
      std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw DataError(where(name, line) + "expected an integer count, got '" +
                    std::string(tok) + "'");
  if (v < 0)
    throw DataError(where(name, line) + "counts must be nonnegative, got " +
                    std::to_string(v));
  return v;
}

}  // namespace detail

/// Serialize a dataset in the documented format.
inline std::string dataset_to_string(const PanelDataset& data) {
  data.validate();
  std::string out = "#schedule: ";
  for (std::size_t i = 0; i < data.schedule.taus.size(); ++i) {
    if (i > 0) out += ",";
    out += format_double(data.schedule.taus[i]);
  }
  out += "\n#layout: ";
  out += dataset_layout;
  out += "\n";
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    out += std::to_string(i + 1);
    for (int v : data.rows[i]) {
      out += " ";
      out += std::to_string(v);
    }
    out += "\n";
  }
  return out;
}

/// Parse the documented dataset format. `name` labels error messages
/// (usually the file path); every parse error carries its line number.
inline PanelDataset parse_dataset(std::istream& in, const std::string& name) {
  PanelDataset data;
  bool have_schedule = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    while (!sv.empty() && (sv.back() == '\r' || sv.back() == '\n'))
      sv.remove_suffix(1);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      if (sv.starts_with("#schedule:")) {
        if (have_schedule)
          throw DataError(detail::where(name, lineno) +
                          "duplicate #schedule header");
        const auto toks = detail::split_tokens(sv.substr(10), ',');
        if (toks.size() < 2)
          throw DataError(detail::where(name, lineno) +
                          "#schedule needs at least two observation times");
        for (std::string_view t : toks)
          data.schedule.taus.push_back(detail::parse_double(t, name, lineno));
        try {
          data.schedule.validate();
        } catch (const std::invalid_argument& e) {
          throw DataError(detail::where(name, lineno) + e.what());
        }
        have_schedule = true;
      } else if (sv.starts_with("#layout:")) {
        const auto toks = detail::split_tokens(sv.substr(8), '\n');
        if (toks.size() != 1 || toks[0] != dataset_layout)
          throw DataError(detail::where(name, lineno) +
                          "unsupported layout (expected '" +
                          std::string(dataset_layout) + "')");
      }
      continue;  // other # lines are comments
    }
    if (!have_schedule)
      throw DataError(detail::where(name, lineno) +
                      "data row before #schedule header");
    const auto toks = detail::split_tokens(sv, ' ');
    const std::size_t want = static_cast<std::size_t>(
        data.schedule.n_cells());
    if (toks.size() != want + 1)
      throw DataError(detail::where(name, lineno) + "expected subject id + " +
                      std::to_string(want) + " counts, got " +
                      std::to_string(toks.size()) + " fields");
    CountVector row(want);
    for (std::size_t c = 0; c < want; ++c)
      row[c] = detail::parse_count(toks[c + 1], name, lineno);
    data.rows.push_back(std::move(row));
  }
  if (!have_schedule)
    throw DataError(name + ": missing #schedule header");
  if (data.rows.empty())
    throw DataError(name + ": no data rows");
  return data;
}

inline PanelDataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open for reading");
  return parse_dataset(in, path);
}

inline void write_dataset(const std::string& path, const PanelDataset& data) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline mangling
  if (!out) throw DataError(path + ": cannot open for writing");
  out << dataset_to_string(data);
  if (!out) throw DataError(path + ": write failed");
}

/// Parse a constraint matrix: r rows of five numbers, `#` comments.
inline ConstraintSet parse_constraints(std::istream& in,
                                       const std::string& name) {
  std::vector<std::array<double, n_params>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    if (sv.empty() || sv.front() == '#') continue;
    const auto toks = detail::split_tokens(sv, ' ');
    if (toks.size() != n_params)
      throw DataError(detail::where(name, lineno) + "expected " +
                      std::to_string(n_params) + " numbers, got " +
                      std::to_string(toks.size()));
    std::array<double, n_params> row;
    for (int c = 0; c < n_params; ++c)
      row[static_cast<std::size_t>(c)] =
          detail::parse_double(toks[static_cast<std::size_t>(c)], name,
                               lineno);
    rows.push_back(row);
  }
  if (rows.empty()) throw DataError(name + ": no constraint rows");
  Eigen::MatrixXd a(rows.size(), n_params);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < n_params; ++c)
      a(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  try {
    return ConstraintSet(std::move(a));
  } catch (const std::invalid_argument& e) {
    throw DataError(name + ": " + e.what());
  }
}

inline ConstraintSet read_constraints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open for reading");
  return parse_constraints(in, path);
}

/// Write any report text (already formatted) to a file.
inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << content;
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace panelcount::io
