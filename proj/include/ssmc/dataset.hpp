#pragma once

// Raw model inputs and their CSV form.
//
// Regression-type data: header row with `y`, `x1..xp` and optionally
// `group` (1-based integer labels). Factor data: columns `y1..yp`, no `y`.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <cstring>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ssmc/error.hpp"
#include "ssmc/linalg.hpp"

namespace ssmc {

struct Dataset {
  Vector y;
  Matrix X;
  std::optional<std::vector<int>> group;  // 1-based labels
  int n_groups = 0;                       // J; 0 when ungrouped

  std::size_t n() const noexcept { return y.size(); }
  std::size_t p() const noexcept { return X.cols(); }

  /// Throws DimMismatch / EmptyData / BadGroupIndex on a malformed dataset.
  void validate() const {
    if (y.empty()) throw EmptyData();
    if (X.rows() != y.size()) throw DimMismatch("X row count differs from length of y");
    if (group) {
      if (group->size() != y.size())
        throw DimMismatch("group vector length differs from length of y");
      if (n_groups < 1) throw BadGroupIndex("grouped dataset needs J >= 1");
      for (int g : *group)
        if (g < 1 || g > n_groups)
          throw BadGroupIndex("group label " + std::to_string(g) + " outside 1.." +
                              std::to_string(n_groups));
    }
  }
};

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("not a number: '" + std::string(s) + "'");
  return v;
}

/// 64-bit FNV-1a over the bit patterns of y, X and group.
inline std::uint64_t checksum(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  auto mix_double = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    mix(bits);
  };
  mix(d.y.size());
  mix(d.X.cols());
  for (double v : d.y) mix_double(v);
  for (double v : d.X.data()) mix_double(v);
  if (d.group)
    for (int g : *d.group) mix(static_cast<std::uint64_t>(g));
  return h;
}

inline std::uint64_t checksum(const Matrix& Y) {
  Dataset d;
  d.X = Y;
  return checksum(d);
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV input");
  for (auto f : split_csv_line(line)) {
    if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
    t.header.emplace_back(f);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != t.header.size())
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_double(f));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

inline Dataset read_dataset_csv(std::istream& in) {
  const auto t = detail::read_csv(in);
  const int ycol = t.column("y");
  if (ycol < 0) throw ParseError("dataset CSV has no 'y' column");
  std::vector<int> xcols;
  for (int j = 1;; ++j) {
    const int c = t.column("x" + std::to_string(j));
    if (c < 0) break;
    xcols.push_back(c);
  }
  const int gcol = t.column("group");
  Dataset d;
  const std::size_t n = t.rows.size();
  d.y.resize(n);
  d.X = Matrix(n, xcols.size());
  if (gcol >= 0) d.group.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = t.rows[i][ycol];
    for (std::size_t j = 0; j < xcols.size(); ++j) d.X(i, j) = t.rows[i][xcols[j]];
    if (gcol >= 0) {
      const double g = t.rows[i][gcol];
      if (g != std::floor(g)) throw BadGroupIndex("non-integer group label");
      (*d.group)[i] = static_cast<int>(g);
      d.n_groups = std::max(d.n_groups, static_cast<int>(g));
    }
  }
  d.validate();
  return d;
}

inline Dataset read_dataset_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return read_dataset_csv(in);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& d) {
  out << "y";
  for (std::size_t j = 1; j <= d.p(); ++j) out << ",x" << j;
  if (d.group) out << ",group";
  out << '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    out << format_double(d.y[i]);
    for (double v : d.X.row(i)) out << ',' << format_double(v);
    if (d.group) out << ',' << (*d.group)[i];
    out << '\n';
  }
}

/// Multivariate observations, one row per observation.
inline Matrix read_factor_csv(std::istream& in) {
  const auto t = detail::read_csv(in);
  if (t.column("y") >= 0) throw ParseError("factor CSV must not have a 'y' column");
  std::vector<int> cols;
  for (int j = 1;; ++j) {
    const int c = t.column("y" + std::to_string(j));
    if (c < 0) break;
    cols.push_back(c);
  }
  if (cols.empty()) throw ParseError("factor CSV has no y1..yp columns");
  if (t.rows.empty()) throw EmptyData();
  Matrix Y(t.rows.size(), cols.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) Y(i, j) = t.rows[i][cols[j]];
  return Y;
}

inline Matrix read_factor_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return read_factor_csv(in);
}

inline void write_factor_csv(std::ostream& out, const Matrix& Y) {
  for (std::size_t j = 1; j <= Y.cols(); ++j) out << (j > 1 ? "," : "") << 'y' << j;
  out << '\n';
  for (std::size_t i = 0; i < Y.rows(); ++i) {
    const auto r = Y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j)
      out << (j ? "," : "") << format_double(r[j]);
    out << '\n';
  }
}

}  // namespace ssmc
