#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "lrvb/core/types.hpp"
#include "lrvb/models/betabin.hpp"
#include "lrvb/models/probit.hpp"
#include "lrvb/models/stochvol.hpp"

namespace lrvb::io {

// A data file that does not exist or cannot be opened.
struct MissingFile : Error {
  using Error::Error;
};

// Surfaced verbatim from the OS.
struct IoError : Error {
  using Error::Error;
};

using Cell = std::variant<double, long long, std::string>;
using Row = std::vector<Cell>;

/// 17 significant digits: parses back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string format_cell(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  return std::get<std::string>(c);
}

inline std::string to_csv(const std::vector<std::string>& header, const std::vector<Row>& rows) {
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
  out += '\n';
  for (const Row& r : rows) {
    if (r.size() != header.size()) throw ConfigError("csv row width does not match the header");
    for (std::size_t j = 0; j < r.size(); ++j) out += (j ? "," : "") + format_cell(r[j]);
    out += '\n';
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": " + std::strerror(errno));
  f << text;
  f.flush();
  if (!f) throw IoError(path + ": " + std::strerror(errno));
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header, const std::vector<Row>& rows) {
  write_text(path, to_csv(header, rows));
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty input");
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw DataError("csv: row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path + ": " + std::strerror(errno));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Table read_csv(const std::string& path) { return parse_csv(read_text(path)); }

inline double parse_double(const std::string& s) {
  if (s.empty()) throw DataError("csv: empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw DataError("csv: not a number: '" + s + "'");
  return v;
}

inline void require_header(const Table& t, const std::vector<std::string>& want, const std::string& what) {
  if (t.header != want) {
    std::string w;
    for (std::size_t j = 0; j < want.size(); ++j) w += (j ? "," : "") + want[j];
    throw DataError(what + ": expected header '" + w + "'");
  }
}

inline models::ProbitData probit_from_table(const Table& t) {
  const std::size_t M = t.header.size() > 0 ? t.header.size() - 1 : 0;
  std::vector<std::string> want{"y"};
  for (std::size_t j = 1; j <= M; ++j) want.push_back("v" + std::to_string(j));
  if (M == 0) throw DataError("probit csv: expected header 'y,v1..vM'");
  require_header(t, want, "probit csv");
  models::ProbitData d;
  const auto N = static_cast<Index>(t.rows.size());
  d.y.resize(N);
  d.V.resize(N, static_cast<Index>(M));
  for (Index i = 0; i < N; ++i) {
    d.y[i] = parse_double(t.rows[i][0]);
    for (std::size_t j = 0; j < M; ++j) d.V(i, static_cast<Index>(j)) = parse_double(t.rows[i][j + 1]);
  }
  d.validate();
  return d;
}

inline models::BetaBinData betabin_from_table(const Table& t) {
  require_header(t, {"n", "y"}, "betabin csv");
  models::BetaBinData d;
  for (const auto& r : t.rows) {
    d.n.push_back(parse_double(r[0]));
    d.y.push_back(parse_double(r[1]));
  }
  d.validate();
  return d;
}

inline models::SVData sv_from_table(const Table& t) {
  require_header(t, {"y"}, "sv csv");
  models::SVData d;
  d.y.resize(static_cast<Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) d.y[static_cast<Index>(i)] = parse_double(t.rows[i][0]);
  d.validate();
  return d;
}

inline models::ProbitData load_probit(const std::string& path) { return probit_from_table(read_csv(path)); }
inline models::BetaBinData load_betabin(const std::string& path) { return betabin_from_table(read_csv(path)); }
inline models::SVData load_sv(const std::string& path) { return sv_from_table(read_csv(path)); }

}  // namespace lrvb::io
