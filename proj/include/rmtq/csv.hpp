#pragma once

#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>

namespace rmtq::csv {

/// Decimal text with 12 significant digits ("%.12g"); non-finite values as nan/inf.
inline std::string number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

using Cell = std::variant<double, long long, std::string_view>;

inline std::string cell_text(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return number(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  return std::string(std::get<std::string_view>(c));
}

inline void row(std::ostream& os, std::initializer_list<Cell> cells) {
  bool first = true;
  for (const auto& c : cells) {
    if (!first) os << ',';
    os << cell_text(c);
    first = false;
  }
  os << '\n';
}

inline void header(std::ostream& os, std::initializer_list<std::string_view> names) {
  bool first = true;
  for (auto n : names) {
    if (!first) os << ',';
    os << n;
    first = false;
  }
  os << '\n';
}

}  // namespace rmtq::csv
