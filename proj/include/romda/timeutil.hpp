#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "romda/error.hpp"

namespace romda {

/// Epochs are seconds since 2000-01-01T00:00:00 UTC on the proleptic
/// Gregorian calendar, without leap seconds.
namespace timeutil {

inline constexpr std::chrono::sys_days kReferenceDay =
    std::chrono::sys_days{std::chrono::year{2000} / std::chrono::January / 1};

inline constexpr std::int64_t kSecondsPerDay = 86400;

struct CivilTime {
  int year = 2000;
  unsigned month = 1;
  unsigned day = 1;
  int hour = 0;
  int minute = 0;
  double second = 0.0;
};

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline double from_civil(const CivilTime& c) {
  using namespace std::chrono;
  const year_month_day ymd{year{c.year}, month{c.month}, day{c.day}};
  require(ymd.ok(), ErrorCode::ParseError, "invalid calendar date");
  const auto days = (sys_days{ymd} - kReferenceDay).count();
  return static_cast<double>(days) * kSecondsPerDay + c.hour * 3600.0 + c.minute * 60.0 + c.second;
}

inline CivilTime to_civil(std::int64_t epoch) {
  using namespace std::chrono;
  const std::int64_t days = floor_div(epoch, kSecondsPerDay);
  const std::int64_t sod = epoch - days * kSecondsPerDay;
  const year_month_day ymd{kReferenceDay + std::chrono::days{days}};
  CivilTime c;
  c.year = static_cast<int>(ymd.year());
  c.month = static_cast<unsigned>(ymd.month());
  c.day = static_cast<unsigned>(ymd.day());
  c.hour = static_cast<int>(sod / 3600);
  c.minute = static_cast<int>((sod % 3600) / 60);
  c.second = static_cast<double>(sod % 60);
  return c;
}

/// Universal time of day in hours, [0, 24).
inline double ut_hours(double epoch) {
  double sod = std::fmod(epoch, static_cast<double>(kSecondsPerDay));
  if (sod < 0.0) sod += kSecondsPerDay;
  return sod / 3600.0;
}

/// Zero-based fractional day of year: 0.0 at Jan 1 00:00 UTC.
inline double day_of_year(double epoch) {
  using namespace std::chrono;
  const auto days = static_cast<std::int64_t>(std::floor(epoch / kSecondsPerDay));
  const year_month_day ymd{kReferenceDay + std::chrono::days{days}};
  const sys_days jan1{ymd.year() / January / 1};
  const auto ordinal = (sys_days{ymd} - jan1).count();
  return static_cast<double>(ordinal) + ut_hours(epoch) / 24.0;
}

/// "YYYY-MM-DDTHH:MM:SSZ" for integral epochs.
inline std::string format_iso(std::int64_t epoch) {
  const auto c = to_civil(epoch);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", c.year, c.month, c.day, c.hour, c.minute,
                static_cast<int>(c.second));
  return buf;
}

/// Accepts ISO-8601 "YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z]" or a plain number of
/// seconds since the reference epoch.
inline double parse_epoch(std::string_view text) {
  std::string s(text);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
  std::size_t start = s.find_first_not_of(" \t");
  require(start != std::string::npos, ErrorCode::ParseError, "empty epoch field");
  s = s.substr(start);

  const bool iso = s.size() >= 10 && s[4] == '-' && s[7] == '-';
  if (!iso) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError, "cannot parse epoch '" + s + "'");
    }
    require(used == s.size(), ErrorCode::ParseError, "trailing characters in epoch '" + s + "'");
    return v;
  }
  if (s.back() == 'Z') s.pop_back();
  CivilTime c;
  int consumed = 0;
  unsigned mo = 0, dd = 0;
  if (std::sscanf(s.c_str(), "%d-%u-%u%n", &c.year, &mo, &dd, &consumed) != 3)
    fail(ErrorCode::ParseError, "cannot parse date in '" + s + "'");
  c.month = mo;
  c.day = dd;
  std::string rest = s.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty()) {
    require(rest[0] == 'T' || rest[0] == ' ', ErrorCode::ParseError, "bad date/time separator in '" + s + "'");
    rest = rest.substr(1);
    int hh = 0, mi = 0;
    double ss = 0.0;
    int n = std::sscanf(rest.c_str(), "%d:%d:%lf", &hh, &mi, &ss);
    require(n >= 2, ErrorCode::ParseError, "cannot parse time in '" + s + "'");
    require(hh >= 0 && hh < 24 && mi >= 0 && mi < 60 && ss >= 0.0 && ss < 61.0, ErrorCode::ParseError,
            "time out of range in '" + s + "'");
    c.hour = hh;
    c.minute = mi;
    c.second = ss;
  }
  return from_civil(c);
}

}  // namespace timeutil
}  // namespace romda
