#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "surge/errors.hpp"

namespace surge {

// All timestamps in the toolkit are UTC epoch seconds on hourly boundaries.
using UtcTime = std::int64_t;

constexpr std::int64_t kSecondsPerHour = 3600;

namespace detail {

// Civil-from-days / days-from-civil (proleptic Gregorian), Hinnant's algorithm.
inline std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

}  // namespace detail

inline UtcTime make_utc(int year, unsigned month, unsigned day, unsigned hour = 0,
                        unsigned minute = 0, unsigned second = 0) {
  return detail::days_from_civil(year, month, day) * 86400 +
         static_cast<std::int64_t>(hour) * 3600 + minute * 60 + second;
}

// Accepts "YYYY-MM-DDTHH:MM:SS[Z]", "YYYY-MM-DDTHH:MM[Z]", "YYYY-MM-DD HH:MM"
// (the tides API form) and plain "YYYY-MM-DD".
inline UtcTime parse_utc(const std::string& text) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int n = 0;
  if (std::sscanf(text.c_str(), "%d-%u-%u%*1[T ]%u:%u:%u%n", &y, &mo, &d, &h, &mi, &s, &n) == 6 ||
      std::sscanf(text.c_str(), "%d-%u-%u%*1[T ]%u:%u%n", &y, &mo, &d, &h, &mi, &n) == 5 ||
      std::sscanf(text.c_str(), "%d-%u-%u%n", &y, &mo, &d, &n) == 3) {
    std::string rest = text.substr(n);
    if (!rest.empty() && rest != "Z") {
      throw parse_error("unparseable timestamp: '" + text + "'");
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) {
      throw parse_error("timestamp field out of range: '" + text + "'");
    }
    return make_utc(y, mo, d, h, mi, s);
  }
  throw parse_error("unparseable timestamp: '" + text + "'");
}

inline std::string format_utc(UtcTime t) {
  std::int64_t days = t / 86400;
  std::int64_t sod = t % 86400;
  if (sod < 0) {
    sod += 86400;
    days -= 1;
  }
  int y;
  unsigned mo, d;
  detail::civil_from_days(days, y, mo, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", y, mo, d,
                static_cast<long long>(sod / 3600), static_cast<long long>((sod % 3600) / 60),
                static_cast<long long>(sod % 60));
  return buf;
}

// "YYYYMMDD HH:MM", the begin_date/end_date form of the tides API.
inline std::string format_noaa(UtcTime t) {
  std::int64_t days = t / 86400;
  std::int64_t sod = t % 86400;
  if (sod < 0) {
    sod += 86400;
    days -= 1;
  }
  int y;
  unsigned mo, d;
  detail::civil_from_days(days, y, mo, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d%02u%02u %02lld:%02lld", y, mo, d,
                static_cast<long long>(sod / 3600), static_cast<long long>((sod % 3600) / 60));
  return buf;
}

}  // namespace surge
