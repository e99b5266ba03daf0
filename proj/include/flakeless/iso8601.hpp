#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "flakeless/error.hpp"

namespace flakeless {

/// "YYYY-MM-DDTHH:MM:SS.mmmZ"
inline std::string format_iso8601_utc(std::uint64_t unix_millis) {
  using namespace std::chrono;
  const sys_time<milliseconds> tp{milliseconds(unix_millis)};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02ld:%02ld:%02lld.%03lldZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<long>(hms.hours().count()),
                static_cast<long>(hms.minutes().count()),
                static_cast<long long>(hms.seconds().count()),
                static_cast<long long>(hms.subseconds().count()));
  return buf;
}

/// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" and
/// "YYYY-MM-DDTHH:MM:SS.mmm", each optionally followed by 'Z'. Always UTC.
inline std::uint64_t parse_iso8601_utc(std::string_view text) {
  auto fail = [&] {
    return Error(ErrorCode::kInvalidArgument,
                 "expected an ISO-8601 UTC time such as 2024-01-01T00:00:00Z, got '" +
                     std::string(text) + "'");
  };
  std::string s(text);
  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.pop_back();
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, sec = 0, ms = 0;
  int consumed = 0;
  if (s.size() == 10) {
    if (std::sscanf(s.c_str(), "%4d-%2u-%2u%n", &y, &mo, &d, &consumed) != 3) throw fail();
  } else if (s.size() == 19) {
    if (std::sscanf(s.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%n", &y, &mo, &d, &h, &mi, &sec,
                    &consumed) != 6) {
      throw fail();
    }
  } else if (s.size() == 23) {
    if (std::sscanf(s.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u.%3u%n", &y, &mo, &d, &h, &mi, &sec, &ms,
                    &consumed) != 7) {
      throw fail();
    }
  } else {
    throw fail();
  }
  if (consumed != static_cast<int>(s.size())) throw fail();

  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59 || y < 1970) throw fail();
  const auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} + milliseconds{ms};
  return static_cast<std::uint64_t>(tp.time_since_epoch().count());
}

}  // namespace flakeless
