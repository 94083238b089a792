#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace bikeod {

/// Whole hours since 1970-01-01T00:00 of a naive local clock. All inputs are
/// local-time ISO-8601 without zone offsets, so no DST handling is applied.
struct Hour {
  std::int64_t value = 0;
  friend auto operator<=>(Hour, Hour) = default;
  Hour operator+(std::int64_t h) const { return Hour{value + h}; }
  Hour operator-(std::int64_t h) const { return Hour{value - h}; }
  std::int64_t operator-(Hour o) const { return value - o.value; }
};

using Date = std::chrono::sys_days;

/// Accepts `YYYY-MM-DD[T| ]HH[:MM[:SS]]`. Minutes and seconds are floored
/// into the hour.
Hour parse_hour(std::string_view text);
/// Same formats; returns minutes since the epoch.
std::int64_t parse_minutes(std::string_view text);
std::string format_hour(Hour h);
Date parse_date(std::string_view text);
std::string format_date(Date d);

Date date_of(Hour h);
int hour_of_day(Hour h);
Hour start_of(Date d);
/// 0 = Monday ... 6 = Sunday.
int weekday_index(Date d);

/// Gapless hourly grid [start, start + count).
struct HourGrid {
  Hour start;
  std::size_t count = 0;

  Hour at(std::size_t i) const { return start + static_cast<std::int64_t>(i); }
  Hour end() const { return at(count); }
  bool contains(Hour h) const { return h >= start && h < end(); }
  /// Throws DataError when `h` is outside the grid.
  std::size_t index(Hour h) const;
};

}  // namespace bikeod
