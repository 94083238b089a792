#include "bikeod/timegrid.hpp"

#include <charconv>

#include <fmt/core.h>

#include "bikeod/error.hpp"

namespace bikeod {
namespace {

int parse_int(std::string_view text, std::size_t pos, std::size_t len, std::string_view whole) {
  int v = 0;
  if (pos + len > text.size()) throw DataError(fmt::format("bad timestamp '{}'", whole));
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
  if (ec != std::errc() || ptr != text.data() + pos + len) {
    throw DataError(fmt::format("bad timestamp '{}'", whole));
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Date parse_date(std::string_view text) {
  text = trim(text);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    throw DataError(fmt::format("bad date '{}'", text));
  }
  using namespace std::chrono;
  const year_month_day ymd{year{parse_int(text, 0, 4, text)},
                           month{static_cast<unsigned>(parse_int(text, 5, 2, text))},
                           day{static_cast<unsigned>(parse_int(text, 8, 2, text))}};
  if (!ymd.ok()) throw DataError(fmt::format("invalid calendar date '{}'", text));
  return Date{ymd};
}

std::int64_t parse_minutes(std::string_view text) {
  text = trim(text);
  const Date d = parse_date(text.substr(0, std::min<std::size_t>(10, text.size())));
  int hh = 0, mm = 0;
  if (text.size() > 10) {
    if (text[10] != 'T' && text[10] != ' ') throw DataError(fmt::format("bad timestamp '{}'", text));
    hh = parse_int(text, 11, 2, text);
    if (text.size() > 13) {
      if (text[13] != ':') throw DataError(fmt::format("bad timestamp '{}'", text));
      mm = parse_int(text, 14, 2, text);
    }
  }
  if (hh > 23 || mm > 59) throw DataError(fmt::format("bad time of day in '{}'", text));
  return (static_cast<std::int64_t>(d.time_since_epoch().count()) * 24 + hh) * 60 + mm;
}

Hour parse_hour(std::string_view text) {
  const std::int64_t m = parse_minutes(text);
  return Hour{m >= 0 ? m / 60 : -((-m + 59) / 60)};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

std::string format_hour(Hour h) {
  return fmt::format("{}T{:02d}:00", format_date(date_of(h)), hour_of_day(h));
}

Date date_of(Hour h) {
  const std::int64_t days = h.value >= 0 ? h.value / 24 : -((-h.value + 23) / 24);
  return Date{std::chrono::days{days}};
}

int hour_of_day(Hour h) { return static_cast<int>(((h.value % 24) + 24) % 24); }

Hour start_of(Date d) { return Hour{static_cast<std::int64_t>(d.time_since_epoch().count()) * 24}; }

int weekday_index(Date d) {
  return static_cast<int>(std::chrono::weekday{d}.iso_encoding()) - 1;
}

std::size_t HourGrid::index(Hour h) const {
  if (!contains(h)) {
    throw DataError(fmt::format("timestamp {} outside grid [{}, {})", format_hour(h),
                                format_hour(start), format_hour(end())));
  }
  return static_cast<std::size_t>(h - start);
}

}  // namespace bikeod
