#include "retain/date.hpp"

#include <charconv>
#include <cstdio>

namespace retain {

namespace {

using days_t = std::chrono::days;
using sys_days_t = std::chrono::sys_days;

std::chrono::year_month_day to_ymd(std::int32_t epoch_days) {
  return std::chrono::year_month_day{sys_days_t{days_t{epoch_days}}};
}

}  // namespace

Date::Date(int year, unsigned month, unsigned day) {
  std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                  std::chrono::day{day}};
  days_ = static_cast<std::int32_t>(sys_days_t{ymd}.time_since_epoch().count());
}

std::optional<Date> Date::parse(std::string_view iso) {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [](std::string_view s, auto& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
  };
  if (!num(iso.substr(0, 4), y) || !num(iso.substr(5, 2), m) || !num(iso.substr(8, 2), d))
    return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                  std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date(static_cast<std::int32_t>(sys_days_t{ymd}.time_since_epoch().count()));
}

std::string Date::to_string() const {
  auto ymd = to_ymd(days_);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()));
  return buf;
}

Date Date::plus_months(int n) const {
  auto ymd = to_ymd(days_) + std::chrono::months{n};
  if (!ymd.ok()) ymd = ymd.year() / ymd.month() / std::chrono::last;
  return Date(static_cast<std::int32_t>(sys_days_t{ymd}.time_since_epoch().count()));
}

}  // namespace retain
