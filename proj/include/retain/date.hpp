#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace retain {

/// Calendar date at day granularity, stored as days since 1970-01-01.
/// All label windows and feature lookbacks are day-denominated, so plain
/// integer arithmetic on epoch days is the native operation.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::int32_t epoch_days) : days_(epoch_days) {}
  Date(int year, unsigned month, unsigned day);

  // Strict ISO-8601 (YYYY-MM-DD). Rejects out-of-calendar dates like 2019-13-40.
  static std::optional<Date> parse(std::string_view iso);
  std::string to_string() const;

  constexpr std::int32_t epoch_days() const { return days_; }
  constexpr Date plus_days(int n) const { return Date(days_ + n); }
  // Calendar-aware; day-of-month clamps to the target month's last day.
  Date plus_months(int n) const;

  friend constexpr auto operator<=>(Date a, Date b) = default;

 private:
  std::int32_t days_ = 0;
};

constexpr int operator-(Date a, Date b) { return a.epoch_days() - b.epoch_days(); }

/// Inclusive date interval [start, end].
struct DateRange {
  Date start;
  Date end;

  constexpr bool contains(Date d) const { return start <= d && d <= end; }
  constexpr int span_days() const { return end - start; }
  constexpr bool valid() const { return start <= end; }
};

}  // namespace retain
