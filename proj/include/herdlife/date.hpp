#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "herdlife/error.hpp"

namespace herdlife {

/// Calendar date stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::int32_t days_since_epoch) : days_(days_since_epoch) {}

  static Date from_ymd(int year, unsigned month, unsigned day) {
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) throw DataError("invalid calendar date");
    return Date(static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count()));
  }

  /// Strict YYYY-MM-DD; returns nullopt on anything else.
  static std::optional<Date> parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    int year = 0;
    unsigned month = 0, day = 0;
    auto field = [&](std::size_t pos, std::size_t len, auto& out) {
      const char* first = text.data() + pos;
      const char* last = first + len;
      auto [ptr, ec] = std::from_chars(first, last, out);
      return ec == std::errc{} && ptr == last;
    };
    if (!field(0, 4, year) || !field(5, 2, month) || !field(8, 2, day)) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) return std::nullopt;
    return Date(static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count()));
  }

  std::string iso() const {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days_}}};
    char buffer[16];
    std::snprintf(buffer, sizeof buffer, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buffer;
  }

  constexpr std::int32_t days() const noexcept { return days_; }
  constexpr Date plus_days(std::int64_t n) const { return Date(static_cast<std::int32_t>(days_ + n)); }

  friend constexpr auto operator<=>(Date, Date) = default;
  friend constexpr std::int64_t operator-(Date a, Date b) { return std::int64_t{a.days_} - b.days_; }

 private:
  std::int32_t days_ = 0;
};

/// Exact number of days from birth to culling.
inline std::int64_t compute_hl_days(Date birth, Date culling) {
  if (culling < birth) {
    throw DataError("culling date " + culling.iso() + " precedes birth date " + birth.iso());
  }
  return culling - birth;
}

/// Productive life: herd life minus age at first calving.
inline std::int64_t pl_from_hl(std::int64_t hl_days, std::int64_t age_at_first_calving_days) {
  if (age_at_first_calving_days < 0 || age_at_first_calving_days > hl_days) {
    throw UsageError("age at first calving must lie in [0, hl_days]");
  }
  return hl_days - age_at_first_calving_days;
}

}  // namespace herdlife
