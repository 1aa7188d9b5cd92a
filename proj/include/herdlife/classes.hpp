#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "herdlife/error.hpp"

namespace herdlife {

enum class HlClass : int { Low = 0, Medium = 1, High = 2 };

inline constexpr std::array<std::string_view, 3> kClassNames = {"low", "medium", "high"};

struct ClassThresholds {
  double low = 2158.0;   // low iff days < low
  double high = 2997.0;  // high iff days > high
};

/// low: days < 2158; medium: 2158..2997 inclusive; high: days > 2997.
inline HlClass hl_to_class(double days, const ClassThresholds& t = {}) {
  if (!(days >= 0.0)) throw UsageError("herd life must be non-negative");
  if (!(t.low < t.high)) throw UsageError("class thresholds must satisfy low < high");
  if (days < t.low) return HlClass::Low;
  if (days > t.high) return HlClass::High;
  return HlClass::Medium;
}

inline std::string_view class_name(HlClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

inline HlClass class_from_index(int index) {
  if (index < 0 || index > 2) throw UsageError("class index " + std::to_string(index) + " out of range");
  return static_cast<HlClass>(index);
}

}  // namespace herdlife
