#pragma once

#include <cmath>
#include <cstdint>

namespace v2xlab {

/// Simulation time in integer nanoseconds since scenario start.
using SimTime = std::int64_t;

inline constexpr SimTime kNanosPerSecond = 1'000'000'000;
inline constexpr SimTime kNanosPerMilli = 1'000'000;

constexpr SimTime from_seconds(double s) {
  return static_cast<SimTime>(s * 1e9 + (s >= 0 ? 0.5 : -0.5));
}

constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e9; }

constexpr SimTime from_millis(std::int64_t ms) { return ms * kNanosPerMilli; }

}  // namespace v2xlab
