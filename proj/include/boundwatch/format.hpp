#pragma once

#include <charconv>
#include <cstdint>
#include <limits>
#include <string>

namespace boundwatch {

// Shortest round-trip decimal form via std::to_chars: locale-free and
// deterministic, so emitted CSV/JSON bytes never depend on the host locale
// or thread count. Infinities spelled out for CSV friendliness.
inline std::string fmt_double(double v) {
  if (v != v) return "nan";
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_u64(std::uint64_t v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace boundwatch
