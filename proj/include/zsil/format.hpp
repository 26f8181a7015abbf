#pragma once

#include <cstdio>
#include <string>

namespace zsil {

/// Shortest round-trip formatting; keeps emitted CSV bytes reproducible.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace zsil
