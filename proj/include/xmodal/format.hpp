#pragma once

#include <cstdio>
#include <string>

namespace xmodal {

// Doubles in CSV output always go through this: %.17g round-trips exactly, so
// identical runs produce byte-identical files.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace xmodal
