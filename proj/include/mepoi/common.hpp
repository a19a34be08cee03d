#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mepoi {

// Default scalar type for model parameters and training math. Geometry and
// statistics code stays in double regardless; gradient-check suites
// instantiate the templated core with double explicitly.
#ifdef MEPOI_REAL64
using real = double;
#else
using real = float;
#endif

using i64 = std::int64_t;

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace mepoi
