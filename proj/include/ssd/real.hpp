#pragma once

// The core library is compiled twice: once with 64-bit reals (the default,
// used by the test suite) and once with SSD_REAL_FLOAT defined for faster
// experiment runs. Each build lives in its own inline namespace so both can
// be linked into the same executable.

#if defined(SSD_REAL_FLOAT)
#define SSD_PRECISION_NS f32
#else
#define SSD_PRECISION_NS f64
#endif

namespace ssd {
inline namespace SSD_PRECISION_NS {

#if defined(SSD_REAL_FLOAT)
using Real = float;
inline constexpr const char* kPrecisionName = "f32";
#else
using Real = double;
inline constexpr const char* kPrecisionName = "f64";
#endif

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
