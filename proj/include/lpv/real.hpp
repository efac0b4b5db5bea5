#pragma once

// Scalar precision is chosen per build target: lpv_f64 defines LPV_DOUBLE for
// gradient checking, lpv_f32 trains in single precision. Each precision lives
// in its own inline namespace so both libraries can be linked into one binary.

#ifdef LPV_DOUBLE
#define LPV_NS f64
#else
#define LPV_NS f32
#endif

namespace lpv::inline LPV_NS {

#ifdef LPV_DOUBLE
using Real = double;
#else
using Real = float;
#endif

// Additive stand-in for -inf in attention masks.
inline constexpr Real kMaskedValue = Real(-1e9);

}  // namespace lpv::inline LPV_NS
