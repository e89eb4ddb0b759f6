#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>

namespace grdo {

inline constexpr float kHalfMax = 65504.0f;

// IEEE 754 binary32 -> binary16, round to nearest even. Handles subnormals,
// overflow to infinity, and NaN payload truncation.
inline uint16_t float_to_half(float f) {
  const uint32_t x = std::bit_cast<uint32_t>(f);
  const uint16_t sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
  uint32_t mant = x & 0x007FFFFFu;
  const uint32_t exp_f = (x >> 23) & 0xFFu;
  if (exp_f == 0xFFu) {  // inf / nan
    return sign | 0x7C00u | (mant ? (0x200u | (mant >> 13)) : 0u);
  }
  const int32_t exp_h = static_cast<int32_t>(exp_f) - 127 + 15;
  if (exp_h >= 0x1F) return sign | 0x7C00u;  // overflow -> inf
  if (exp_h <= 0) {
    if (exp_h < -10) return sign;  // rounds to zero
    mant |= 0x00800000u;           // make leading 1 explicit
    const uint32_t shift = static_cast<uint32_t>(14 - exp_h);
    uint16_t h = static_cast<uint16_t>(mant >> shift);
    const uint32_t rem = mant & ((1u << shift) - 1);
    const uint32_t mid = 1u << (shift - 1);
    if (rem > mid || (rem == mid && (h & 1u))) ++h;
    return sign | h;
  }
  uint16_t h =
      static_cast<uint16_t>(sign | (exp_h << 10) | static_cast<int32_t>(mant >> 13));
  const uint32_t rem = mant & 0x1FFFu;
  // Round up; a carry out of the mantissa correctly bumps the exponent.
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return h;
}

inline float half_to_float(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  const uint32_t exp = (h >> 10) & 0x1Fu;
  const uint32_t mant = h & 0x3FFu;
  uint32_t f;
  if (exp == 0) {
    if (mant == 0) {
      f = sign;
    } else {  // subnormal: renormalize
      uint32_t m = mant;
      int e = 0;
      while (!(m & 0x400u)) {
        m <<= 1;
        ++e;
      }
      f = sign | ((112u - e) << 23) | ((m & 0x3FFu) << 13);
    }
  } else if (exp == 0x1Fu) {
    f = sign | 0x7F800000u | (mant << 13);
  } else {
    f = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(f);
}

// Clamp to the representable half range, then round-trip through f16.
inline float half_round_trip(float f) {
  return half_to_float(float_to_half(std::clamp(f, -kHalfMax, kHalfMax)));
}

}  // namespace grdo
