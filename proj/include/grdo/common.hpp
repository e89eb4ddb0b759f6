#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

static_assert(std::endian::native == std::endian::little,
              "grdo assumes a little-endian host");

namespace grdo {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// d/dx sigmoid(x) expressed through the already-computed sigmoid value.
inline double sigmoid_grad_from_value(double s) { return s * (1.0 - s); }

inline double inv_sigmoid(double y) { return std::log(y / (1.0 - y)); }

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

struct CodecError : std::runtime_error {
  explicit CodecError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace grdo
