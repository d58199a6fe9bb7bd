#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace dift {

/// Global scalar mode. Training runs in single precision; every
/// gradient-check path runs in double, where central differences are
/// trustworthy.
enum class Precision { single_prec, double_prec };

inline const char* to_string(Precision p) {
  return p == Precision::single_prec ? "single" : "double";
}

/// Thrown when inputs violate an operation's contract (shape mismatch,
/// bad ranges, malformed config).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a computation produces or encounters invalid numerics
/// (NaN/Inf, divergence, overflow).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

template <typename T>
inline bool finite(T v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace dift
