#pragma once

#include <cmath>
#include <cstdint>

#include "dift/tensor.hpp"

namespace dift {

/// Dynamic absmax quantization spec. bits = 16 means passthrough.
struct QuantSpec {
  int bits = 16;

  bool passthrough() const { return bits == 16; }
  void validate() const {
    require(bits == 4 || bits == 6 || bits == 8 || bits == 16,
            "QuantSpec: bits must be one of {4, 6, 8, 16}");
  }
};

/// Symmetric per-tensor quantize/dequantize roundtrip:
/// s = max|x| / (2^(bits-1) - 1), q = clamp(round(x/s)), returns q*s.
/// bits = 16 returns the input unchanged, as does an all-zero tensor (s = 0).
template <typename T>
Tensor<T> absmax_quantize(const Tensor<T>& x, const QuantSpec& spec) {
  spec.validate();
  if (spec.passthrough()) return x;
  T amax = 0;
  for (std::size_t i = 0; i < x.size(); ++i) amax = std::max(amax, std::abs(x.at(i)));
  if (amax == T(0)) return x;
  const std::int64_t qmax = (std::int64_t{1} << (spec.bits - 1)) - 1;
  const T s = amax / static_cast<T>(qmax);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::int64_t q = std::llround(static_cast<double>(x.at(i) / s));
    q = std::clamp(q, -qmax, qmax);
    out.at(i) = static_cast<T>(q) * s;
  }
  return out;
}

}  // namespace dift
