#pragma once

#include <span>
#include <vector>

#include "dift/ops.hpp"

namespace dift {

/// Positions and base angle for rotary embedding; one per forward pass.
struct RopeContext {
  std::vector<int> positions;
  double theta = 10000.0;
};

/// Rotary position encoding: channel pairs (2i, 2i+1) are rotated by
/// pos * theta^(-2i/d). Orthogonal per pair, so norms are preserved and
/// q.k depends on positions only through their difference.
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const int> positions, double theta,
                     Graph<T>* tape = nullptr) {
  require(x.rank() == 2, "rope_apply: rank-2 input required");
  const std::size_t N = x.rows(), D = x.cols();
  require(D % 2 == 0, "rope_apply: channel count must be even");
  require(positions.size() == N, "rope_apply: one position per row required");
  for (int p : positions) require(p >= 0, "rope_apply: positions must be nonnegative");
  require(theta > 0.0, "rope_apply: theta must be positive");

  // rotation table, computed in double
  std::vector<T> cs(N * D / 2), sn(N * D / 2);
  for (std::size_t i = 0; i < D / 2; ++i) {
    const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(D));
    for (std::size_t r = 0; r < N; ++r) {
      const double a = static_cast<double>(positions[r]) * freq;
      cs[r * (D / 2) + i] = static_cast<T>(std::cos(a));
      sn[r * (D / 2) + i] = static_cast<T>(std::sin(a));
    }
  }

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* od = out.data();
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t i = 0; i < D / 2; ++i) {
      const T c = cs[r * (D / 2) + i], s = sn[r * (D / 2) + i];
      const T x0 = xd[r * D + 2 * i], x1 = xd[r * D + 2 * i + 1];
      od[r * D + 2 * i] = x0 * c - x1 * s;
      od[r * D + 2 * i + 1] = x0 * s + x1 * c;
    }
  detail::check_finite_out(out, "rope_apply");
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad())
    tape->record([x, out, cs = std::move(cs), sn = std::move(sn), N, D]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t r = 0; r < N; ++r)
        for (std::size_t i = 0; i < D / 2; ++i) {
          const T c = cs[r * (D / 2) + i], s = sn[r * (D / 2) + i];
          const T g0 = g[r * D + 2 * i], g1 = g[r * D + 2 * i + 1];
          gx[r * D + 2 * i] += g0 * c + g1 * s;
          gx[r * D + 2 * i + 1] += -g0 * s + g1 * c;
        }
    });
  return out;
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, const RopeContext& ctx, Graph<T>* tape = nullptr) {
  return rope_apply(x, std::span<const int>(ctx.positions), ctx.theta, tape);
}

}  // namespace dift
