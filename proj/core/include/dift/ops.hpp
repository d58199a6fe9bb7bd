#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#include "dift/random.hpp"
#include "dift/tensor.hpp"

namespace dift {

/// Additive-mask sentinel for disallowed positions. Anything at or below
/// this is treated as fully masked.
inline constexpr double kMaskSentinel = -1e9;

namespace kern {

// Raw row-major matmul kernels. Inner loops run over contiguous memory in
// all three layouts so the compiler can vectorize them.

/// c[N,M] = a[N,K] * b[K,M]; accumulates into c when Acc.
template <bool Acc, typename T>
void mm_nn(const T* a, const T* b, T* c, std::size_t N, std::size_t K, std::size_t M) {
  for (std::size_t i = 0; i < N; ++i) {
    T* ci = c + i * M;
    if (!Acc) std::fill(ci, ci + M, T(0));
    const T* ai = a + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = ai[k];
      const T* bk = b + k * M;
      for (std::size_t m = 0; m < M; ++m) ci[m] += aik * bk[m];
    }
  }
}

/// c[N,M] = a[N,K] * b[M,K]^T
template <bool Acc, typename T>
void mm_nt(const T* a, const T* b, T* c, std::size_t N, std::size_t K, std::size_t M) {
  for (std::size_t i = 0; i < N; ++i) {
    const T* ai = a + i * K;
    T* ci = c + i * M;
    for (std::size_t m = 0; m < M; ++m) {
      const T* bm = b + m * K;
      T s = 0;
      for (std::size_t k = 0; k < K; ++k) s += ai[k] * bm[k];
      if (Acc)
        ci[m] += s;
      else
        ci[m] = s;
    }
  }
}

/// c[N,M] = a[K,N]^T * b[K,M]
template <bool Acc, typename T>
void mm_tn(const T* a, const T* b, T* c, std::size_t N, std::size_t K, std::size_t M) {
  if (!Acc) std::fill(c, c + N * M, T(0));
  for (std::size_t k = 0; k < K; ++k) {
    const T* ak = a + k * N;
    const T* bk = b + k * M;
    for (std::size_t i = 0; i < N; ++i) {
      const T v = ak[i];
      T* ci = c + i * M;
      for (std::size_t m = 0; m < M; ++m) ci[m] += v * bk[m];
    }
  }
}

}  // namespace kern

namespace detail {

template <typename T>
inline void check_finite_out(const Tensor<T>& t, const char* op) {
#ifdef DIFT_CHECK_FINITE
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
#else
  (void)t;
  (void)op;
#endif
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace detail

/// Gaussian-initialized tensor, drawn row-major from the given stream.
template <typename T>
Tensor<T> randn(Rng& rng, Shape shape, double stddev = 1.0, double mean = 0.0) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal(mean, stddev));
  return Tensor<T>(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Graph<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  detail::check_finite_out(out, "add");
  const bool needs = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([a, b, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Graph<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
  detail::check_finite_out(out, "sub");
  const bool needs = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([a, b, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  return out;
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Graph<T>* tape = nullptr) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  detail::check_finite_out(out, "mul");
  const bool needs = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([a, b, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
      }
    });
  return out;
}

/// Multiply by a non-learnable constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c, Graph<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
  detail::check_finite_out(out, "scale");
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, c, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T c, Graph<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + c;
  detail::check_finite_out(out, "add_const");
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  return out;
}

/// Multiply by a learnable scalar (1-element tensor). Gradient flows to both
/// the tensor and the scalar.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s, Graph<T>* tape = nullptr) {
  require(s.size() == 1, "mul_scalar: scalar operand must have exactly one element");
  const T sv = s.at(std::size_t{0});
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * sv;
  detail::check_finite_out(out, "mul_scalar");
  const bool needs = a.requires_grad() || s.requires_grad();
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([a, s, out, sv]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
      }
      if (s.requires_grad()) {
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.at(i);
        s.grad()[0] += acc;
      }
    });
  return out;
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& a, Graph<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = std::exp(a.at(i));
  detail::check_finite_out(out, "exp_elem");
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out.at(i);
    });
  return out;
}

/// swish(x) = x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& a, Graph<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a.at(i);
    out.at(i) = x / (T(1) + std::exp(-x));
  }
  detail::check_finite_out(out, "silu");
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T x = a.at(i);
        const T sig = T(1) / (T(1) + std::exp(-x));
        ga[i] += g[i] * sig * (T(1) + x * (T(1) - sig));
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// matrix ops (rank-2)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Graph<T>* tape = nullptr) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
  require(a.cols() == b.rows(), "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  const std::size_t N = a.rows(), K = a.cols(), M = b.cols();
  Tensor<T> out = Tensor<T>::zeros({N, M});
  kern::mm_nn<false>(a.data(), b.data(), out.data(), N, K, M);
  detail::check_finite_out(out, "matmul");
  const bool needs = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([a, b, out, N, K, M]() mutable {
      if (!out.grad_allocated()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) kern::mm_nt<true>(g, b.data(), a.grad().data(), N, M, K);
      if (b.requires_grad()) kern::mm_tn<true>(a.data(), g, b.grad().data(), K, N, M);
    });
  return out;
}

/// a * b^T; used for Q K^T so no transpose is ever materialized.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, Graph<T>* tape = nullptr) {
  require(a.rank() == 2 && b.rank() == 2, "matmul_nt: operands must be rank-2");
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  const std::size_t N = a.rows(), K = a.cols(), M = b.rows();
  Tensor<T> out = Tensor<T>::zeros({N, M});
  kern::mm_nt<false>(a.data(), b.data(), out.data(), N, K, M);
  detail::check_finite_out(out, "matmul_nt");
  const bool needs = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([a, b, out, N, K, M]() mutable {
      if (!out.grad_allocated()) return;
      const T* g = out.grad().data();
      // d a += g * b ; d b += g^T * a
      if (a.requires_grad()) kern::mm_nn<true>(g, b.data(), a.grad().data(), N, M, K);
      if (b.requires_grad()) kern::mm_tn<true>(g, a.data(), b.grad().data(), M, N, K);
    });
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1,
                     Graph<T>* tape = nullptr) {
  require(a.rank() == 2, "slice_cols: rank-2 input required");
  require(c0 < c1 && c1 <= a.cols(), "slice_cols: bad column range");
  const std::size_t R = a.rows(), C = a.cols(), W = c1 - c0;
  Tensor<T> out = Tensor<T>::zeros({R, W});
  for (std::size_t r = 0; r < R; ++r)
    std::memcpy(out.data() + r * W, a.data() + r * C + c0, W * sizeof(T));
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out, c0, R, C, W]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < W; ++j) ga[r * C + c0 + j] += g[r * W + j];
    });
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1,
                     Graph<T>* tape = nullptr) {
  require(a.rank() == 2, "slice_rows: rank-2 input required");
  require(r0 < r1 && r1 <= a.rows(), "slice_rows: bad row range");
  const std::size_t C = a.cols(), H = r1 - r0;
  Tensor<T> out = Tensor<T>::zeros({H, C});
  std::memcpy(out.data(), a.data() + r0 * C, H * C * sizeof(T));
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out, r0, C, H]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < H * C; ++i) ga[r0 * C + i] += g[i];
    });
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Graph<T>* tape = nullptr) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.rows() == R, "concat_cols: row counts differ");
    C += p.cols();
    needs = needs || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::zeros({R, C});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t W = p.cols();
    for (std::size_t r = 0; r < R; ++r)
      std::memcpy(out.data() + r * C + off, p.data() + r * W, W * sizeof(T));
    off += W;
  }
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([parts, out, R, C]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        const std::size_t W = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t j = 0; j < W; ++j) gp[r * W + j] += g[r * C + off + j];
        }
        off += W;
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a, Graph<T>* tape = nullptr) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  Tensor<T> out = Tensor<T>::scalar(acc);
  detail::check_finite_out(out, "sum");
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out]() mutable {
      if (!out.grad_allocated()) return;
      const T g = out.grad()[0];
      auto& ga = a.grad();
      for (auto& v : ga) v += g;
    });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, Graph<T>* tape = nullptr) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  const T inv = T(1) / static_cast<T>(a.size());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  detail::check_finite_out(out, "mean");
  out.set_requires_grad(a.requires_grad());
  if (tape && a.requires_grad())
    tape->record([a, out, inv]() mutable {
      if (!out.grad_allocated()) return;
      const T g = out.grad()[0] * inv;
      auto& ga = a.grad();
      for (auto& v : ga) v += g;
    });
  return out;
}

// ---------------------------------------------------------------------------
// normalized / structured ops
// ---------------------------------------------------------------------------

/// Additive causal mask for an N x N attention map: 0 on and below the
/// diagonal, sentinel above.
template <typename T>
Tensor<T> causal_mask(std::size_t n) {
  Tensor<T> m = Tensor<T>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = static_cast<T>(kMaskSentinel);
  return m;
}

/// Row-wise softmax over the last dimension, with an optional additive mask
/// (entries 0 or a sentinel <= -1e9). Row-max subtraction is built in and not
/// configurable. NaN input and fully masked rows are errors.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Tensor<T>& mask = {},
                       Graph<T>* tape = nullptr) {
  require(x.rank() >= 2, "softmax_rows: input must be rank >= 2");
  const std::size_t C = x.shape().back();
  const std::size_t R = x.size() / C;
  std::size_t mask_rows = 0;
  if (mask.defined()) {
    if (mask.shape() == x.shape()) {
      mask_rows = R;
    } else {
      require(mask.rank() == 2 && mask.rows() == x.shape()[x.rank() - 2] && mask.cols() == C,
              "softmax_rows: mask must match the input shape or its last two dims");
      mask_rows = mask.rows();
    }
  }

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* od = out.data();
  std::vector<T> z(C);
  for (std::size_t r = 0; r < R; ++r) {
    const T* mrow = mask.defined() ? mask.data() + (r % mask_rows) * C : nullptr;
    if (mrow) {
      bool open = false;
      for (std::size_t j = 0; j < C; ++j)
        if (static_cast<double>(mrow[j]) > kMaskSentinel / 2) {
          open = true;
          break;
        }
      if (!open) throw ContractError("softmax_rows: fully masked row " + std::to_string(r));
    }
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < C; ++j) {
      T v = xd[r * C + j];
      if (std::isnan(static_cast<double>(v))) throw NumericError("softmax_rows: NaN input");
      if (mrow) v += mrow[j];
      z[j] = v;
      if (v > mx) mx = v;
    }
    T denom = 0;
    for (std::size_t j = 0; j < C; ++j) {
      const T e = std::exp(z[j] - mx);
      od[r * C + j] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    for (std::size_t j = 0; j < C; ++j) od[r * C + j] *= inv;
  }
  detail::check_finite_out(out, "softmax_rows");
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad())
    tape->record([x, out, R, C]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      const T* p = out.data();
      auto& gx = x.grad();
      for (std::size_t r = 0; r < R; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < C; ++j) dot += g[r * C + j] * p[r * C + j];
        for (std::size_t j = 0; j < C; ++j)
          gx[r * C + j] += p[r * C + j] * (g[r * C + j] - dot);
      }
    });
  return out;
}

/// RMS normalization over the last dimension: x / sqrt(mean(x^2) + eps),
/// optionally scaled elementwise by a gain vector of that dimension.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, T eps, const Tensor<T>& gain = {},
                   Graph<T>* tape = nullptr) {
  require(eps > T(0), "rms_norm: eps must be positive");
  const std::size_t C = x.shape().back();
  const std::size_t R = x.size() / C;
  if (gain.defined())
    require(gain.size() == C, "rms_norm: gain must have the size of the last dimension");

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_rms(R);
  const T* xd = x.data();
  T* od = out.data();
  for (std::size_t r = 0; r < R; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < C; ++j) {
      const T v = xd[r * C + j];
      ss += v * v;
    }
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(C) + eps);
    inv_rms[r] = inv;
    if (gain.defined())
      for (std::size_t j = 0; j < C; ++j) od[r * C + j] = xd[r * C + j] * inv * gain.at(j);
    else
      for (std::size_t j = 0; j < C; ++j) od[r * C + j] = xd[r * C + j] * inv;
  }
  detail::check_finite_out(out, "rms_norm");
  const bool needs = x.requires_grad() || (gain.defined() && gain.requires_grad());
  out.set_requires_grad(needs);
  if (tape && needs)
    tape->record([x, gain, out, inv_rms = std::move(inv_rms), R, C]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      const T* xd = x.data();
      for (std::size_t r = 0; r < R; ++r) {
        const T inv = inv_rms[r];
        if (x.requires_grad()) {
          // y_j = gain_j * x_j * inv, with d inv / d x_j = -x_j inv^3 / C
          T proj = 0;
          for (std::size_t j = 0; j < C; ++j) {
            const T gj = gain.defined() ? gain.at(j) : T(1);
            proj += g[r * C + j] * gj * xd[r * C + j];
          }
          proj *= inv * inv * inv / static_cast<T>(C);
          auto& gx = x.grad();
          for (std::size_t j = 0; j < C; ++j) {
            const T gj = gain.defined() ? gain.at(j) : T(1);
            gx[r * C + j] += g[r * C + j] * gj * inv - xd[r * C + j] * proj;
          }
        }
        if (gain.defined() && gain.requires_grad()) {
          auto& gg = gain.grad();
          for (std::size_t j = 0; j < C; ++j) gg[j] += g[r * C + j] * xd[r * C + j] * inv;
        }
      }
    });
  return out;
}

/// Embedding lookup: rows of table selected by ids.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids,
                      Graph<T>* tape = nullptr) {
  require(table.rank() == 2, "gather_rows: table must be rank-2");
  const std::size_t V = table.rows(), D = table.cols(), N = ids.size();
  require(N > 0, "gather_rows: empty id list");
  std::vector<int> idv(ids.begin(), ids.end());
  for (int id : idv)
    require(id >= 0 && static_cast<std::size_t>(id) < V,
            "gather_rows: id " + std::to_string(id) + " out of range [0," + std::to_string(V) + ")");
  Tensor<T> out = Tensor<T>::zeros({N, D});
  for (std::size_t i = 0; i < N; ++i)
    std::memcpy(out.data() + i * D, table.data() + static_cast<std::size_t>(idv[i]) * D,
                D * sizeof(T));
  out.set_requires_grad(table.requires_grad());
  if (tape && table.requires_grad())
    tape->record([table, out, idv = std::move(idv), D]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& gt = table.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        T* dst = gt.data() + static_cast<std::size_t>(idv[i]) * D;
        const T* src = g.data() + i * D;
        for (std::size_t j = 0; j < D; ++j) dst[j] += src[j];
      }
    });
  return out;
}

/// Per-row cross entropy from raw logits: out[i] = logsumexp(row_i) - z[i, t_i].
/// Backward uses the closed form softmax(row) - onehot(target).
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, std::span<const int> targets,
                             Graph<T>* tape = nullptr) {
  require(logits.rank() == 2, "cross_entropy_rows: logits must be rank-2");
  const std::size_t N = logits.rows(), V = logits.cols();
  require(targets.size() == N, "cross_entropy_rows: one target per row required");
  std::vector<int> tv(targets.begin(), targets.end());
  for (int t : tv)
    require(t >= 0 && static_cast<std::size_t>(t) < V, "cross_entropy_rows: target out of range");

  Tensor<T> out = Tensor<T>::zeros({N});
  std::vector<T> probs(N * V);
  const T* zd = logits.data();
  for (std::size_t i = 0; i < N; ++i) {
    T mx = zd[i * V];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, zd[i * V + j]);
    T denom = 0;
    for (std::size_t j = 0; j < V; ++j) {
      const T e = std::exp(zd[i * V + j] - mx);
      probs[i * V + j] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] *= inv;
    out.at(i) = std::log(denom) + mx - zd[i * V + static_cast<std::size_t>(tv[i])];
  }
  detail::check_finite_out(out, "cross_entropy_rows");
  out.set_requires_grad(logits.requires_grad());
  if (tape && logits.requires_grad())
    tape->record([logits, out, probs = std::move(probs), tv = std::move(tv), N, V]() mutable {
      if (!out.grad_allocated()) return;
      const auto& g = out.grad();
      auto& gz = logits.grad();
      for (std::size_t i = 0; i < N; ++i) {
        const T gi = g[i];
        if (gi == T(0)) continue;
        for (std::size_t j = 0; j < V; ++j) gz[i * V + j] += gi * probs[i * V + j];
        gz[i * V + static_cast<std::size_t>(tv[i])] -= gi;
      }
    });
  return out;
}

}  // namespace dift
