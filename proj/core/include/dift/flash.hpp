#pragma once

#include "dift/attention.hpp"

namespace dift {

/// The two decompositions that express differential attention through a
/// stock attention building block: split_v feeds the full-width V into two
/// calls, split_qkv splits V and makes four equal-width calls.
enum class DecompKind { split_v, split_qkv };

inline const char* to_string(DecompKind k) {
  return k == DecompKind::split_v ? "split_v" : "split_qkv";
}

struct CallCounter {
  int calls = 0;
};

/// Opaque standard attention building block: softmax(Q K^T / sqrt(qk_dim)) V,
/// causally masked when flagged. A fused kernel could be swapped in behind
/// this interface; the decompositions only rely on its contract.
template <typename T>
Tensor<T> attn_black_box(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal,
                         CallCounter* counter = nullptr) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attn_black_box: rank-2 inputs required");
  require(q.cols() == k.cols(), "attn_black_box: Q and K widths differ");
  require(k.rows() == v.rows(), "attn_black_box: K and V row counts differ");
  if (counter) ++counter->calls;
  const T s = T(1) / std::sqrt(static_cast<T>(q.cols()));
  Tensor<T> z = scale(matmul_nt(q, k), s);
  Tensor<T> mask = causal ? causal_mask<T>(q.rows()) : Tensor<T>{};
  return matmul(softmax_rows(z, mask), v);
}

/// FlashDiffAttn form 1: the building block accepts V wider than Q/K.
/// A1 = attn(Q1, K1, V); A2 = attn(Q2, K2, V); result A1 - lambda A2.
/// Exactly two building-block calls.
template <typename T>
Tensor<T> flash_diff_split_v(const Tensor<T>& x, const DiffAttnHeadParams<T>& p, T lambda,
                             bool causal, CallCounter* counter = nullptr) {
  require(x.rank() == 2 && x.cols() == p.model_dim(),
          "flash_diff_split_v: input width must equal model_dim");
  const std::size_t d = p.head_dim();
  Tensor<T> q = matmul(x, p.wq);
  Tensor<T> k = matmul(x, p.wk);
  Tensor<T> v = matmul(x, p.wv);
  Tensor<T> a1 = attn_black_box(slice_cols(q, 0, d), slice_cols(k, 0, d), v, causal, counter);
  Tensor<T> a2 =
      attn_black_box(slice_cols(q, d, 2 * d), slice_cols(k, d, 2 * d), v, causal, counter);
  return sub(a1, scale(a2, lambda));
}

/// FlashDiffAttn form 2: the building block requires equal Q/K/V widths, so
/// V is split and the halves concatenated back. Exactly four calls.
template <typename T>
Tensor<T> flash_diff_split_qkv(const Tensor<T>& x, const DiffAttnHeadParams<T>& p, T lambda,
                               bool causal, CallCounter* counter = nullptr) {
  require(x.rank() == 2 && x.cols() == p.model_dim(),
          "flash_diff_split_qkv: input width must equal model_dim");
  const std::size_t d = p.head_dim();
  Tensor<T> q = matmul(x, p.wq);
  Tensor<T> k = matmul(x, p.wk);
  Tensor<T> v = matmul(x, p.wv);
  Tensor<T> q1 = slice_cols(q, 0, d), q2 = slice_cols(q, d, 2 * d);
  Tensor<T> k1 = slice_cols(k, 0, d), k2 = slice_cols(k, d, 2 * d);
  Tensor<T> v1 = slice_cols(v, 0, d), v2 = slice_cols(v, d, 2 * d);

  Tensor<T> a11 = attn_black_box(q1, k1, v1, causal, counter);
  Tensor<T> a12 = attn_black_box(q1, k1, v2, causal, counter);
  Tensor<T> a1 = concat_cols<T>({a11, a12});
  Tensor<T> a21 = attn_black_box(q2, k2, v1, causal, counter);
  Tensor<T> a22 = attn_black_box(q2, k2, v2, causal, counter);
  Tensor<T> a2 = concat_cols<T>({a21, a22});
  return sub(a1, scale(a2, lambda));
}

/// Dispatch by decomposition kind.
template <typename T>
Tensor<T> flash_diff_attn(DecompKind kind, const Tensor<T>& x, const DiffAttnHeadParams<T>& p,
                          T lambda, bool causal, CallCounter* counter = nullptr) {
  return kind == DecompKind::split_v ? flash_diff_split_v(x, p, lambda, causal, counter)
                                     : flash_diff_split_qkv(x, p, lambda, causal, counter);
}

}  // namespace dift
