#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dift/lambda.hpp"
#include "dift/ops.hpp"
#include "dift/quant.hpp"
#include "dift/rope.hpp"

namespace dift {

/// Optional per-head instrumentation. Logit quantization is evaluation-only
/// and rejected when a tape is recording.
template <typename T>
struct AttnHooks {
  const QuantSpec* logit_quant = nullptr;
  // pre-softmax score maps; the second tensor is undefined for standard attention
  std::function<void(const Tensor<T>&, const Tensor<T>&)> on_logits;
  // post-softmax net attention map (P1 - lambda P2, or P for standard attention)
  std::function<void(const Tensor<T>&)> on_map;
};

/// One differential attention head: W^Q and W^K project to 2d and split into
/// two halves, W^V projects to 2d unsplit.
template <typename T>
struct DiffAttnHeadParams {
  Tensor<T> wq, wk, wv;  // each model_dim x 2*head_dim

  DiffAttnHeadParams(Tensor<T> q, Tensor<T> k, Tensor<T> v)
      : wq(std::move(q)), wk(std::move(k)), wv(std::move(v)) {
    require(wq.rank() == 2 && wk.rank() == 2 && wv.rank() == 2,
            "DiffAttnHeadParams: projections must be rank-2");
    require(wq.shape() == wk.shape() && wq.shape() == wv.shape(),
            "DiffAttnHeadParams: W^Q, W^K, W^V must share one shape");
    require(wq.cols() % 2 == 0 && wq.cols() > 0,
            "DiffAttnHeadParams: projection width must be an even 2d");
    wq.set_requires_grad();
    wk.set_requires_grad();
    wv.set_requires_grad();
  }

  std::size_t model_dim() const { return wq.rows(); }
  std::size_t head_dim() const { return wq.cols() / 2; }

  static DiffAttnHeadParams init(Rng& rng, std::size_t model_dim, std::size_t head_dim,
                                 double stddev) {
    return DiffAttnHeadParams(randn<T>(rng, {model_dim, 2 * head_dim}, stddev),
                              randn<T>(rng, {model_dim, 2 * head_dim}, stddev),
                              randn<T>(rng, {model_dim, 2 * head_dim}, stddev));
  }
};

/// Multi-head differential attention for one layer. The head-count rule
/// h * 2d == model_dim is enforced at construction. The headwise norm has no
/// learnable gain; its only scale is the fixed multiplier (1 - lambda_init).
template <typename T>
struct MultiHeadParams {
  std::vector<DiffAttnHeadParams<T>> heads;
  Tensor<T> wo;  // model_dim x model_dim
  LambdaParams<T> lambda;
  T headnorm_eps = T(1e-5);
  bool use_group_norm = true;  // ablation: skip headwise norm and its multiplier

  MultiHeadParams(std::vector<DiffAttnHeadParams<T>> hs, Tensor<T> o, LambdaParams<T> lp,
                  T eps = T(1e-5), bool group_norm = true)
      : heads(std::move(hs)), wo(std::move(o)), lambda(std::move(lp)), headnorm_eps(eps),
        use_group_norm(group_norm) {
    require(!heads.empty(), "MultiHeadParams: at least one head required");
    const std::size_t dm = heads.front().model_dim();
    const std::size_t hd = heads.front().head_dim();
    for (const auto& h : heads)
      require(h.model_dim() == dm && h.head_dim() == hd,
              "MultiHeadParams: heads must agree on dimensions");
    require(heads.size() * 2 * hd == dm,
            "MultiHeadParams: head-count rule violated, need h * 2d == model_dim (h = " +
                std::to_string(dm / (2 * hd)) + " for these dims)");
    require(wo.rank() == 2 && wo.rows() == dm && wo.cols() == dm,
            "MultiHeadParams: W^O must be model_dim x model_dim");
    require(lambda.lq1.size() == hd, "MultiHeadParams: lambda vectors must have length head_dim");
    wo.set_requires_grad();
  }

  std::size_t model_dim() const { return heads.front().model_dim(); }
  std::size_t head_dim() const { return heads.front().head_dim(); }
  std::size_t n_heads() const { return heads.size(); }

  static MultiHeadParams init(Rng& rng, std::size_t model_dim, std::size_t head_dim,
                              T lambda_init, double proj_stddev, T eps = T(1e-5),
                              bool group_norm = true) {
    require(model_dim % (2 * head_dim) == 0,
            "MultiHeadParams::init: model_dim must be divisible by 2 * head_dim");
    const std::size_t h = model_dim / (2 * head_dim);
    std::vector<DiffAttnHeadParams<T>> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i)
      heads.push_back(DiffAttnHeadParams<T>::init(rng, model_dim, head_dim, proj_stddev));
    return MultiHeadParams(std::move(heads),
                           randn<T>(rng, {model_dim, model_dim}, proj_stddev),
                           LambdaParams<T>::init(rng, head_dim, lambda_init), eps, group_norm);
  }
};

/// Standard softmax attention head with independent query/key and value
/// widths (value width may differ, which the equivalence tests use).
template <typename T>
struct StdAttnHeadParams {
  Tensor<T> wq, wk, wv;  // model_dim x qk_dim, model_dim x qk_dim, model_dim x v_dim

  StdAttnHeadParams(Tensor<T> q, Tensor<T> k, Tensor<T> v)
      : wq(std::move(q)), wk(std::move(k)), wv(std::move(v)) {
    require(wq.rank() == 2 && wk.rank() == 2 && wv.rank() == 2,
            "StdAttnHeadParams: projections must be rank-2");
    require(wq.shape() == wk.shape(), "StdAttnHeadParams: W^Q and W^K must share one shape");
    require(wv.rows() == wq.rows(), "StdAttnHeadParams: W^V row count must match");
    wq.set_requires_grad();
    wk.set_requires_grad();
    wv.set_requires_grad();
  }

  std::size_t model_dim() const { return wq.rows(); }
  std::size_t qk_dim() const { return wq.cols(); }
  std::size_t v_dim() const { return wv.cols(); }

  static StdAttnHeadParams init(Rng& rng, std::size_t model_dim, std::size_t head_dim,
                                double stddev) {
    return StdAttnHeadParams(randn<T>(rng, {model_dim, head_dim}, stddev),
                             randn<T>(rng, {model_dim, head_dim}, stddev),
                             randn<T>(rng, {model_dim, head_dim}, stddev));
  }
};

template <typename T>
struct StdMultiHeadParams {
  std::vector<StdAttnHeadParams<T>> heads;
  Tensor<T> wo;  // model_dim x model_dim
  bool use_headnorm = false;  // normalize each head like the differential stack does
  T headnorm_scale = T(1);
  T headnorm_eps = T(1e-5);

  StdMultiHeadParams(std::vector<StdAttnHeadParams<T>> hs, Tensor<T> o)
      : heads(std::move(hs)), wo(std::move(o)) {
    require(!heads.empty(), "StdMultiHeadParams: at least one head required");
    const std::size_t dm = heads.front().model_dim();
    std::size_t concat = 0;
    for (const auto& h : heads) {
      require(h.model_dim() == dm, "StdMultiHeadParams: heads must agree on model_dim");
      concat += h.v_dim();
    }
    require(concat == dm, "StdMultiHeadParams: concatenated value width must equal model_dim");
    require(wo.rank() == 2 && wo.rows() == dm && wo.cols() == dm,
            "StdMultiHeadParams: W^O must be model_dim x model_dim");
    wo.set_requires_grad();
  }

  std::size_t model_dim() const { return heads.front().model_dim(); }
  std::size_t n_heads() const { return heads.size(); }

  static StdMultiHeadParams init(Rng& rng, std::size_t model_dim, std::size_t head_dim,
                                 double proj_stddev) {
    require(model_dim % head_dim == 0,
            "StdMultiHeadParams::init: model_dim must be divisible by head_dim");
    const std::size_t h = model_dim / head_dim;
    std::vector<StdAttnHeadParams<T>> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i)
      heads.push_back(StdAttnHeadParams<T>::init(rng, model_dim, head_dim, proj_stddev));
    return StdMultiHeadParams(std::move(heads), randn<T>(rng, {model_dim, model_dim}, proj_stddev));
  }
};

namespace detail {

template <typename T>
Tensor<T> maybe_quantize(Tensor<T> z, const AttnHooks<T>* hooks, Graph<T>* tape) {
  if (hooks && hooks->logit_quant) {
    require(tape == nullptr, "attention: logit quantization is evaluation-only");
    return absmax_quantize(z, *hooks->logit_quant);
  }
  return z;
}

}  // namespace detail

/// One head of differential attention:
/// (softmax(Q1 K1^T / sqrt(d)) - lambda * softmax(Q2 K2^T / sqrt(d))) V,
/// with both maps causally masked when requested. Output is N x 2d.
template <typename T>
Tensor<T> diff_attn_head(const Tensor<T>& x, const DiffAttnHeadParams<T>& p,
                         const Tensor<T>& lambda, bool causal,
                         const RopeContext* rope = nullptr, Graph<T>* tape = nullptr,
                         const AttnHooks<T>* hooks = nullptr) {
  require(x.rank() == 2 && x.cols() == p.model_dim(),
          "diff_attn_head: input width must equal model_dim");
  require(lambda.size() == 1, "diff_attn_head: lambda must be scalar");
  const std::size_t n = x.rows();
  const std::size_t d = p.head_dim();

  Tensor<T> q = matmul(x, p.wq, tape);
  Tensor<T> k = matmul(x, p.wk, tape);
  Tensor<T> v = matmul(x, p.wv, tape);
  Tensor<T> q1 = slice_cols(q, 0, d, tape), q2 = slice_cols(q, d, 2 * d, tape);
  Tensor<T> k1 = slice_cols(k, 0, d, tape), k2 = slice_cols(k, d, 2 * d, tape);
  if (rope) {
    q1 = rope_apply(q1, *rope, tape);
    q2 = rope_apply(q2, *rope, tape);
    k1 = rope_apply(k1, *rope, tape);
    k2 = rope_apply(k2, *rope, tape);
  }

  const T s = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> z1 = scale(matmul_nt(q1, k1, tape), s, tape);
  Tensor<T> z2 = scale(matmul_nt(q2, k2, tape), s, tape);
  z1 = detail::maybe_quantize(z1, hooks, tape);
  z2 = detail::maybe_quantize(z2, hooks, tape);
  if (hooks && hooks->on_logits) hooks->on_logits(z1, z2);

  Tensor<T> mask = causal ? causal_mask<T>(n) : Tensor<T>{};
  Tensor<T> p1 = softmax_rows(z1, mask, tape);
  Tensor<T> p2 = softmax_rows(z2, mask, tape);
  Tensor<T> net = sub(p1, mul_scalar(p2, lambda, tape), tape);
  if (hooks && hooks->on_map) hooks->on_map(net);
  return matmul(net, v, tape);
}

/// Forward-only convenience overload with a plain scalar lambda.
template <typename T>
Tensor<T> diff_attn_head(const Tensor<T>& x, const DiffAttnHeadParams<T>& p, T lambda,
                         bool causal, const RopeContext* rope = nullptr,
                         const AttnHooks<T>* hooks = nullptr) {
  Graph<T>* tape = nullptr;
  return diff_attn_head(x, p, Tensor<T>::scalar(lambda), causal, rope, tape, hooks);
}

/// Headwise normalization: RMSNorm over this head's channels alone, no
/// learnable gain, scaled by the fixed multiplier (1 - lambda_init). The
/// multiplier is a constant, not a learnable parameter.
template <typename T>
Tensor<T> headwise_norm(const Tensor<T>& head_out, T lambda_init, T eps,
                        Graph<T>* tape = nullptr) {
  require(lambda_init > T(0) && lambda_init < T(1),
          "headwise_norm: lambda_init must lie in (0,1)");
  return scale(rms_norm(head_out, eps, Tensor<T>{}, tape), T(1) - lambda_init, tape);
}

/// Standard softmax attention head: softmax(Q K^T / sqrt(qk_dim)) V.
template <typename T>
Tensor<T> std_attn_head(const Tensor<T>& x, const StdAttnHeadParams<T>& p, bool causal,
                        const RopeContext* rope = nullptr, Graph<T>* tape = nullptr,
                        const AttnHooks<T>* hooks = nullptr) {
  require(x.rank() == 2 && x.cols() == p.model_dim(),
          "std_attn_head: input width must equal model_dim");
  const std::size_t n = x.rows();
  Tensor<T> q = matmul(x, p.wq, tape);
  Tensor<T> k = matmul(x, p.wk, tape);
  Tensor<T> v = matmul(x, p.wv, tape);
  if (rope) {
    q = rope_apply(q, *rope, tape);
    k = rope_apply(k, *rope, tape);
  }
  const T s = T(1) / std::sqrt(static_cast<T>(p.qk_dim()));
  Tensor<T> z = scale(matmul_nt(q, k, tape), s, tape);
  z = detail::maybe_quantize(z, hooks, tape);
  if (hooks && hooks->on_logits) hooks->on_logits(z, Tensor<T>{});
  Tensor<T> mask = causal ? causal_mask<T>(n) : Tensor<T>{};
  Tensor<T> p_attn = softmax_rows(z, mask, tape);
  if (hooks && hooks->on_map) hooks->on_map(p_attn);
  return matmul(p_attn, v, tape);
}

/// Per-head hooks with the head index bound.
template <typename T>
struct MultiHeadHooks {
  const QuantSpec* logit_quant = nullptr;
  std::function<void(int head, const Tensor<T>&, const Tensor<T>&)> on_logits;
  std::function<void(int head, const Tensor<T>&)> on_map;
};

namespace detail {

template <typename T>
AttnHooks<T> bind_head_hooks(const MultiHeadHooks<T>* mh, int head) {
  AttnHooks<T> h;
  if (!mh) return h;
  h.logit_quant = mh->logit_quant;
  if (mh->on_logits)
    h.on_logits = [mh, head](const Tensor<T>& a, const Tensor<T>& b) { mh->on_logits(head, a, b); };
  if (mh->on_map) h.on_map = [mh, head](const Tensor<T>& m) { mh->on_map(head, m); };
  return h;
}

}  // namespace detail

/// Multi-head differential attention: per-head DiffAttn, headwise norm with
/// the (1 - lambda_init) multiplier, concat in head order, project by W^O.
/// lambda is computed once per call and shared across heads.
template <typename T>
Tensor<T> multi_head_diff_attn(const Tensor<T>& x, const MultiHeadParams<T>& p, bool causal,
                               const RopeContext* rope = nullptr, Graph<T>* tape = nullptr,
                               const MultiHeadHooks<T>* hooks = nullptr) {
  Tensor<T> lambda = compute_lambda(p.lambda, tape);
  std::vector<Tensor<T>> outs;
  outs.reserve(p.heads.size());
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    AttnHooks<T> hh = detail::bind_head_hooks(hooks, static_cast<int>(i));
    Tensor<T> head = diff_attn_head(x, p.heads[i], lambda, causal, rope, tape,
                                    hooks ? &hh : nullptr);
    if (p.use_group_norm)
      head = headwise_norm(head, p.lambda.lambda_init, p.headnorm_eps, tape);
    outs.push_back(std::move(head));
  }
  return matmul(concat_cols(outs, tape), p.wo, tape);
}

/// Standard multi-head attention with optional headwise normalization (used
/// by the lambda = 0 equivalence check and the GroupNorm ablation rows).
template <typename T>
Tensor<T> multi_head_std_attn(const Tensor<T>& x, const StdMultiHeadParams<T>& p, bool causal,
                              const RopeContext* rope = nullptr, Graph<T>* tape = nullptr,
                              const MultiHeadHooks<T>* hooks = nullptr) {
  std::vector<Tensor<T>> outs;
  outs.reserve(p.heads.size());
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    AttnHooks<T> hh = detail::bind_head_hooks(hooks, static_cast<int>(i));
    Tensor<T> head = std_attn_head(x, p.heads[i], causal, rope, tape, hooks ? &hh : nullptr);
    if (p.use_headnorm)
      head = scale(rms_norm(head, p.headnorm_eps, Tensor<T>{}, tape), p.headnorm_scale, tape);
    outs.push_back(std::move(head));
  }
  return matmul(concat_cols(outs, tape), p.wo, tape);
}

/// Projection parameter counts (W^Q, W^K, W^V per head plus W^O). Used by the
/// parity check: a differential layer with h heads matches a standard layer
/// with 2h heads at equal head_dim exactly.
template <typename T>
std::size_t attention_param_count(const MultiHeadParams<T>& p) {
  std::size_t n = p.wo.size();
  for (const auto& h : p.heads) n += h.wq.size() + h.wk.size() + h.wv.size();
  return n;
}

template <typename T>
std::size_t attention_param_count(const StdMultiHeadParams<T>& p) {
  std::size_t n = p.wo.size();
  for (const auto& h : p.heads) n += h.wq.size() + h.wk.size() + h.wv.size();
  return n;
}

}  // namespace dift
