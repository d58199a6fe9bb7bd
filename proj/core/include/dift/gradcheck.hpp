#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dift/finite_diff.hpp"
#include "dift/ops.hpp"
#include "dift/random.hpp"

namespace dift {

/// Weights of the norm-free single-head operators used by the closed-form
/// gradient formulas: separate d-wide query/key halves, 2d-wide value,
/// 2d x model_dim output projection.
template <typename T>
struct SingleHeadWeights {
  Tensor<T> wq1, wq2, wk1, wk2;  // model_dim x d
  Tensor<T> wv;                  // model_dim x 2d
  Tensor<T> wo;                  // 2d x model_dim

  std::size_t model_dim() const { return wq1.rows(); }
  std::size_t head_dim() const { return wq1.cols(); }

  static SingleHeadWeights init(Rng& rng, std::size_t model_dim, std::size_t d, double stddev) {
    SingleHeadWeights w;
    w.wq1 = randn<T>(rng, {model_dim, d}, stddev);
    w.wq2 = randn<T>(rng, {model_dim, d}, stddev);
    w.wk1 = randn<T>(rng, {model_dim, d}, stddev);
    w.wk2 = randn<T>(rng, {model_dim, d}, stddev);
    w.wv = randn<T>(rng, {model_dim, 2 * d}, stddev);
    w.wo = randn<T>(rng, {2 * d, model_dim}, stddev);
    return w;
  }

  void enable_grads() {
    wq1.set_requires_grad();
    wq2.set_requires_grad();
    wk1.set_requires_grad();
    wk2.set_requires_grad();
    wv.set_requires_grad();
    wo.set_requires_grad();
  }

  /// Independent deep copy; tensors are handles, so plain copies alias.
  SingleHeadWeights clone() const {
    SingleHeadWeights w;
    w.wq1 = wq1.clone();
    w.wq2 = wq2.clone();
    w.wk1 = wk1.clone();
    w.wk2 = wk2.clone();
    w.wv = wv.clone();
    w.wo = wo.clone();
    return w;
  }
};

template <typename T>
struct SingleHeadGrads {
  Tensor<T> wq1, wq2, wk1, wk2, wv, wo;
};

/// Norm-free differential operator O = ((A1 - lambda A2) V) W^O with lambda
/// a constant and no causal mask; the setting the closed forms differentiate.
template <typename T>
Tensor<T> diff_head_norm_free(const Tensor<T>& x, const SingleHeadWeights<T>& w, T lambda,
                              Graph<T>* tape = nullptr) {
  const std::size_t d = w.head_dim();
  const T s = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> q1 = matmul(x, w.wq1, tape), q2 = matmul(x, w.wq2, tape);
  Tensor<T> k1 = matmul(x, w.wk1, tape), k2 = matmul(x, w.wk2, tape);
  Tensor<T> v = matmul(x, w.wv, tape);
  Tensor<T> a1 = softmax_rows(scale(matmul_nt(q1, k1, tape), s, tape), {}, tape);
  Tensor<T> a2 = softmax_rows(scale(matmul_nt(q2, k2, tape), s, tape), {}, tape);
  Tensor<T> net = sub(a1, scale(a2, lambda, tape), tape);
  return matmul(matmul(net, v, tape), w.wo, tape);
}

/// Conventional attention over summed logits with 1/sqrt(2d) scaling:
/// A = softmax((Q1 K1^T + Q2 K2^T) / sqrt(2d)), O = (A V) W^O.
template <typename T>
Tensor<T> std_head_summed(const Tensor<T>& x, const SingleHeadWeights<T>& w,
                          Graph<T>* tape = nullptr) {
  const std::size_t d = w.head_dim();
  const T s = T(1) / std::sqrt(static_cast<T>(2 * d));
  Tensor<T> q1 = matmul(x, w.wq1, tape), q2 = matmul(x, w.wq2, tape);
  Tensor<T> k1 = matmul(x, w.wk1, tape), k2 = matmul(x, w.wk2, tape);
  Tensor<T> v = matmul(x, w.wv, tape);
  Tensor<T> z = scale(add(matmul_nt(q1, k1, tape), matmul_nt(q2, k2, tape), tape), s, tape);
  Tensor<T> a = softmax_rows(z, {}, tape);
  return matmul(matmul(a, v, tape), w.wo, tape);
}

namespace detail {

/// dL/dZ for row softmax A with upstream B: A (Hadamard) (B - rowsum(A.B)).
/// The rowsum term is the all-ones-matrix J contraction in the closed forms.
template <typename T>
Tensor<T> softmax_pullback(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.rows(), m = a.cols();
  Tensor<T> out = Tensor<T>::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T dot = 0;
    for (std::size_t j = 0; j < m; ++j) dot += a.at(i, j) * b.at(i, j);
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = a.at(i, j) * (b.at(i, j) - dot);
  }
  return out;
}

}  // namespace detail

/// Closed-form gradients of the six weight matrices of the norm-free
/// differential operator, given the upstream gradient dL/dO. The W^{Q2} and
/// W^{K2} paths carry the -lambda prefactor.
template <typename T>
SingleHeadGrads<T> closed_form_grads_diff(const Tensor<T>& x, const SingleHeadWeights<T>& w,
                                          T lambda, const Tensor<T>& dl_do) {
  const std::size_t d = w.head_dim();
  require(dl_do.rank() == 2 && dl_do.rows() == x.rows() && dl_do.cols() == w.wo.cols(),
          "closed_form_grads_diff: dL/dO shape mismatch");
  const T s = T(1) / std::sqrt(static_cast<T>(d));

  Tensor<T> q1 = matmul(x, w.wq1), q2 = matmul(x, w.wq2);
  Tensor<T> k1 = matmul(x, w.wk1), k2 = matmul(x, w.wk2);
  Tensor<T> v = matmul(x, w.wv);
  Tensor<T> a1 = softmax_rows(scale(matmul_nt(q1, k1), s));
  Tensor<T> a2 = softmax_rows(scale(matmul_nt(q2, k2), s));
  Tensor<T> net = sub(a1, scale(a2, lambda));

  const std::size_t n = x.rows(), dm = x.cols(), out_w = w.wo.cols();
  SingleHeadGrads<T> g;

  // dW^O = ((A1 - lambda A2) V)^T dL/dO
  Tensor<T> p = matmul(net, v);  // n x 2d
  g.wo = Tensor<T>::zeros({2 * d, out_w});
  kern::mm_tn<false>(p.data(), dl_do.data(), g.wo.data(), 2 * d, n, out_w);

  // dP = dL/dO (W^O)^T ; dW^V = X^T (A1 - lambda A2)^T dP
  Tensor<T> dp = Tensor<T>::zeros({n, 2 * d});
  kern::mm_nt<false>(dl_do.data(), w.wo.data(), dp.data(), n, out_w, 2 * d);
  Tensor<T> net_t_dp = Tensor<T>::zeros({n, 2 * d});
  kern::mm_tn<false>(net.data(), dp.data(), net_t_dp.data(), n, n, 2 * d);
  g.wv = Tensor<T>::zeros({dm, 2 * d});
  kern::mm_tn<false>(x.data(), net_t_dp.data(), g.wv.data(), dm, n, 2 * d);

  // B = dP V^T, the upstream reaching both score maps
  Tensor<T> b = Tensor<T>::zeros({n, n});
  kern::mm_nt<false>(dp.data(), v.data(), b.data(), n, 2 * d, n);

  auto qk_grads = [&](const Tensor<T>& a, const Tensor<T>& qm, const Tensor<T>& km, T pref,
                      Tensor<T>& gq_out, Tensor<T>& gk_out) {
    Tensor<T> sgrad = detail::softmax_pullback(a, b);
    // dQ = pref * S K ; dK = pref * S^T Q ; then project through X^T
    Tensor<T> dq = Tensor<T>::zeros({n, d});
    kern::mm_nn<false>(sgrad.data(), km.data(), dq.data(), n, n, d);
    Tensor<T> dk = Tensor<T>::zeros({n, d});
    kern::mm_tn<false>(sgrad.data(), qm.data(), dk.data(), n, n, d);
    gq_out = Tensor<T>::zeros({dm, d});
    kern::mm_tn<false>(x.data(), dq.data(), gq_out.data(), dm, n, d);
    gk_out = Tensor<T>::zeros({dm, d});
    kern::mm_tn<false>(x.data(), dk.data(), gk_out.data(), dm, n, d);
    for (std::size_t i = 0; i < gq_out.size(); ++i) gq_out.at(i) *= pref;
    for (std::size_t i = 0; i < gk_out.size(); ++i) gk_out.at(i) *= pref;
  };

  qk_grads(a1, q1, k1, s, g.wq1, g.wk1);
  qk_grads(a2, q2, k2, -lambda * s, g.wq2, g.wk2);
  return g;
}

/// Closed-form gradients for conventional attention over summed logits with
/// 1/sqrt(2d) scaling. All four query/key paths carry the positive sign.
template <typename T>
SingleHeadGrads<T> closed_form_grads_std(const Tensor<T>& x, const SingleHeadWeights<T>& w,
                                         const Tensor<T>& dl_do) {
  const std::size_t d = w.head_dim();
  require(dl_do.rank() == 2 && dl_do.rows() == x.rows() && dl_do.cols() == w.wo.cols(),
          "closed_form_grads_std: dL/dO shape mismatch");
  const T s = T(1) / std::sqrt(static_cast<T>(2 * d));

  Tensor<T> q1 = matmul(x, w.wq1), q2 = matmul(x, w.wq2);
  Tensor<T> k1 = matmul(x, w.wk1), k2 = matmul(x, w.wk2);
  Tensor<T> v = matmul(x, w.wv);
  Tensor<T> a = softmax_rows(scale(add(matmul_nt(q1, k1), matmul_nt(q2, k2)), s));

  const std::size_t n = x.rows(), dm = x.cols(), out_w = w.wo.cols();
  SingleHeadGrads<T> g;

  Tensor<T> p = matmul(a, v);
  g.wo = Tensor<T>::zeros({2 * d, out_w});
  kern::mm_tn<false>(p.data(), dl_do.data(), g.wo.data(), 2 * d, n, out_w);

  Tensor<T> dp = Tensor<T>::zeros({n, 2 * d});
  kern::mm_nt<false>(dl_do.data(), w.wo.data(), dp.data(), n, out_w, 2 * d);
  Tensor<T> at_dp = Tensor<T>::zeros({n, 2 * d});
  kern::mm_tn<false>(a.data(), dp.data(), at_dp.data(), n, n, 2 * d);
  g.wv = Tensor<T>::zeros({dm, 2 * d});
  kern::mm_tn<false>(x.data(), at_dp.data(), g.wv.data(), dm, n, 2 * d);

  Tensor<T> b = Tensor<T>::zeros({n, n});
  kern::mm_nt<false>(dp.data(), v.data(), b.data(), n, 2 * d, n);
  Tensor<T> sgrad = detail::softmax_pullback(a, b);

  auto project = [&](const Tensor<T>& m2, bool transpose_s) {
    Tensor<T> dqk = Tensor<T>::zeros({n, d});
    if (transpose_s)
      kern::mm_tn<false>(sgrad.data(), m2.data(), dqk.data(), n, n, d);
    else
      kern::mm_nn<false>(sgrad.data(), m2.data(), dqk.data(), n, n, d);
    Tensor<T> out = Tensor<T>::zeros({dm, d});
    kern::mm_tn<false>(x.data(), dqk.data(), out.data(), dm, n, d);
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= s;
    return out;
  };
  g.wq1 = project(k1, false);
  g.wq2 = project(k2, false);
  g.wk1 = project(q1, true);
  g.wk2 = project(q2, true);
  return g;
}

/// Autodiff gradients of the same operators with the upstream gradient
/// injected via loss = sum(O . G); the oracle the closed forms are checked
/// against.
template <typename T>
SingleHeadGrads<T> autodiff_grads(const Tensor<T>& x, const SingleHeadWeights<T>& w_in,
                                  std::optional<T> lambda, const Tensor<T>& dl_do) {
  SingleHeadWeights<T> w = w_in.clone();
  w.enable_grads();
  Graph<T> tape;
  Tensor<T> o = lambda ? diff_head_norm_free(x, w, *lambda, &tape) : std_head_summed(x, w, &tape);
  tape.backward(sum(mul(o, dl_do, &tape), &tape));
  auto grad_of = [](Tensor<T>& t) {
    Tensor<T> g = Tensor<T>::zeros(t.shape());
    if (t.grad_allocated())
      for (std::size_t i = 0; i < t.size(); ++i) g.at(i) = t.grad()[i];
    return g;
  };
  SingleHeadGrads<T> g;
  g.wq1 = grad_of(w.wq1);
  g.wq2 = grad_of(w.wq2);
  g.wk1 = grad_of(w.wk1);
  g.wk2 = grad_of(w.wk2);
  g.wv = grad_of(w.wv);
  g.wo = grad_of(w.wo);
  return g;
}

// ---------------------------------------------------------------------------
// gradient comparison report
// ---------------------------------------------------------------------------

struct GradCheckConfig {
  int d_model = 8;
  int head_dim = 4;
  int seq_len = 6;
  double lambda_init = 0.8;  // lambda is held at this constant, per the norm-free setting
};

/// Per-parameter comparison between the differential and conventional
/// operators built from one shared random init and one shared upstream
/// gradient. rel errors compare closed form vs autodiff and autodiff vs
/// finite differences (the max across the two operator families); the ratio
/// is present only when both gradient norms are nonzero. Informational, no
/// thresholds.
struct GradRecord {
  std::string name;
  double closed_form_vs_autodiff_rel_err = 0.0;
  double autodiff_vs_fd_rel_err = 0.0;
  double grad_norm_diff = 0.0;
  double grad_norm_std = 0.0;
  std::optional<double> ratio;
};

struct GradReport {
  double lambda_value = 0.0;
  double fixed_multiplier = 0.0;  // (1 - lambda_init), echoed from the config
  std::vector<GradRecord> records;
};

template <typename T>
double frobenius(const Tensor<T>& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = static_cast<double>(t.at(i));
    s += v * v;
  }
  return std::sqrt(s);
}

template <typename T>
GradReport grad_ratio_report(const GradCheckConfig& cfg, std::uint64_t seed,
                             const Tensor<T>* upstream = nullptr) {
  require(cfg.lambda_init > 0.0 && cfg.lambda_init < 1.0,
          "grad_ratio_report: lambda_init must lie in (0,1)");
  Rng rng(seed);
  const std::size_t dm = static_cast<std::size_t>(cfg.d_model);
  const std::size_t d = static_cast<std::size_t>(cfg.head_dim);
  const std::size_t n = static_cast<std::size_t>(cfg.seq_len);
  auto w = SingleHeadWeights<T>::init(rng, dm, d, 1.0 / std::sqrt(static_cast<double>(dm)));
  Tensor<T> x = randn<T>(rng, {n, dm});
  Tensor<T> gup = upstream ? *upstream : randn<T>(rng, {n, dm});
  require(gup.rank() == 2 && gup.rows() == n && gup.cols() == dm,
          "grad_ratio_report: upstream gradient shape mismatch");
  const T lambda = static_cast<T>(cfg.lambda_init);

  SingleHeadGrads<T> cf_diff = closed_form_grads_diff(x, w, lambda, gup);
  SingleHeadGrads<T> cf_std = closed_form_grads_std(x, w, gup);
  SingleHeadGrads<T> ad_diff = autodiff_grads<T>(x, w, lambda, gup);
  SingleHeadGrads<T> ad_std = autodiff_grads<T>(x, w, std::nullopt, gup);

  GradReport rep;
  rep.lambda_value = static_cast<double>(lambda);
  rep.fixed_multiplier = 1.0 - cfg.lambda_init;

  auto fd_for = [&](Tensor<T> SingleHeadWeights<T>::* member, bool diff_family) {
    auto probe_w = w;
    auto f = [&](const Tensor<T>& probe) {
      SingleHeadWeights<T> local = probe_w;
      local.*member = probe.clone();
      Tensor<T> o = diff_family ? diff_head_norm_free(x, local, lambda) : std_head_summed(x, local);
      T s = 0;
      for (std::size_t i = 0; i < o.size(); ++i) s += o.at(i) * gup.at(i);
      return s;
    };
    return finite_diff_grad<T>(f, (w.*member).clone(), T(1e-5));
  };

  struct Entry {
    const char* name;
    Tensor<T> SingleHeadWeights<T>::* member;
    Tensor<T> SingleHeadGrads<T>::* gmember;
  };
  const std::vector<Entry> entries = {
      {"wq1", &SingleHeadWeights<T>::wq1, &SingleHeadGrads<T>::wq1},
      {"wq2", &SingleHeadWeights<T>::wq2, &SingleHeadGrads<T>::wq2},
      {"wk1", &SingleHeadWeights<T>::wk1, &SingleHeadGrads<T>::wk1},
      {"wk2", &SingleHeadWeights<T>::wk2, &SingleHeadGrads<T>::wk2},
      {"wv", &SingleHeadWeights<T>::wv, &SingleHeadGrads<T>::wv},
      {"wo", &SingleHeadWeights<T>::wo, &SingleHeadGrads<T>::wo},
  };
  for (const auto& e : entries) {
    GradRecord r;
    r.name = e.name;
    const Tensor<T>& cfd = cf_diff.*(e.gmember);
    const Tensor<T>& cfs = cf_std.*(e.gmember);
    const Tensor<T>& add = ad_diff.*(e.gmember);
    const Tensor<T>& ads = ad_std.*(e.gmember);
    r.closed_form_vs_autodiff_rel_err =
        std::max(max_rel_err(cfd.values(), add.values()), max_rel_err(cfs.values(), ads.values()));
    Tensor<T> fdd = fd_for(e.member, true);
    Tensor<T> fds = fd_for(e.member, false);
    r.autodiff_vs_fd_rel_err =
        std::max(max_rel_err(add.values(), fdd.values()), max_rel_err(ads.values(), fds.values()));
    r.grad_norm_diff = frobenius(add);
    r.grad_norm_std = frobenius(ads);
    if (r.grad_norm_diff > 0.0 && r.grad_norm_std > 0.0)
      r.ratio = r.grad_norm_diff / r.grad_norm_std;
    rep.records.push_back(std::move(r));
  }
  return rep;
}

}  // namespace dift
