#pragma once

#include "dift/ops.hpp"
#include "dift/random.hpp"
#include "dift/tensor.hpp"

namespace dift {

/// Per-layer schedule for the subtraction coefficient's initial value:
/// 0.8 - 0.6 * exp(-0.3 * (l - 1)), layer_index 1-based. Rises monotonically
/// from 0.2 toward 0.8.
double lambda_init_schedule(int layer_index);

/// Re-parameterization of the learnable subtraction coefficient:
/// lambda = exp(lq1 . lk1) - exp(lq2 . lk2) + lambda_init.
/// One instance per layer, shared by all heads of that layer.
template <typename T>
struct LambdaParams {
  Tensor<T> lq1, lk1, lq2, lk2;  // learnable, length head_dim each
  T lambda_init;                 // constant in (0,1)

  LambdaParams(Tensor<T> q1, Tensor<T> k1, Tensor<T> q2, Tensor<T> k2, T init)
      : lq1(std::move(q1)), lk1(std::move(k1)), lq2(std::move(q2)), lk2(std::move(k2)),
        lambda_init(init) {
    const std::size_t d = lq1.size();
    require(lk1.size() == d && lq2.size() == d && lk2.size() == d,
            "LambdaParams: the four vectors must have identical length");
    require(lambda_init > T(0) && lambda_init < T(1),
            "LambdaParams: lambda_init must lie in (0,1)");
    lq1.set_requires_grad();
    lk1.set_requires_grad();
    lq2.set_requires_grad();
    lk2.set_requires_grad();
  }

  /// Zero vectors pin lambda to exactly lambda_init but kill its gradients,
  /// so training init draws each entry from N(0, 0.1^2) instead.
  static LambdaParams init(Rng& rng, std::size_t d, T lambda_init, double stddev = 0.1) {
    return LambdaParams(randn<T>(rng, {d}, stddev), randn<T>(rng, {d}, stddev),
                        randn<T>(rng, {d}, stddev), randn<T>(rng, {d}, stddev), lambda_init);
  }

  static LambdaParams zeros(std::size_t d, T lambda_init) {
    return LambdaParams(Tensor<T>::zeros({d}), Tensor<T>::zeros({d}), Tensor<T>::zeros({d}),
                        Tensor<T>::zeros({d}), lambda_init);
  }
};

/// Differentiable scalar lambda. Gradient flows to all four vectors through
/// the exp terms. Dot products beyond exp range are reported as errors.
template <typename T>
Tensor<T> compute_lambda(const LambdaParams<T>& p, Graph<T>* tape = nullptr) {
  const auto guard = [](const Tensor<T>& a, const Tensor<T>& b) {
    T dot = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a.at(i) * b.at(i);
    if (!finite(dot) || std::abs(static_cast<double>(dot)) > 700.0)
      throw NumericError("compute_lambda: dot product magnitude exceeds exp range");
  };
  guard(p.lq1, p.lk1);
  guard(p.lq2, p.lk2);
  Tensor<T> e1 = exp_elem(sum(mul(p.lq1, p.lk1, tape), tape), tape);
  Tensor<T> e2 = exp_elem(sum(mul(p.lq2, p.lk2, tape), tape), tape);
  return add_const(sub(e1, e2, tape), p.lambda_init, tape);
}

}  // namespace dift
