#pragma once

#include <functional>

#include "dift/tensor.hpp"

namespace dift {

/// Central-difference gradient of a scalar function, coordinate by
/// coordinate: (f(x + h e_i) - f(x - h e_i)) / 2h. The function must be
/// deterministic; x is restored exactly after evaluation. This is the
/// independent oracle every autodiff path is checked against.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x, T h) {
  require(h > T(0), "finite_diff_grad: h must be positive");
  Tensor<T> g = Tensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x.at(i);
    x.at(i) = orig + h;
    const T fp = f(x);
    x.at(i) = orig - h;
    const T fm = f(x);
    x.at(i) = orig;
    if (!finite(fp) || !finite(fm))
      throw NumericError("finite_diff_grad: non-finite function evaluation");
    g.at(i) = (fp - fm) / (T(2) * h);
  }
  return g;
}

/// Relative error with an absolute floor, the metric used by every gradient
/// comparison in this project.
template <typename T>
double rel_err(T a, T b, double floor = 1e-6) {
  const double da = static_cast<double>(a), db = static_cast<double>(b);
  const double denom = std::max(std::abs(da) + std::abs(db), floor);
  return std::abs(da - db) / denom;
}

template <typename T>
double max_rel_err(const std::vector<T>& a, const std::vector<T>& b, double floor = 1e-6) {
  require(a.size() == b.size(), "max_rel_err: length mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

}  // namespace dift
