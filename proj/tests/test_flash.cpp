#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dift/flash.hpp"

using dift::CallCounter;
using dift::DiffAttnHeadParams;
using dift::Rng;
using dift::Tensor;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
  return m;
}

template <typename T>
void three_way_sweep(std::uint64_t seeds, double tol) {
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng(9000 + seed);
    const std::size_t d = 2 + rng.uniform_int(31);          // <= 32
    const std::size_t n = 1 + rng.uniform_int(64);          // <= 64
    const std::size_t dm = 2 * d * (1 + rng.uniform_int(2));
    const bool causal = rng.uniform() < 0.5;
    const T lambda = static_cast<T>(rng.uniform_range(0.0, 1.5));
    auto p = DiffAttnHeadParams<T>::init(rng, dm, d, 0.3);
    Tensor<T> x = dift::randn<T>(rng, {n, dm});

    Tensor<T> naive = dift::diff_attn_head(x, p, lambda, causal);
    Tensor<T> sv = dift::flash_diff_split_v(x, p, lambda, causal);
    Tensor<T> sq = dift::flash_diff_split_qkv(x, p, lambda, causal);
    INFO("seed " << seed << " n " << n << " d " << d << " causal " << causal);
    CHECK(max_abs_diff(naive, sv) <= tol);
    CHECK(max_abs_diff(naive, sq) <= tol);
    CHECK(max_abs_diff(sv, sq) <= tol);
  }
}

}  // namespace

TEST_CASE("attn_black_box basics") {
  Rng rng(1);
  const std::size_t n = 5, d = 4, dv = 6;

  // single position returns the V row
  Tensor<double> q1 = dift::randn<double>(rng, {1, d});
  Tensor<double> k1 = dift::randn<double>(rng, {1, d});
  Tensor<double> v1 = dift::randn<double>(rng, {1, dv});
  Tensor<double> o1 = dift::attn_black_box(q1, k1, v1, true);
  for (std::size_t j = 0; j < dv; ++j) CHECK(o1.at(0, j) == doctest::Approx(v1.at(0, j)));

  // uniform scores average the visible rows
  Tensor<double> qz = Tensor<double>::zeros({n, d});
  Tensor<double> kz = Tensor<double>::zeros({n, d});
  Tensor<double> v = dift::randn<double>(rng, {n, dv});
  Tensor<double> oz = dift::attn_black_box(qz, kz, v, true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dv; ++j) {
      double mean = 0;
      for (std::size_t r = 0; r <= i; ++r) mean += v.at(r, j);
      mean /= static_cast<double>(i + 1);
      CHECK(oz.at(i, j) == doctest::Approx(mean).epsilon(1e-12));
    }

  // random case against a hand-rolled softmax-weighted sum
  Tensor<double> q = dift::randn<double>(rng, {n, d});
  Tensor<double> k = dift::randn<double>(rng, {n, d});
  Tensor<double> o = dift::attn_black_box(q, k, v, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sc(n);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < d; ++t) s += q.at(i, t) * k.at(j, t);
      sc[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, sc[j]);
    }
    double den = 0;
    for (auto& s : sc) den += (s = std::exp(s - mx));
    for (std::size_t j = 0; j < dv; ++j) {
      double acc = 0;
      for (std::size_t r = 0; r < n; ++r) acc += sc[r] / den * v.at(r, j);
      CHECK(o.at(i, j) == doctest::Approx(acc).epsilon(1e-10));
    }
  }
}

TEST_CASE("split_v: lambda=0 and single-position degeneracies") {
  Rng rng(3);
  const std::size_t dm = 12, d = 3;
  auto p = DiffAttnHeadParams<double>::init(rng, dm, d, 0.4);

  Tensor<double> x = dift::randn<double>(rng, {6, dm});
  Tensor<double> q = dift::matmul(x, p.wq);
  Tensor<double> k = dift::matmul(x, p.wk);
  Tensor<double> v = dift::matmul(x, p.wv);
  Tensor<double> lhs = dift::flash_diff_split_v(x, p, 0.0, true);
  Tensor<double> rhs =
      dift::attn_black_box(dift::slice_cols(q, 0, d), dift::slice_cols(k, 0, d), v, true);
  CHECK(max_abs_diff(lhs, rhs) <= 1e-14);

  Tensor<double> x1 = dift::randn<double>(rng, {1, dm});
  const double lambda = 0.45;
  Tensor<double> o1 = dift::flash_diff_split_v(x1, p, lambda, true);
  Tensor<double> v1 = dift::matmul(x1, p.wv);
  for (std::size_t j = 0; j < 2 * d; ++j)
    CHECK(o1.at(0, j) == doctest::Approx((1.0 - lambda) * v1.at(0, j)).epsilon(1e-12));
}

TEST_CASE("split_qkv: lambda=0 concatenates the two value halves") {
  Rng rng(7);
  const std::size_t dm = 10, d = 5, n = 4;
  auto p = DiffAttnHeadParams<double>::init(rng, dm, d, 0.4);
  Tensor<double> x = dift::randn<double>(rng, {n, dm});
  Tensor<double> q = dift::matmul(x, p.wq);
  Tensor<double> k = dift::matmul(x, p.wk);
  Tensor<double> v = dift::matmul(x, p.wv);
  Tensor<double> lhs = dift::flash_diff_split_qkv(x, p, 0.0, false);
  Tensor<double> q1 = dift::slice_cols(q, 0, d), k1 = dift::slice_cols(k, 0, d);
  Tensor<double> rhs = dift::concat_cols<double>(
      {dift::attn_black_box(q1, k1, dift::slice_cols(v, 0, d), false),
       dift::attn_black_box(q1, k1, dift::slice_cols(v, d, 2 * d), false)});
  CHECK(max_abs_diff(lhs, rhs) <= 1e-14);

  Tensor<double> x1 = dift::randn<double>(rng, {1, dm});
  Tensor<double> o1 = dift::flash_diff_split_qkv(x1, p, 0.7, true);
  Tensor<double> v1 = dift::matmul(x1, p.wv);
  for (std::size_t j = 0; j < 2 * d; ++j)
    CHECK(o1.at(0, j) == doctest::Approx(0.3 * v1.at(0, j)).epsilon(1e-12));
}

TEST_CASE("three-way equivalence: naive vs split_v vs split_qkv") {
  three_way_sweep<double>(30, 1e-12);
  three_way_sweep<float>(30, 1e-5);
}

TEST_CASE("decompositions are exactly linear in V") {
  Rng rng(15);
  const std::size_t dm = 8, d = 4, n = 6;
  auto p = DiffAttnHeadParams<float>::init(rng, dm, d, 0.4);
  Tensor<float> x = dift::randn<float>(rng, {n, dm});
  Tensor<float> base_v = dift::flash_diff_split_v(x, p, 0.8f, true);
  Tensor<float> base_q = dift::flash_diff_split_qkv(x, p, 0.8f, true);

  for (std::size_t i = 0; i < p.wv.size(); ++i) p.wv.at(i) *= 2.0f;  // doubles V exactly
  Tensor<float> twice_v = dift::flash_diff_split_v(x, p, 0.8f, true);
  Tensor<float> twice_q = dift::flash_diff_split_qkv(x, p, 0.8f, true);
  for (std::size_t i = 0; i < base_v.size(); ++i) {
    CHECK(twice_v.at(i) == 2.0f * base_v.at(i));
    CHECK(twice_q.at(i) == 2.0f * base_q.at(i));
  }
}

TEST_CASE("building-block call counts: 2 for split_v, 4 for split_qkv") {
  Rng rng(31);
  const std::size_t dm = 8, d = 2, n = 5;
  auto p = DiffAttnHeadParams<double>::init(rng, dm, d, 0.4);
  Tensor<double> x = dift::randn<double>(rng, {n, dm});
  CallCounter cv, cq;
  (void)dift::flash_diff_split_v(x, p, 0.5, true, &cv);
  (void)dift::flash_diff_split_qkv(x, p, 0.5, true, &cq);
  CHECK(cv.calls == 2);
  CHECK(cq.calls == 4);
}
