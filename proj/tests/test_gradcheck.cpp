#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dift/gradcheck.hpp"

using dift::Rng;
using dift::SingleHeadGrads;
using dift::SingleHeadWeights;
using dift::Tensor;

namespace {

using D = double;

bool all_zero(const Tensor<D>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t.at(i) != 0.0) return false;
  return true;
}

double worst_pair_err(const SingleHeadGrads<D>& a, const SingleHeadGrads<D>& b) {
  double w = 0;
  w = std::max(w, dift::max_rel_err(a.wq1.values(), b.wq1.values()));
  w = std::max(w, dift::max_rel_err(a.wq2.values(), b.wq2.values()));
  w = std::max(w, dift::max_rel_err(a.wk1.values(), b.wk1.values()));
  w = std::max(w, dift::max_rel_err(a.wk2.values(), b.wk2.values()));
  w = std::max(w, dift::max_rel_err(a.wv.values(), b.wv.values()));
  w = std::max(w, dift::max_rel_err(a.wo.values(), b.wo.values()));
  return w;
}

}  // namespace

TEST_CASE("zero upstream gradient zeroes all six closed-form gradients") {
  Rng rng(1);
  auto w = SingleHeadWeights<D>::init(rng, 8, 4, 0.4);
  Tensor<D> x = dift::randn<D>(rng, {6, 8});
  Tensor<D> g0 = Tensor<D>::zeros({6, 8});

  for (const auto& grads :
       {dift::closed_form_grads_diff(x, w, 0.8, g0), dift::closed_form_grads_std(x, w, g0)}) {
    CHECK(all_zero(grads.wq1));
    CHECK(all_zero(grads.wq2));
    CHECK(all_zero(grads.wk1));
    CHECK(all_zero(grads.wk2));
    CHECK(all_zero(grads.wv));
    CHECK(all_zero(grads.wo));
  }
}

TEST_CASE("lambda = 0 zeroes the W^Q2 / W^K2 gradients exactly") {
  Rng rng(2);
  auto w = SingleHeadWeights<D>::init(rng, 8, 4, 0.4);
  Tensor<D> x = dift::randn<D>(rng, {5, 8});
  Tensor<D> g = dift::randn<D>(rng, {5, 8});
  auto grads = dift::closed_form_grads_diff(x, w, 0.0, g);
  CHECK(all_zero(grads.wq2));
  CHECK(all_zero(grads.wk2));
  CHECK(!all_zero(grads.wq1));
  CHECK(!all_zero(grads.wv));
}

TEST_CASE("N = 1 zeroes every query/key gradient (softmax of one logit is constant)") {
  Rng rng(3);
  auto w = SingleHeadWeights<D>::init(rng, 8, 4, 0.4);
  Tensor<D> x = dift::randn<D>(rng, {1, 8});
  Tensor<D> g = dift::randn<D>(rng, {1, 8});

  auto std_grads = dift::closed_form_grads_std(x, w, g);
  CHECK(all_zero(std_grads.wq1));
  CHECK(all_zero(std_grads.wq2));
  CHECK(all_zero(std_grads.wk1));
  CHECK(all_zero(std_grads.wk2));
  CHECK(!all_zero(std_grads.wv));

  auto diff_grads = dift::closed_form_grads_diff(x, w, 0.7, g);
  CHECK(all_zero(diff_grads.wq1));
  CHECK(all_zero(diff_grads.wq2));
  CHECK(all_zero(diff_grads.wk1));
  CHECK(all_zero(diff_grads.wk2));
}

TEST_CASE("closed forms match the autodiff oracle to 1e-10 on random instances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const std::size_t dm = 8, d = 4, n = 6;
    auto w = SingleHeadWeights<D>::init(rng, dm, d, 0.5);
    Tensor<D> x = dift::randn<D>(rng, {n, dm});
    Tensor<D> g = dift::randn<D>(rng, {n, dm});
    const D lambda = rng.uniform_range(0.0, 1.5);

    auto cf_diff = dift::closed_form_grads_diff(x, w, lambda, g);
    auto ad_diff = dift::autodiff_grads<D>(x, w, lambda, g);
    INFO("diff operator, seed " << seed);
    CHECK(worst_pair_err(cf_diff, ad_diff) < 1e-10);

    auto cf_std = dift::closed_form_grads_std(x, w, g);
    auto ad_std = dift::autodiff_grads<D>(x, w, std::nullopt, g);
    INFO("standard operator, seed " << seed);
    CHECK(worst_pair_err(cf_std, ad_std) < 1e-10);
  }
}

TEST_CASE("grad_ratio_report: zero upstream omits ratios, norms are zero") {
  dift::GradCheckConfig cfg;
  Tensor<D> zero = Tensor<D>::zeros({static_cast<std::size_t>(cfg.seq_len),
                                     static_cast<std::size_t>(cfg.d_model)});
  auto rep = dift::grad_ratio_report<D>(cfg, 42, &zero);
  CHECK(rep.fixed_multiplier == doctest::Approx(1.0 - cfg.lambda_init));
  for (const auto& r : rep.records) {
    CHECK(r.grad_norm_diff == 0.0);
    CHECK(r.grad_norm_std == 0.0);
    CHECK(!r.ratio.has_value());
  }
}

TEST_CASE("grad_ratio_report: random init gives finite positive ratios and tiny errors") {
  dift::GradCheckConfig cfg;
  auto rep = dift::grad_ratio_report<D>(cfg, 7);
  CHECK(rep.records.size() == 6);
  CHECK(rep.lambda_value == doctest::Approx(cfg.lambda_init));
  for (const auto& r : rep.records) {
    INFO("parameter " << r.name);
    CHECK(r.closed_form_vs_autodiff_rel_err < 1e-10);
    CHECK(r.autodiff_vs_fd_rel_err < 1e-4);
    CHECK(r.grad_norm_diff > 0.0);
    CHECK(r.grad_norm_std > 0.0);
    REQUIRE(r.ratio.has_value());
    CHECK(*r.ratio > 0.0);
    CHECK(dift::finite(*r.ratio));
  }
}
