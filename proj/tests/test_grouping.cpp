#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cue/grouping.hpp"
#include "cue/rng.hpp"

using namespace cue;

namespace {

Eigen::VectorXd mixture(Rng& rng, int n, double w0, double m0, double s0, double m1, double s1) {
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = rng.bernoulli(w0) ? rng.normal(m0, s0) : rng.normal(m1, s1);
  return x;
}

double normal_pdf(double x, double m, double v) {
  return std::exp(-(x - m) * (x - m) / (2 * v)) / std::sqrt(2 * std::numbers::pi * v);
}

}  // namespace

TEST_CASE("EM recovers a separated mixture and labels the high component uncertain") {
  Rng rng(4);
  const auto x = mixture(rng, 4000, 0.7, 0.2, 0.25, 2.5, 0.4);
  const auto g = fit_gmm_em(x);
  CHECK(g.info.converged);
  CHECK(g.mean_certain == doctest::Approx(0.2).epsilon(0.1));
  CHECK(g.mean_uncertain == doctest::Approx(2.5).epsilon(0.04));
  CHECK(g.weight_certain == doctest::Approx(0.7).epsilon(0.05));
  CHECK(std::sqrt(g.var_uncertain) == doctest::Approx(0.4).epsilon(0.1));
  CHECK(g.weight_certain + g.weight_uncertain == doctest::Approx(1.0));
}

TEST_CASE("EM log-likelihood never decreases") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = mixture(rng, 500, rng.uniform(0.2, 0.8), 0.0, 0.5, rng.uniform(0.5, 3.0), rng.uniform(0.2, 1.0));
    const auto g = fit_gmm_em(x);
    for (std::size_t i = 1; i < g.info.trace.size(); ++i) REQUIRE(g.info.trace[i] >= g.info.trace[i - 1] - 1e-9);
  }
}

TEST_CASE("posterior agrees with the direct density ratio") {
  Gmm2<double> g;
  g.weight_certain = 0.6;
  g.weight_uncertain = 0.4;
  g.mean_certain = 0.3;
  g.mean_uncertain = 1.7;
  g.var_certain = 0.05;
  g.var_uncertain = 0.2;
  for (double u = -0.5; u <= 3.0; u += 0.125) {
    const double pu = 0.4 * normal_pdf(u, 1.7, 0.2), pc = 0.6 * normal_pdf(u, 0.3, 0.05);
    CHECK(unc_posterior(g, u) == doctest::Approx(pu / (pu + pc)).epsilon(1e-12));
  }
  // Far tails stay finite; the wider component wins both of them.
  CHECK(unc_posterior(g, 1e6) == doctest::Approx(1.0));
  CHECK(unc_posterior(g, -1e3) == doctest::Approx(1.0));
  g.var_uncertain = 0.05;
  CHECK(unc_posterior(g, -1e3) < 1e-10);
}

TEST_CASE("group assignment thresholds f at one half") {
  Rng rng(1);
  const auto x = mixture(rng, 300, 0.5, 0.0, 0.3, 2.0, 0.3);
  const auto g = fit_gmm_em(x);
  const auto a = assign_groups(g, x);
  REQUIRE(a.f.size() == 300);
  for (std::size_t i = 0; i < a.f.size(); ++i) {
    CHECK(a.f[i] >= 0.0);
    CHECK(a.f[i] <= 1.0);
    CHECK((a.group[i] == Group::Uncertain) == (a.f[i] >= 0.5));
  }
  CHECK(a.count(Group::Certain) + a.count(Group::Uncertain) == 300);
}

TEST_CASE("affine rescaling leaves the assignment unchanged") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = mixture(rng, 1000, 0.5, 0.5, 0.3, 3.0, 0.3);
    const double a = rng.uniform(0.1, 20.0), b = rng.uniform(-5.0, 5.0);
    const Eigen::VectorXd y = (a * x.array() + b).matrix();
    const auto gx = assign_groups(fit_gmm_em(x), x);
    const auto gy = assign_groups(fit_gmm_em(y), y);
    int same = 0;
    for (int i = 0; i < 1000; ++i) same += gx.group[i] == gy.group[i];
    CHECK(same >= 990);
  }
}

TEST_CASE("degenerate inputs") {
  Eigen::VectorXd few(3);
  few << 1, 2, 3;
  CHECK_THROWS_AS(fit_gmm_em(few), Error);
  Eigen::VectorXd flat = Eigen::VectorXd::Constant(50, 0.7);
  try {
    fit_gmm_em(flat);
    FAIL("expected DegenerateData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateData);
  }
  Eigen::VectorXd nan = Eigen::VectorXd::LinSpaced(10, 0, 1);
  nan(3) = std::nan("");
  CHECK_THROWS_AS(fit_gmm_em(nan), Error);
}

TEST_CASE("two point masses hit the variance floor without blowing up") {
  Eigen::VectorXd x(40);
  for (int i = 0; i < 40; ++i) x(i) = i < 25 ? 0.0 : 1.0;
  const auto g = fit_gmm_em(x);
  CHECK(g.mean_certain == doctest::Approx(0.0));
  CHECK(g.mean_uncertain == doctest::Approx(1.0));
  CHECK(g.var_certain >= kGmmVarianceFloor);
  const auto a = assign_groups(g, x);
  CHECK(a.count(Group::Uncertain) == 15);
}
