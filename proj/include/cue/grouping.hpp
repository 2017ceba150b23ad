#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cue/error.hpp"

namespace cue {

enum class Group { Certain = 0, Uncertain = 1 };

struct GmmFitInfo {
  int iterations = 0;
  double log_likelihood = 0.0;
  std::vector<double> trace;  // log-likelihood after every EM iteration
  bool converged = false;
};

/// Two-component 1-d Gaussian mixture; the "certain" component has the smaller mean.
template <typename Scalar>
struct Gmm2 {
  Scalar weight_certain{}, weight_uncertain{};
  Scalar mean_certain{}, mean_uncertain{};
  Scalar var_certain{}, var_uncertain{};
  GmmFitInfo info;
};

inline constexpr double kGmmVarianceFloor = 1e-8;

namespace detail {

template <typename Scalar>
Scalar log_normal(Scalar x, Scalar mean, Scalar var) {
  const Scalar d = x - mean;
  return Scalar(-0.5) * (std::log(Scalar(2) * std::numbers::pi_v<Scalar> * var) + d * d / var);
}

template <typename Scalar>
Scalar log_add(Scalar a, Scalar b) {
  const Scalar m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace detail

/// Posterior probability that score u came from the uncertain component, evaluated in log space.
template <typename Scalar>
Scalar unc_posterior(const Gmm2<Scalar>& g, Scalar u) {
  const Scalar lu = std::log(g.weight_uncertain) + detail::log_normal(u, g.mean_uncertain, g.var_uncertain);
  const Scalar lc = std::log(g.weight_certain) + detail::log_normal(u, g.mean_certain, g.var_certain);
  const Scalar z = lc - lu;
  if (z > Scalar(0)) {
    const Scalar e = std::exp(-z);
    return e / (Scalar(1) + e);
  }
  return Scalar(1) / (Scalar(1) + std::exp(z));
}

/// EM for a two-component 1-d GMM, initialized by splitting the sorted scores at the median.
template <typename Derived>
Gmm2<typename Derived::Scalar> fit_gmm_em(const Eigen::DenseBase<Derived>& scores, int max_iter = 500,
                                          double tol = 1e-8) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = scores.size();
  require(n >= 4, ErrorCode::NotEnoughData, "GMM needs at least 4 scores, got " + std::to_string(n));
  require(scores.derived().allFinite(), ErrorCode::NotEnoughData, "GMM scores must be finite");
  require(scores.maxCoeff() - scores.minCoeff() > Scalar(1e-12), ErrorCode::DegenerateData,
          "all scores are identical");
  const Scalar floor = Scalar(kGmmVarianceFloor);

  std::vector<Scalar> sorted(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = scores.derived()(i);
  std::sort(sorted.begin(), sorted.end());
  const Eigen::Index half = n / 2;
  auto stats = [&](Eigen::Index lo, Eigen::Index hi, Scalar& mean, Scalar& var) {
    mean = Scalar(0);
    for (Eigen::Index i = lo; i < hi; ++i) mean += sorted[i];
    mean /= Scalar(hi - lo);
    var = Scalar(0);
    for (Eigen::Index i = lo; i < hi; ++i) var += (sorted[i] - mean) * (sorted[i] - mean);
    var = std::max(var / Scalar(hi - lo), floor);
  };

  // Component 0/1 are internal; labels are assigned after the fit.
  Scalar w[2], mu[2], var[2];
  stats(0, half, mu[0], var[0]);
  stats(half, n, mu[1], var[1]);
  w[0] = Scalar(half) / Scalar(n);
  w[1] = Scalar(1) - w[0];

  Eigen::Array<Scalar, Eigen::Dynamic, 1> resp(n);
  GmmFitInfo info;
  Scalar prev = -std::numeric_limits<Scalar>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    // E-step; the log-likelihood is that of the parameters entering this step.
    Scalar ll(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar x = scores.derived()(i);
      const Scalar l0 = std::log(w[0]) + detail::log_normal(x, mu[0], var[0]);
      const Scalar l1 = std::log(w[1]) + detail::log_normal(x, mu[1], var[1]);
      const Scalar lse = detail::log_add(l0, l1);
      resp(i) = std::exp(l1 - lse);
      ll += lse;
    }
    info.trace.push_back(static_cast<double>(ll));
    info.iterations = it + 1;
    if (std::abs(ll - prev) < Scalar(tol)) {
      info.converged = true;
      prev = ll;
      break;
    }
    prev = ll;

    // M-step.
    const Scalar n1 = std::clamp(resp.sum(), Scalar(1e-12), Scalar(n) - Scalar(1e-12));
    const Scalar n0 = Scalar(n) - n1;
    Scalar s0(0), s1(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      s0 += (Scalar(1) - resp(i)) * scores.derived()(i);
      s1 += resp(i) * scores.derived()(i);
    }
    mu[0] = s0 / n0;
    mu[1] = s1 / n1;
    Scalar v0(0), v1(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar x = scores.derived()(i);
      v0 += (Scalar(1) - resp(i)) * (x - mu[0]) * (x - mu[0]);
      v1 += resp(i) * (x - mu[1]) * (x - mu[1]);
    }
    var[0] = std::max(v0 / n0, floor);
    var[1] = std::max(v1 / n1, floor);
    w[0] = n0 / Scalar(n);
    w[1] = n1 / Scalar(n);
  }
  info.log_likelihood = static_cast<double>(prev);

  // Larger mean is uncertain; near-equal means defer to the larger variance.
  int unc = mu[1] > mu[0] ? 1 : 0;
  if (std::abs(mu[1] - mu[0]) <= Scalar(1e-12)) unc = var[1] >= var[0] ? 1 : 0;
  const int cer = 1 - unc;
  Gmm2<Scalar> g;
  g.weight_certain = w[cer];
  g.weight_uncertain = w[unc];
  g.mean_certain = mu[cer];
  g.mean_uncertain = mu[unc];
  g.var_certain = var[cer];
  g.var_uncertain = var[unc];
  g.info = std::move(info);
  return g;
}

struct GroupAssignment {
  std::vector<double> f;
  std::vector<Group> group;

  std::size_t count(Group g) const { return static_cast<std::size_t>(std::count(group.begin(), group.end(), g)); }
};

template <typename Scalar, typename Derived>
GroupAssignment assign_groups(const Gmm2<Scalar>& g, const Eigen::DenseBase<Derived>& scores) {
  GroupAssignment out;
  out.f.reserve(static_cast<std::size_t>(scores.size()));
  out.group.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double f = static_cast<double>(unc_posterior(g, static_cast<Scalar>(scores.derived()(i))));
    out.f.push_back(f);
    out.group.push_back(f >= 0.5 ? Group::Uncertain : Group::Certain);
  }
  return out;
}

}  // namespace cue
