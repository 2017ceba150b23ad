#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

#include "cue/error.hpp"
#include "cue/rng.hpp"
#include "cue/store.hpp"

namespace cue {

enum class Measure { Total, Aleatoric, Epistemic };

Measure parse_measure(std::string_view name);
std::string_view to_string(Measure m);

/// Shannon entropy in bits with 0 log 0 := 0.
template <typename Derived>
typename Derived::Scalar entropy_bits(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar v = p(i);
    if (v > Scalar(0)) h -= v * std::log2(v);
  }
  return h;
}

/// Elementwise mean of the N sample rows.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> posterior_mean(const Eigen::MatrixBase<Derived>& samples) {
  require(samples.rows() >= 1, ErrorCode::EmptySamples, "no predictive samples");
  return samples.colwise().mean().transpose();
}

template <typename Derived>
typename Derived::Scalar total_uncertainty(const Eigen::MatrixBase<Derived>& samples) {
  return entropy_bits(posterior_mean(samples));
}

template <typename Derived>
typename Derived::Scalar aleatoric_uncertainty(const Eigen::MatrixBase<Derived>& samples) {
  using Scalar = typename Derived::Scalar;
  require(samples.rows() >= 1, ErrorCode::EmptySamples, "no predictive samples");
  Scalar acc(0);
  for (Eigen::Index r = 0; r < samples.rows(); ++r) acc += entropy_bits(samples.row(r));
  return acc / Scalar(samples.rows());
}

template <typename Scalar>
struct UncertaintyScores {
  Scalar total{};
  Scalar aleatoric{};
  Scalar epistemic{};

  Scalar get(Measure m) const {
    switch (m) {
      case Measure::Total: return total;
      case Measure::Aleatoric: return aleatoric;
      case Measure::Epistemic: return epistemic;
    }
    return total;
  }
};

namespace detail {
// u_e = u_t - u_a, nudged by ulps so that u_a + u_e reproduces u_t exactly in floating point.
template <typename Scalar>
Scalar exact_difference(Scalar total, Scalar aleatoric) {
  Scalar e = total - aleatoric;
  for (int guard = 0; guard < 8 && aleatoric + e != total; ++guard)
    e = std::nextafter(e, aleatoric + e < total ? Scalar(INFINITY) : Scalar(-INFINITY));
  return e;
}
}  // namespace detail

template <typename Derived>
UncertaintyScores<typename Derived::Scalar> uncertainty_scores(const Eigen::MatrixBase<Derived>& samples) {
  using Scalar = typename Derived::Scalar;
  UncertaintyScores<Scalar> s;
  s.total = total_uncertainty(samples);
  s.aleatoric = aleatoric_uncertainty(samples);
  s.epistemic = std::max(Scalar(0), detail::exact_difference(s.total, s.aleatoric));
  // Some (u_t, u_a) pairs admit no u_e with fl(u_a + u_e) == u_t (round-half-even ties);
  // moving u_t by that last ulp keeps the identity exact.
  s.total = s.aleatoric + s.epistemic;
  return s;
}

template <typename Derived>
typename Derived::Scalar epistemic_uncertainty(const Eigen::MatrixBase<Derived>& samples) {
  return uncertainty_scores(samples).epistemic;
}

/// N inverted-dropout masks over C channels; entries are 0 or 1/(1-rate).
struct DropoutMaskSet {
  Eigen::MatrixXd masks;  // N x C
  std::uint64_t seed = 0;
  double rate = 0.0;

  Eigen::Index samples() const { return masks.rows(); }
  Eigen::Index channels() const { return masks.cols(); }
};

DropoutMaskSet make_dropout_masks(std::uint64_t seed, Eigen::Index n_samples, Eigen::Index channels, double rate);

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Vec = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>;
  Vec z = logits;
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  return z / z.sum();
}

/// One softmax(W^T (x o m) + b) row per dropout mask.
template <typename Derived>
Eigen::MatrixXd mc_head_forward(const Eigen::MatrixBase<Derived>& embedding, const HeadParams& head,
                                const DropoutMaskSet& masks) {
  require(embedding.size() == head.channels() && masks.channels() == head.channels(), ErrorCode::DimensionMismatch,
          "embedding, head and masks must agree on channel count");
  Eigen::MatrixXd out(masks.samples(), head.classes());
  const Eigen::VectorXd x = embedding.template cast<double>();
  for (Eigen::Index n = 0; n < masks.samples(); ++n) {
    const Eigen::VectorXd logits =
        head.weights.transpose() * x.cwiseProduct(masks.masks.row(n).transpose()) + head.bias;
    out.row(n) = softmax(logits).transpose();
  }
  return out;
}

/// Deterministic pass (no dropout).
template <typename Derived>
Eigen::VectorXd head_forward(const Eigen::MatrixBase<Derived>& embedding, const HeadParams& head) {
  require(embedding.size() == head.channels(), ErrorCode::DimensionMismatch, "embedding/head channel mismatch");
  return softmax(head.weights.transpose() * embedding.template cast<double>() + head.bias);
}

}  // namespace cue
