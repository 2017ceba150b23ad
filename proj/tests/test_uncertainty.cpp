#include <doctest.h>

#include <cmath>

#include "cue/uncertainty.hpp"
#include "support.hpp"

using namespace cue;

TEST_CASE("entropy of known distributions") {
  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(8, 1.0 / 8);
  CHECK(entropy_bits(uniform) == doctest::Approx(3.0).epsilon(1e-14));

  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(5);
  onehot(2) = 1.0;
  CHECK(entropy_bits(onehot) == 0.0);

  Eigen::Vector3d p(0.5, 0.25, 0.25);
  CHECK(entropy_bits(p) == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("hand-worked decomposition") {
  // Two confident samples that disagree: each sample has zero entropy, the mean is a coin flip.
  Eigen::Matrix<double, 2, 2> disagree;
  disagree << 1, 0, 0, 1;
  auto s = uncertainty_scores(disagree);
  CHECK(s.total == doctest::Approx(1.0));
  CHECK(s.aleatoric == 0.0);
  CHECK(s.epistemic == doctest::Approx(1.0));

  // Identical samples carry no epistemic part.
  Eigen::Matrix<double, 3, 2> agree;
  agree << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
  s = uncertainty_scores(agree);
  CHECK(s.total == doctest::Approx(1.0));
  CHECK(s.aleatoric == doctest::Approx(1.0));
  CHECK(s.epistemic == 0.0);
}

TEST_CASE("decomposition identity holds bitwise on random samples") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(9));
    const int n = 1 + static_cast<int>(rng.below(50));
    const auto p = testing::random_prob_samples(rng, n, k, trial % 3 == 0 ? 4.0 : 0.0);
    const auto s = uncertainty_scores(p);
    REQUIRE(s.aleatoric + s.epistemic == s.total);
    CHECK(s.epistemic >= -1e-9);
    CHECK(s.aleatoric <= s.total + 1e-12);
    CHECK(s.total <= std::log2(double(k)) + 1e-9);
  }
}

TEST_CASE("float scalar path") {
  Eigen::MatrixXf p(2, 3);
  p << 0.2f, 0.3f, 0.5f, 0.6f, 0.3f, 0.1f;
  const auto s = uncertainty_scores(p);
  CHECK(s.aleatoric + s.epistemic == s.total);
  CHECK(s.total == doctest::Approx(uncertainty_scores(p.cast<double>().eval()).total).epsilon(1e-5));
}

TEST_CASE("empty sample set") {
  Eigen::MatrixXd p(0, 3);
  CHECK_THROWS_AS(total_uncertainty(p), Error);
  try {
    aleatoric_uncertainty(p);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySamples);
  }
}

TEST_CASE("dropout masks") {
  const auto m = make_dropout_masks(5, 400, 50, 0.2);
  const double keep = 1.0 / 0.8;
  int zeros = 0;
  for (Eigen::Index i = 0; i < m.masks.size(); ++i) {
    const double v = m.masks.data()[i];
    REQUIRE((v == 0.0 || v == keep));
    zeros += v == 0.0;
  }
  CHECK(double(zeros) / double(m.masks.size()) == doctest::Approx(0.2).epsilon(0.1));
  CHECK(make_dropout_masks(5, 400, 50, 0.2).masks == m.masks);
  CHECK(make_dropout_masks(6, 400, 50, 0.2).masks != m.masks);
  CHECK_THROWS_AS(make_dropout_masks(5, 4, 4, 1.0), Error);
  CHECK(make_dropout_masks(1, 3, 7, 0.0).masks == Eigen::MatrixXd::Ones(3, 7));
}

TEST_CASE("dropout head forward") {
  Rng rng(2);
  HeadParams head{Eigen::MatrixXd::Random(6, 3), Eigen::VectorXd::Random(3), 0.2};
  Eigen::VectorXd x = Eigen::VectorXd::Random(6).cwiseAbs();
  const auto masks = make_dropout_masks(9, 30, 6, 0.2);
  const auto p = mc_head_forward(x, head, masks);
  CHECK(p.rows() == 30);
  for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(p.row(r).sum() == doctest::Approx(1.0));

  // Row 4 by hand.
  Eigen::VectorXd z = head.weights.transpose() * x.cwiseProduct(masks.masks.row(4).transpose()) + head.bias;
  z = z.array().exp();
  z /= z.sum();
  CHECK((p.row(4).transpose() - z).cwiseAbs().maxCoeff() < 1e-14);

  // No dropout: every row is the deterministic pass.
  const auto plain = mc_head_forward(x, head, make_dropout_masks(1, 4, 6, 0.0));
  CHECK((plain.row(2).transpose() - head_forward(x, head)).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::VectorXd big = Eigen::VectorXd::Constant(3, 800.0);
  CHECK(softmax(big).allFinite());
}

TEST_CASE("measure names") {
  for (auto m : {Measure::Total, Measure::Aleatoric, Measure::Epistemic}) CHECK(parse_measure(to_string(m)) == m);
  CHECK_THROWS_AS(parse_measure("mutual"), Error);
}
