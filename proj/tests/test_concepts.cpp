#include <doctest.h>

#include <limits>

#include "cue/concepts.hpp"
#include "support.hpp"

using namespace cue;

namespace {

Eigen::MatrixXd random_nonneg(Rng& rng, Eigen::Index r, Eigen::Index c, double sparsity = 0.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform() < sparsity ? 0.0 : rng.uniform();
  return m;
}

// Exhaustive NNLS: the optimum is an unconstrained least-squares fit on some support set.
Eigen::VectorXd nnls_brute(const Eigen::MatrixXd& M, const Eigen::VectorXd& x) {
  const int d = static_cast<int>(M.cols());
  Eigen::VectorXd best = Eigen::VectorXd::Zero(d);
  double best_r = x.squaredNorm();
  for (int mask = 1; mask < (1 << d); ++mask) {
    std::vector<int> cols;
    for (int j = 0; j < d; ++j)
      if (mask >> j & 1) cols.push_back(j);
    Eigen::MatrixXd S(M.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) S.col(static_cast<Eigen::Index>(k)) = M.col(cols[k]);
    const Eigen::VectorXd w = S.colPivHouseholderQr().solve(x);
    if ((w.array() < 0).any()) continue;
    const double r = (x - S * w).squaredNorm();
    if (r < best_r) {
      best_r = r;
      best.setZero();
      for (std::size_t k = 0; k < cols.size(); ++k) best(cols[k]) = w(static_cast<Eigen::Index>(k));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("NMF reconstructs an exactly factorizable matrix") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd W = random_nonneg(rng, 120, 4, 0.3), V = random_nonneg(rng, 4, 16, 0.4);
    const Eigen::MatrixXd A = W * V;
    const auto res = fit_nmf(A, 4, {.max_iter = 3000, .tol = 1e-12, .seed = std::uint64_t(trial)});
    CHECK(relative_error(A, res.coefficients, res.bank.concepts) < 1e-3);
  }
}

TEST_CASE("NMF objective is monotone and the result is normalized") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd A = random_nonneg(rng, 60, 12);
    const auto res = fit_nmf(A, 5, {.max_iter = 200, .tol = 0.0, .seed = std::uint64_t(trial)});
    for (std::size_t i = 1; i < res.objective.size(); ++i)
      REQUIRE(res.objective[i] <= res.objective[i - 1] * (1 + 1e-12));
    CHECK((res.bank.concepts.array() >= 0).all());
    CHECK((res.coefficients.array() >= 0).all());
    CHECK(res.bank.normalized);
    for (Eigen::Index j = 0; j < 5; ++j)
      if (res.coefficients.col(j).any()) CHECK(res.bank.concepts.row(j).norm() == doctest::Approx(1.0));
    // Folding the row scales into the coefficients leaves the product unchanged.
    CHECK(reconstruction_error(A, res.coefficients, res.bank.concepts) ==
          doctest::Approx(res.objective.back()).epsilon(1e-9));
  }
}

TEST_CASE("NMF is bitwise reproducible per seed") {
  Rng rng(9);
  const Eigen::MatrixXd A = random_nonneg(rng, 80, 10);
  const auto a = fit_nmf(A, 4, {.seed = 17});
  const auto b = fit_nmf(A, 4, {.seed = 17});
  CHECK(a.bank.concepts == b.bank.concepts);
  CHECK(a.coefficients == b.coefficients);
  CHECK(fit_nmf(A, 4, {.seed = 18}).bank.concepts != a.bank.concepts);
}

TEST_CASE("NMF input checks") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Ones(5, 3);
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoFailure;
  };
  CHECK(code([&] { fit_nmf(A, 4); }) == ErrorCode::RankTooHigh);
  CHECK(code([&] { fit_nmf(A, 0); }) == ErrorCode::RankTooHigh);
  Eigen::MatrixXd neg = A;
  neg(1, 1) = -1;
  CHECK(code([&] { fit_nmf(neg, 2); }) == ErrorCode::NegativeActivations);
  Eigen::MatrixXd sparse = Eigen::MatrixXd::Zero(5, 3);
  sparse(0, 0) = 1;
  CHECK(code([&] { fit_nmf(sparse, 2); }) == ErrorCode::EmptyInput);
}

TEST_CASE("NNLS matches exhaustive support enumeration") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(4));
    ConceptBank<double> bank;
    bank.concepts = random_nonneg(rng, d, 7);
    Eigen::MatrixXd X(3, 7);
    for (Eigen::Index r = 0; r < 3; ++r)
      for (Eigen::Index c = 0; c < 7; ++c) X(r, c) = rng.uniform(-0.3, 1.0);
    const auto W = transform_nnls(X, bank, 1e-12, 20000);
    for (Eigen::Index r = 0; r < 3; ++r) {
      const Eigen::VectorXd w = W.row(r).transpose();
      const Eigen::VectorXd oracle = nnls_brute(bank.concepts.transpose(), X.row(r).transpose());
      const double got = (X.row(r).transpose() - bank.concepts.transpose() * w).squaredNorm();
      const double want = (X.row(r).transpose() - bank.concepts.transpose() * oracle).squaredNorm();
      CHECK((w.array() >= 0).all());
      CHECK(got <= want + 1e-8);
      CHECK(got <= X.row(r).squaredNorm() + 1e-12);  // never worse than w = 0
    }
  }
}

TEST_CASE("NNLS recovers planted nonnegative coefficients") {
  Rng rng(2);
  ConceptBank<double> bank;
  bank.concepts = random_nonneg(rng, 4, 20);
  const Eigen::MatrixXd W = random_nonneg(rng, 30, 4);
  const auto got = transform_nnls((W * bank.concepts).eval(), bank, 1e-12, 20000);
  CHECK((got - W).cwiseAbs().maxCoeff() < 1e-5);

  Eigen::MatrixXd wrong(2, 19);
  CHECK_THROWS_AS(transform_nnls(wrong, bank), Error);
}

TEST_CASE("combined bank keeps the first bank's indices") {
  ConceptBank<double> a, b;
  a.concepts = Eigen::MatrixXd::Identity(2, 3);
  b.concepts = Eigen::MatrixXd::Ones(1, 3);
  a.dead = {1};
  b.dead = {0};
  a.normalized = b.normalized = true;
  const auto c = combine(a, b);
  CHECK(c.size() == 3);
  CHECK(c.concepts.row(2) == b.concepts.row(0));
  CHECK(c.provenance == Provenance::Combined);
  CHECK(c.dead == std::vector<int>{1, 2});
}

TEST_CASE("pooling, top segments and attribution maps") {
  std::vector<ItemRecord> items = {{"b", 0, 2, std::nullopt, {}, {}, {}, {}},
                                   {"a", 2, 4, std::pair{2, 2}, {}, {}, {}, {}}};
  Eigen::MatrixXd W(6, 2);
  W << 1, 0,  //
      3, 2,   //
      5, 0,   //
      3, 1,   //
      0, 0,   //
      1, 9;
  CHECK(pool_item(W, items[0], Pooling::Mean) == Eigen::Vector2d(2, 1));
  CHECK(pool_item(W, items[1], Pooling::Max) == Eigen::Vector2d(5, 9));
  CHECK(pool_items(W, items, Pooling::Mean).row(1) == Eigen::RowVector2d(2.25, 2.5));

  const auto hits = top_activating_segments(W, items, 0, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].item_id == "a");
  CHECK(hits[0].segment == 0);
  // tie at 3.0: item "a" sorts before item "b"
  CHECK(hits[1].item_id == "a");
  CHECK(hits[1].segment == 1);
  CHECK(hits[2].item_id == "b");
  CHECK(top_activating_segments(W, items, 1, 100).size() == 6);
  CHECK_THROWS_AS(top_activating_segments(W, items, 2, 1), Error);

  const auto map = attribution_map(W, items[1]);
  CHECK(map.at(1, 1)(1) == 9.0);
  CHECK(map.at(0, 1)(0) == 3.0);

  ItemRecord empty{"e", 0, 0, {}, {}, {}, {}, {}};
  CHECK_THROWS_AS(pool_item(W, empty, Pooling::Mean), Error);
}
