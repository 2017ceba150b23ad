#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cue/error.hpp"
#include "cue/rng.hpp"
#include "cue/store.hpp"

namespace cue {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Provenance { Certain, Uncertain, Combined };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Certain: return "CER";
    case Provenance::Uncertain: return "UNC";
    case Provenance::Combined: return "COMBINED";
  }
  return "CER";
}

/// Concept dictionary. Rows are concepts, columns are embedding channels; a
/// segment matrix A is approximated by W * concepts.
template <typename Scalar>
struct ConceptBank {
  Mat<Scalar> concepts;  // d x C, nonnegative
  Provenance provenance = Provenance::Certain;
  std::uint64_t seed = 0;
  bool normalized = false;
  std::vector<int> dead;  // concepts whose coefficients collapsed twice

  Eigen::Index size() const { return concepts.rows(); }
  Eigen::Index channels() const { return concepts.cols(); }
};

/// [first; second] stacked, first bank's concepts keep their indices.
template <typename Scalar>
ConceptBank<Scalar> combine(const ConceptBank<Scalar>& first, const ConceptBank<Scalar>& second) {
  require(first.channels() == second.channels(), ErrorCode::DimensionMismatch, "banks differ in channel count");
  ConceptBank<Scalar> out;
  out.concepts.resize(first.size() + second.size(), first.channels());
  out.concepts << first.concepts, second.concepts;
  out.provenance = Provenance::Combined;
  out.seed = first.seed;
  out.normalized = first.normalized && second.normalized;
  out.dead = first.dead;
  for (int j : second.dead) out.dead.push_back(j + static_cast<int>(first.size()));
  return out;
}

struct NmfOptions {
  int max_iter = 400;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::Certain;
};

template <typename Scalar>
struct NmfResult {
  ConceptBank<Scalar> bank;
  Mat<Scalar> coefficients;        // segments x d
  std::vector<double> objective;  // ||A - W V||_F after init and after every iteration
  int iterations = 0;
};

template <typename DA, typename DW, typename DV>
typename DA::Scalar reconstruction_error(const Eigen::MatrixBase<DA>& A, const Eigen::MatrixBase<DW>& W,
                                         const Eigen::MatrixBase<DV>& V) {
  return (A - W * V).norm();
}

template <typename DA, typename DW, typename DV>
typename DA::Scalar relative_error(const Eigen::MatrixBase<DA>& A, const Eigen::MatrixBase<DW>& W,
                                   const Eigen::MatrixBase<DV>& V) {
  const auto denom = A.norm();
  return denom > 0 ? reconstruction_error(A, W, V) / denom : reconstruction_error(A, W, V);
}

/// NMF by hierarchical alternating least squares. Every block update is an
/// exact minimization, so the objective never increases. A concept whose
/// coefficients collapse to zero is re-seeded once from the positive residual
/// of the worst-reconstructed row (its coefficients stay zero, so the
/// objective is unchanged at that step). After fitting, concept rows are
/// scaled to unit L2 norm with the scale folded into the coefficients.
template <typename Derived>
NmfResult<typename Derived::Scalar> fit_nmf(const Eigen::MatrixBase<Derived>& A, Eigen::Index d,
                                            const NmfOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = A.rows(), C = A.cols();
  require(n > 0 && C > 0, ErrorCode::EmptyInput, "empty segment matrix");
  require((A.array() >= Scalar(0)).all(), ErrorCode::NegativeActivations, "NMF input must be nonnegative");
  require(d >= 1 && d <= std::min(n, C), ErrorCode::RankTooHigh,
          std::to_string(d) + " concepts for a " + std::to_string(n) + "x" + std::to_string(C) + " matrix");
  const Eigen::Index nonzero_rows = (A.rowwise().squaredNorm().array() > Scalar(0)).count();
  require(nonzero_rows >= d, ErrorCode::EmptyInput,
          "need at least " + std::to_string(d) + " nonzero rows, have " + std::to_string(nonzero_rows));

  Rng rng(opt.seed);
  const Scalar scale = std::sqrt(A.mean() / Scalar(d));
  Mat<Scalar> W(n, d), V(d, C);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) W(i, j) = scale * Scalar(rng.uniform());
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index c = 0; c < C; ++c) V(j, c) = scale * Scalar(rng.uniform());

  NmfResult<Scalar> res;
  res.objective.push_back(static_cast<double>(reconstruction_error(A, W, V)));
  std::vector<bool> reseeded(static_cast<std::size_t>(d), false);

  for (int it = 0; it < opt.max_iter; ++it) {
    // Coefficient columns.
    const Mat<Scalar> AVt = A * V.transpose();
    const Mat<Scalar> VVt = V * V.transpose();
    for (Eigen::Index j = 0; j < d; ++j) {
      if (VVt(j, j) <= Scalar(0)) {
        W.col(j).setZero();
        continue;
      }
      W.col(j) = (W.col(j) + (AVt.col(j) - W * VVt.col(j)) / VVt(j, j)).cwiseMax(Scalar(0));
    }

    for (Eigen::Index j = 0; j < d; ++j) {
      if (reseeded[static_cast<std::size_t>(j)] || W.col(j).any()) continue;
      const Mat<Scalar> R = A - W * V;
      Eigen::Index worst = 0;
      R.rowwise().squaredNorm().maxCoeff(&worst);
      Vec<Scalar> row = R.row(worst).transpose().cwiseMax(Scalar(0));
      if (!row.any()) row = A.row(worst).transpose();
      V.row(j) = row.transpose();
      reseeded[static_cast<std::size_t>(j)] = true;
    }

    // Concept rows.
    const Mat<Scalar> WtA = W.transpose() * A;
    const Mat<Scalar> WtW = W.transpose() * W;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (WtW(j, j) <= Scalar(0)) continue;
      V.row(j) = (V.row(j) + (WtA.row(j) - WtW.row(j) * V) / WtW(j, j)).cwiseMax(Scalar(0));
    }

    const double obj = static_cast<double>(reconstruction_error(A, W, V));
    const double prev = res.objective.back();
    res.objective.push_back(obj);
    res.iterations = it + 1;
    if (obj == 0.0 || (prev - obj) / std::max(prev, 1e-300) < opt.tol) break;
  }

  for (Eigen::Index j = 0; j < d; ++j) {
    const Scalar norm = V.row(j).norm();
    if (norm > Scalar(0)) {
      V.row(j) /= norm;
      W.col(j) *= norm;
    }
    if (!W.col(j).any()) res.bank.dead.push_back(static_cast<int>(j));
  }
  res.bank.concepts = std::move(V);
  res.bank.provenance = opt.provenance;
  res.bank.seed = opt.seed;
  res.bank.normalized = true;
  res.coefficients = std::move(W);
  return res;
}

/// Per-row nonnegative least squares min ||x - V^T w|| over w >= 0, by cyclic
/// coordinate descent from w = 0 (each coordinate step can only lower the residual).
template <typename Derived, typename Scalar = typename Derived::Scalar>
Mat<Scalar> transform_nnls(const Eigen::MatrixBase<Derived>& A_new, const ConceptBank<Scalar>& bank,
                           double tol = 1e-8, int max_sweeps = 1000) {
  require(A_new.cols() == bank.channels(), ErrorCode::DimensionMismatch,
          "segment matrix has " + std::to_string(A_new.cols()) + " channels, bank has " +
              std::to_string(bank.channels()));
  const Eigen::Index d = bank.size();
  const Mat<Scalar>& V = bank.concepts;
  const Mat<Scalar> G = V * V.transpose();
  const Mat<Scalar> B = V * A_new.transpose();  // d x rows
  Mat<Scalar> W = Mat<Scalar>::Zero(A_new.rows(), d);
  Vec<Scalar> w(d), Gw(d);
  for (Eigen::Index r = 0; r < A_new.rows(); ++r) {
    w.setZero();
    Gw.setZero();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      Scalar max_delta(0);
      for (Eigen::Index j = 0; j < d; ++j) {
        if (G(j, j) <= Scalar(0)) continue;
        const Scalar next = std::max(Scalar(0), w(j) - (Gw(j) - B(j, r)) / G(j, j));
        const Scalar delta = next - w(j);
        if (delta != Scalar(0)) {
          Gw += G.col(j) * delta;
          w(j) = next;
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      if (max_delta <= Scalar(tol) * std::max(Scalar(1), w.maxCoeff())) break;
    }
    W.row(r) = w.transpose();
  }
  return W;
}

enum class Pooling { Mean, Max };

Pooling parse_pooling(std::string_view name);
std::string_view to_string(Pooling p);

template <typename Derived>
Vec<typename Derived::Scalar> pool_rows(const Eigen::MatrixBase<Derived>& rows, Pooling mode) {
  require(rows.rows() > 0, ErrorCode::EmptyItem, "item has no segments");
  if (mode == Pooling::Mean) return rows.colwise().mean().transpose();
  return rows.colwise().maxCoeff().transpose();
}

template <typename Derived>
Vec<typename Derived::Scalar> pool_item(const Eigen::MatrixBase<Derived>& W, const ItemRecord& item, Pooling mode) {
  require(item.segment_count > 0, ErrorCode::EmptyItem, "item '" + item.id + "' has no segments");
  require(item.segment_offset >= 0 && item.segment_offset + item.segment_count <= W.rows(),
          ErrorCode::DimensionMismatch, "item '" + item.id + "' segment range exceeds coefficient rows");
  return pool_rows(W.middleRows(item.segment_offset, item.segment_count), mode);
}

/// n_items x d matrix of pooled coefficients.
template <typename Derived>
Mat<typename Derived::Scalar> pool_items(const Eigen::MatrixBase<Derived>& W, const std::vector<ItemRecord>& items,
                                         Pooling mode) {
  Mat<typename Derived::Scalar> out(static_cast<Eigen::Index>(items.size()), W.cols());
  for (std::size_t i = 0; i < items.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pool_item(W, items[i], mode);
  return out;
}

struct SegmentHit {
  std::string item_id;
  std::int64_t segment = 0;  // index within the item
  double activation = 0.0;
};

/// The k largest coefficients of one concept over all segments; ties by (item id, segment) ascending.
template <typename Derived>
std::vector<SegmentHit> top_activating_segments(const Eigen::MatrixBase<Derived>& W,
                                                const std::vector<ItemRecord>& items, Eigen::Index concept_id,
                                                std::size_t k) {
  require(concept_id >= 0 && concept_id < W.cols(), ErrorCode::ConceptOutOfRange,
          "concept " + std::to_string(concept_id) + " outside [0," + std::to_string(W.cols()) + ")");
  std::vector<SegmentHit> hits;
  hits.reserve(static_cast<std::size_t>(W.rows()));
  for (const auto& it : items)
    for (std::int64_t s = 0; s < it.segment_count; ++s)
      hits.push_back({it.id, s, static_cast<double>(W(it.segment_offset + s, concept_id))});
  auto before = [](const SegmentHit& a, const SegmentHit& b) {
    if (a.activation != b.activation) return a.activation > b.activation;
    if (a.item_id != b.item_id) return a.item_id < b.item_id;
    return a.segment < b.segment;
  };
  const std::size_t take = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), before);
  hits.resize(take);
  return hits;
}

/// Per-segment concept activations of one item; grid items are read row-major.
struct AttributionMap {
  Eigen::MatrixXd activations;  // segments x d
  std::optional<std::pair<int, int>> grid;

  auto at(int row, int col) const { return activations.row(static_cast<Eigen::Index>(row) * grid->second + col); }
};

template <typename Derived>
AttributionMap attribution_map(const Eigen::MatrixBase<Derived>& W, const ItemRecord& item) {
  require(item.segment_offset + item.segment_count <= W.rows(), ErrorCode::DimensionMismatch,
          "item '" + item.id + "' segment range exceeds coefficient rows");
  return {W.middleRows(item.segment_offset, item.segment_count).template cast<double>(), item.grid};
}

}  // namespace cue
