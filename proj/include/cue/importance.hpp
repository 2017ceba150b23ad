#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cue/concepts.hpp"
#include "cue/error.hpp"
#include "cue/grouping.hpp"
#include "cue/uncertainty.hpp"

namespace cue {

/// Paired base matrices for the total-index estimator, entries in [0,1].
struct MaskDesign {
  Eigen::MatrixXd a;  // n x d
  Eigen::MatrixXd b;  // n x d
  std::uint64_t seed = 0;
  std::string sequence;

  Eigen::Index samples() const { return a.rows(); }
  Eigen::Index dims() const { return a.cols(); }
};

inline constexpr Eigen::Index kMinQmcSamples = 64;

/// First n points of a 2d-dimensional Sobol sequence with a seeded random
/// digital shift; columns [0,d) form A, [d,2d) form B.
MaskDesign make_mask_design(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

/// Plain i.i.d. uniform design, used where a pseudo-random reference is wanted.
MaskDesign make_random_mask_design(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

inline constexpr double kZeroVariance = 1e-12;

/// Jansen total-index estimator:
///   S_i = sum_n (h(B_n) - h(B_n with column i from A_n))^2 / (2 n Var(h))
/// where Var(h) is the sample variance over all 2n base evaluations.
template <typename Fn>
Eigen::VectorXd sobol_total_indices(Fn&& h, const MaskDesign& design) {
  const Eigen::Index n = design.samples(), d = design.dims();
  require(n >= kMinQmcSamples, ErrorCode::InvalidConfig,
          "need at least " + std::to_string(kMinQmcSamples) + " design points, got " + std::to_string(n));
  Eigen::VectorXd fa(n), fb(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    fa(r) = h(design.a.row(r).transpose());
    fb(r) = h(design.b.row(r).transpose());
    require(std::isfinite(fa(r)) && std::isfinite(fb(r)), ErrorCode::NonFiniteEvaluation,
            "function of interest returned a non-finite value");
  }
  const double mean = (fa.sum() + fb.sum()) / double(2 * n);
  const double var =
      ((fa.array() - mean).square().sum() + (fb.array() - mean).square().sum()) / double(2 * n - 1);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
  if (var < kZeroVariance) return s;

  Eigen::VectorXd mixed(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      mixed = design.b.row(r).transpose();
      mixed(i) = design.a(r, i);
      const double f = h(mixed);
      require(std::isfinite(f), ErrorCode::NonFiniteEvaluation, "function of interest returned a non-finite value");
      acc += (fb(r) - f) * (fb(r) - f);
    }
    s(i) = acc / (2.0 * double(n) * var);
  }
  return s;
}

/// Same estimator with h evaluated on whole design matrices at once:
/// h_rows(M) returns one value per row of M.
template <typename Fn>
Eigen::VectorXd sobol_total_indices_batched(Fn&& h_rows, const MaskDesign& design) {
  const Eigen::Index n = design.samples(), d = design.dims();
  require(n >= kMinQmcSamples, ErrorCode::InvalidConfig,
          "need at least " + std::to_string(kMinQmcSamples) + " design points, got " + std::to_string(n));
  auto eval = [&](const Eigen::MatrixXd& m) {
    Eigen::VectorXd v = h_rows(m);
    require(v.allFinite(), ErrorCode::NonFiniteEvaluation, "function of interest returned a non-finite value");
    return v;
  };
  const Eigen::VectorXd fa = eval(design.a), fb = eval(design.b);
  const double mean = (fa.sum() + fb.sum()) / double(2 * n);
  const double var =
      ((fa.array() - mean).square().sum() + (fb.array() - mean).square().sum()) / double(2 * n - 1);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
  if (var < kZeroVariance) return s;
  Eigen::MatrixXd mixed = design.b;
  for (Eigen::Index i = 0; i < d; ++i) {
    mixed.col(i) = design.a.col(i);
    s(i) = (fb - eval(mixed)).squaredNorm() / (2.0 * double(n) * var);
    mixed.col(i) = design.b.col(i);
  }
  return s;
}

enum class ImportanceScope { Local, GlobalCertain, GlobalUncertain };

struct ImportanceVector {
  Eigen::VectorXd raw;  // estimator output, may dip slightly below zero
  ImportanceScope scope = ImportanceScope::Local;
  std::string item_id;
  bool empty = false;  // global vector over a group with no members

  Eigen::VectorXd reported() const { return raw.cwiseMax(0.0); }
};

/// The uncertainty response of one item to a concept mask m:
///   f(u(mc_head_forward(pool(((W_item o m) V)))))
/// where m scales each concept's coefficients uniformly over the item's
/// segments. With mean pooling, pool((W o m) V) = (mean(W) o m) V, so the
/// per-mask head products V diag(mask_n) W_head are folded ahead of time.
class ConceptResponse {
 public:
  ConceptResponse(Eigen::MatrixXd item_coefficients, const ConceptBank<double>& bank, const HeadParams& head,
                  const DropoutMaskSet& masks, const Gmm2<double>& gmm, Pooling pooling, Measure measure);

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& mask) const;

  /// One response per row of `masks` (n x d); mean pooling evaluates all rows with one product per dropout mask.
  Eigen::VectorXd rows(const Eigen::MatrixXd& masks) const;

  /// Same function evaluated literally: reconstruct every segment, pool, run the dropout head.
  double reference(const Eigen::Ref<const Eigen::VectorXd>& mask) const;

  Eigen::Index concepts() const { return coeffs_.cols(); }

 private:
  double score(const Eigen::MatrixXd& probs) const;

  Eigen::MatrixXd coeffs_;  // segments x d
  const ConceptBank<double>* bank_;
  const HeadParams* head_;
  const DropoutMaskSet* masks_;
  const Gmm2<double>* gmm_;
  Pooling pooling_;
  Measure measure_;
  Eigen::VectorXd pooled_;                // d, mean pooling only
  std::vector<Eigen::MatrixXd> folded_;  // per dropout mask: d x K
};

/// Local importance of each concept of `bank` for one item.
ImportanceVector local_importance(const ItemRecord& item, const Eigen::MatrixXd& coefficients,
                                  const ConceptBank<double>& bank, const HeadParams& head,
                                  const DropoutMaskSet& masks, const Gmm2<double>& gmm, const MaskDesign& design,
                                  Pooling pooling = Pooling::Mean, Measure measure = Measure::Total);

struct GlobalImportance {
  ImportanceVector certain;
  ImportanceVector uncertain;
};

/// Mean of the local vectors within each predicted group. Locals of certain
/// items index the certain bank, those of uncertain items the uncertain bank.
GlobalImportance global_importance(std::span<const ImportanceVector> locals, std::span<const Group> groups,
                                   Eigen::Index d_certain, Eigen::Index d_uncertain);

}  // namespace cue
