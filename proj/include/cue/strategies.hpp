#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cue/concepts.hpp"
#include "cue/store.hpp"
#include "cue/uncertainty.hpp"

namespace cue {

enum class FilterMethod { OursImportance, OursNMF, BaselineTotal, BaselineAleatoric, BaselineEpistemic };
enum class RejectMethod { ConceptOnly, Weighted, Total, Aleatoric, Epistemic };

FilterMethod parse_filter_method(std::string_view name);
std::string_view to_string(FilterMethod m);
RejectMethod parse_reject_method(std::string_view name);
std::string_view to_string(RejectMethod m);

inline constexpr FilterMethod kAllFilterMethods[] = {FilterMethod::OursImportance, FilterMethod::OursNMF,
                                                     FilterMethod::BaselineTotal, FilterMethod::BaselineAleatoric,
                                                     FilterMethod::BaselineEpistemic};
inline constexpr RejectMethod kAllRejectMethods[] = {RejectMethod::ConceptOnly, RejectMethod::Weighted,
                                                     RejectMethod::Total, RejectMethod::Aleatoric,
                                                     RejectMethod::Epistemic};

/// Item indices, most-noise-first.
struct FilterRanking {
  std::vector<std::size_t> order;
  FilterMethod method = FilterMethod::OursNMF;
  std::vector<int> flagged;  // indices into the uncertain bank
};

/// Item indices, first-rejected-first.
struct RejectionRanking {
  std::vector<std::size_t> order;
  RejectMethod method = RejectMethod::Weighted;
};

struct Curve {
  std::vector<double> x;
  std::vector<double> y;
  std::string label;
};

using Scores = std::vector<UncertaintyScores<double>>;

/// Sorts `candidates` by descending value, ties by ascending item id.
std::vector<std::size_t> rank_descending(std::span<const std::size_t> candidates, std::span<const double> values,
                                         const std::vector<ItemRecord>& items);

/// Rows of `per_item` are in the uncertain bank's concept space (local importances or pooled coefficients).
FilterRanking noise_filter_ranking(const Eigen::MatrixXd& per_item, std::span<const int> flagged,
                                   std::span<const std::size_t> candidates, const std::vector<ItemRecord>& items,
                                   FilterMethod method);

FilterRanking baseline_uncertainty_ranking(const Scores& scores, Measure measure,
                                           std::span<const std::size_t> candidates,
                                           const std::vector<ItemRecord>& items);

/// Retraining selection consumes the ranking from the least-noisy end:
/// y(k/n) is the uncorrupted share among the k items selected first.
Curve kept_useful_curve(const FilterRanking& ranking, const std::vector<ItemRecord>& items);

/// Concept-based rejection over the combined bank [certain; uncertain].
RejectionRanking rejection_ranking(const Eigen::MatrixXd& pooled_combined, const Eigen::VectorXd& e_certain,
                                   const Eigen::VectorXd& e_uncertain, std::span<const double> f,
                                   const std::vector<ItemRecord>& items, RejectMethod method);

RejectionRanking baseline_rejection_ranking(const Scores& scores, Measure measure,
                                            const std::vector<ItemRecord>& items);

/// Rejection grid {0, 0.01, ..., 0.99}; rejecting x removes floor(x n) items.
std::vector<double> rejection_grid();

/// Retained accuracy; OOD items always count as errors.
Curve accuracy_rejection_curve(std::span<const std::size_t> order, std::span<const int> predicted,
                               const std::vector<ItemRecord>& items);

/// Share of retained items that are OOD.
Curve ood_rejection_curve(std::span<const std::size_t> order, const std::vector<ItemRecord>& items);

/// Trapezoidal area normalized by the x range.
double curve_auc(const Curve& c);

/// Linear interpolation of a curve at x.
double curve_at(const Curve& c, double x);

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;
  std::size_t n = 0;  // nonzero differences
  bool exact = true;
};

/// One-sided signed-rank test; alternative: the differences are shifted above zero.
WilcoxonResult wilcoxon_one_sided(std::span<const double> differences);

double pearson_correlation(std::span<const double> a, std::span<const double> b);

struct Repredictions {
  std::vector<int> predicted;
  Eigen::MatrixXd probabilities;  // n_items x K
};

/// Zeroes the ablated concepts, reconstructs every segment, pools and runs the head without dropout.
Repredictions concept_ablation_repredict(const Eigen::MatrixXd& coefficients, const ConceptBank<double>& bank,
                                         std::span<const int> ablate, const std::vector<ItemRecord>& items,
                                         const HeadParams& head, Pooling pooling = Pooling::Mean);

struct EqualizedOdds {
  double gap = 0.0;
  int classes_used = 0;
  std::vector<std::string> skipped;  // cells without support, e.g. "class 3 TPR"
};

/// Mean over classes of max(|TPR gap|, |FPR gap|) between group_attr 1 and 0,
/// one-vs-rest; items without a true label are ignored.
EqualizedOdds equalized_odds_gap(std::span<const int> predicted, const std::vector<ItemRecord>& items,
                                 int n_classes);

/// Simulated reviewer: an L2-regularized logistic probe on segment coefficients
/// separating segments of corrupted items from the rest. Concepts whose weight
/// is positive and at least half the largest weight are flagged.
std::vector<int> auto_flag_concepts(const Eigen::MatrixXd& segment_coefficients,
                                    std::span<const std::size_t> candidates, const std::vector<ItemRecord>& items);

}  // namespace cue
