#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cue/concepts.hpp"
#include "cue/grouping.hpp"
#include "cue/importance.hpp"
#include "cue/store.hpp"
#include "cue/strategies.hpp"
#include "cue/uncertainty.hpp"

namespace cue {

inline constexpr int kReportVersion = 1;

struct RunConfig {
  std::string dataset;
  std::string out;
  Measure measure = Measure::Total;
  int d_cer = 10;
  int d_unc = 10;
  int n_qmc = 4096;
  std::vector<std::uint64_t> seeds{0};
  Pooling pooling = Pooling::Mean;
  int n_mc_samples = 30;  // dropout masks for the importance function
  int nmf_max_iter = 400;
  double nmf_tol = 1e-6;
  int top_k = 6;
  std::vector<std::string> methods{"all"};
  std::vector<int> flags;  // concept ids in the combined [certain; uncertain] space
  bool auto_flag = false;
  std::string serve_addr = "127.0.0.1:8080";
};

nlohmann::json to_json(const RunConfig& c);
/// Overlays the keys present in `j` onto `base`.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
void validate(const RunConfig& c);

/// Everything the four pipeline steps produce. Concept ids in the combined
/// space: [0, d_cer) certain bank, [d_cer, d_cer + d_unc) uncertain bank.
struct PipelineResult {
  std::uint64_t seed = 0;
  Scores scores;
  std::vector<int> predicted;  // argmax of the posterior mean
  Gmm2<double> gmm;
  GroupAssignment groups;
  ConceptBank<double> bank_cer, bank_unc, bank_combined;
  int nmf_iterations_cer = 0, nmf_iterations_unc = 0;
  double nmf_error_cer = 0.0, nmf_error_unc = 0.0;
  Eigen::MatrixXd coeffs_cer, coeffs_unc, coeffs_combined;  // segments x d
  Eigen::MatrixXd local;  // n_items x (d_cer + d_unc), each row filled in its group's block
  GlobalImportance global;

  Eigen::Index d_cer() const { return bank_cer.size(); }
  Eigen::Index d_unc() const { return bank_unc.size(); }
  std::vector<std::size_t> members(Group g) const;
  /// Coefficients each item has against its own group's bank, in the combined space.
  Eigen::MatrixXd attribution(const std::vector<ItemRecord>& items) const;
};

Scores score_items(const PredictionSamples& samples);
std::vector<int> argmax_predictions(const PredictionSamples& samples);

PipelineResult run_pipeline(const Dataset& ds, const RunConfig& config, std::uint64_t seed);

nlohmann::json pipeline_report(const PipelineResult& r, const RunConfig& config, const Dataset& ds);

/// Writes report.json plus every tensor artifact into config.out.
void write_run(const PipelineResult& r, const RunConfig& config, const Dataset& ds);

struct Run {
  RunConfig config;
  Dataset dataset;
  PipelineResult result;
  std::filesystem::path dir;
};

Run load_run(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// downstream procedures

std::vector<FilterMethod> resolve_filter_methods(const std::vector<std::string>& names);

struct FilterOutcome {
  std::vector<int> flagged;  // combined ids
  std::vector<FilterRanking> rankings;
  std::vector<std::optional<Curve>> curves;  // present when truth flags exist
  std::vector<std::optional<double>> aucs;
};

/// Ranks the uncertain group. `flagged` holds combined ids, all inside the uncertain block.
FilterOutcome run_filter(const PipelineResult& r, const Dataset& ds, const std::vector<int>& flagged,
                         const std::vector<FilterMethod>& methods, Pooling pooling);

/// Combined ids chosen by the logistic probe over uncertain-bank coefficients.
std::vector<int> auto_flag(const PipelineResult& r, const Dataset& ds);

nlohmann::json filter_report(const FilterOutcome& f, const Dataset& ds);

struct RejectMethodOutcome {
  RejectionRanking ranking;
  Curve accuracy;
  Curve ood;
  double accuracy_auc = 0.0;
  double ood_auc = 0.0;
  double ood_at_40 = 0.0;  // OOD share retained after rejecting 40%
};

struct RejectOutcome {
  std::vector<RejectMethodOutcome> methods;  // in kAllRejectMethods order

  const RejectMethodOutcome& get(RejectMethod m) const;
};

RejectOutcome run_reject(const PipelineResult& r, const Dataset& ds, Pooling pooling);

/// Per-method AUCs across seeds, curves of the first seed, and the one-sided
/// Wilcoxon test of Weighted over Total accuracy AUCs (omitted with a warning
/// when there are too few nonzero differences).
nlohmann::json reject_report(const std::vector<std::uint64_t>& seeds, const std::vector<RejectOutcome>& per_seed);

struct InterventionOutcome {
  std::vector<int> ablated;
  std::vector<std::optional<double>> pearson;  // per combined concept; empty when the column is constant
  Repredictions before, after;
  EqualizedOdds gap_before, gap_after;
  std::vector<std::size_t> changed;
};

InterventionOutcome run_intervene(const PipelineResult& r, const Dataset& ds, const std::vector<int>& ablate,
                                  Pooling pooling);

nlohmann::json intervene_report(const InterventionOutcome& o, const Dataset& ds);

nlohmann::json curve_json(const Curve& c);
std::string curves_csv(const std::vector<Curve>& curves);

}  // namespace cue
