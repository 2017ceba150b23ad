#include "cue/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cue {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kNmfCer = 1, kNmfUnc = 2, kDropout = 3, kDesignCer = 4, kDesignUnc = 5 };

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& A, const std::vector<ItemRecord>& items,
                            const std::vector<std::size_t>& members) {
  Eigen::Index rows = 0;
  for (auto i : members) rows += items[i].segment_count;
  Eigen::MatrixXd out(rows, A.cols());
  Eigen::Index at = 0;
  for (auto i : members) {
    out.middleRows(at, items[i].segment_count) = A.middleRows(items[i].segment_offset, items[i].segment_count);
    at += items[i].segment_count;
  }
  return out;
}

std::vector<int> top_concepts(const Eigen::VectorXd& e, int k) {
  std::vector<int> idx(static_cast<std::size_t>(e.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return e(a) > e(b); });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(k, 0))));
  return idx;
}

json bank_sidecar(const ConceptBank<double>& b, int iterations, double rel_error) {
  return {{"provenance", to_string(b.provenance)},
          {"d", b.size()},
          {"channels", b.channels()},
          {"seed", b.seed},
          {"normalized", b.normalized},
          {"dead", b.dead},
          {"nmf_iterations", iterations},
          {"relative_error", rel_error}};
}

ConceptBank<double> read_bank(const fs::path& dir, const std::string& stem) {
  ConceptBank<double> b;
  b.concepts = read_tensor(dir / (stem + ".npy")).to_matrix();
  const json j = json::parse(read_text(dir / (stem + ".json")));
  const auto prov = j.at("provenance").get<std::string>();
  b.provenance = prov == "UNC" ? Provenance::Uncertain : prov == "COMBINED" ? Provenance::Combined : Provenance::Certain;
  b.seed = j.at("seed").get<std::uint64_t>();
  b.normalized = j.at("normalized").get<bool>();
  b.dead = j.at("dead").get<std::vector<int>>();
  return b;
}

std::vector<std::int64_t> to_i64(const std::vector<int>& v) { return {v.begin(), v.end()}; }

}  // namespace

// ---------------------------------------------------------------------------
// config

json to_json(const RunConfig& c) {
  return {{"dataset", c.dataset},
          {"out", c.out},
          {"measure", to_string(c.measure)},
          {"d_cer", c.d_cer},
          {"d_unc", c.d_unc},
          {"n_qmc", c.n_qmc},
          {"seeds", c.seeds},
          {"pooling", to_string(c.pooling)},
          {"n_mc_samples", c.n_mc_samples},
          {"nmf_max_iter", c.nmf_max_iter},
          {"nmf_tol", c.nmf_tol},
          {"top_k", c.top_k},
          {"methods", c.methods},
          {"flags", c.flags},
          {"auto_flag", c.auto_flag},
          {"serve_addr", c.serve_addr}};
}

RunConfig config_from_json(const json& j, RunConfig c) {
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.out = j.value("out", c.out);
    if (j.contains("measure")) c.measure = parse_measure(j["measure"].get<std::string>());
    c.d_cer = j.value("d_cer", c.d_cer);
    c.d_unc = j.value("d_unc", c.d_unc);
    c.n_qmc = j.value("n_qmc", c.n_qmc);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("pooling")) c.pooling = parse_pooling(j["pooling"].get<std::string>());
    c.n_mc_samples = j.value("n_mc_samples", c.n_mc_samples);
    c.nmf_max_iter = j.value("nmf_max_iter", c.nmf_max_iter);
    c.nmf_tol = j.value("nmf_tol", c.nmf_tol);
    c.top_k = j.value("top_k", c.top_k);
    if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
    if (j.contains("flags")) c.flags = j["flags"].get<std::vector<int>>();
    c.auto_flag = j.value("auto_flag", c.auto_flag);
    c.serve_addr = j.value("serve_addr", c.serve_addr);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return c;
}

void validate(const RunConfig& c) {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::InvalidConfig, what); };
  check(c.d_cer >= 1 && c.d_unc >= 1, "d_cer and d_unc must be >= 1");
  check(c.n_qmc >= kMinQmcSamples, "n_qmc must be >= " + std::to_string(kMinQmcSamples));
  check(!c.seeds.empty(), "at least one seed is required");
  check(c.n_mc_samples >= 1, "n_mc_samples must be >= 1");
  check(c.nmf_max_iter >= 1 && c.nmf_tol > 0.0, "nmf_max_iter >= 1 and nmf_tol > 0 required");
  check(c.top_k >= 1, "top_k must be >= 1");
}

// ---------------------------------------------------------------------------
// pipeline

std::vector<std::size_t> PipelineResult::members(Group g) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < groups.group.size(); ++i)
    if (groups.group[i] == g) out.push_back(i);
  return out;
}

Eigen::MatrixXd PipelineResult::attribution(const std::vector<ItemRecord>& items) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(coeffs_cer.rows(), d_cer() + d_unc());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (groups.group[i] == Group::Uncertain)
      out.block(it.segment_offset, d_cer(), it.segment_count, d_unc()) =
          coeffs_unc.middleRows(it.segment_offset, it.segment_count);
    else
      out.block(it.segment_offset, 0, it.segment_count, d_cer()) =
          coeffs_cer.middleRows(it.segment_offset, it.segment_count);
  }
  return out;
}

Scores score_items(const PredictionSamples& samples) {
  Scores s;
  s.reserve(samples.items.size());
  for (const auto& P : samples.items) s.push_back(uncertainty_scores(P));
  return s;
}

std::vector<int> argmax_predictions(const PredictionSamples& samples) {
  std::vector<int> out;
  out.reserve(samples.items.size());
  for (const auto& P : samples.items) {
    Eigen::Index k = 0;
    posterior_mean(P).maxCoeff(&k);
    out.push_back(static_cast<int>(k));
  }
  return out;
}

PipelineResult run_pipeline(const Dataset& ds, const RunConfig& config, std::uint64_t seed) {
  validate(config);
  const auto& items = ds.manifest.items;
  PipelineResult r;
  r.seed = seed;

  // Step 1: uncertainty per item.
  r.scores = score_items(ds.predictions);
  r.predicted = argmax_predictions(ds.predictions);

  // Step 2: certain / uncertain split.
  Eigen::VectorXd u(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) u(static_cast<Eigen::Index>(i)) = r.scores[i].get(config.measure);
  r.gmm = fit_gmm_em(u);
  r.groups = assign_groups(r.gmm, u);

  // Step 3: one concept bank per group.
  const auto& A = ds.segments.matrix;
  const auto cer = r.members(Group::Certain), unc = r.members(Group::Uncertain);
  require(!cer.empty() && !unc.empty(), ErrorCode::EmptyGroup,
          "grouping produced " + std::to_string(cer.size()) + " certain and " + std::to_string(unc.size()) +
              " uncertain items");
  {
    const Eigen::MatrixXd A_cer = gather_rows(A, items, cer);
    auto fit = fit_nmf(A_cer, config.d_cer,
                       NmfOptions{config.nmf_max_iter, config.nmf_tol, derive_seed(seed, kNmfCer), Provenance::Certain});
    r.nmf_iterations_cer = fit.iterations;
    r.nmf_error_cer = relative_error(A_cer, fit.coefficients, fit.bank.concepts);
    r.bank_cer = std::move(fit.bank);
  }
  {
    const Eigen::MatrixXd A_unc = gather_rows(A, items, unc);
    auto fit = fit_nmf(A_unc, config.d_unc,
                       NmfOptions{config.nmf_max_iter, config.nmf_tol, derive_seed(seed, kNmfUnc), Provenance::Uncertain});
    r.nmf_iterations_unc = fit.iterations;
    r.nmf_error_unc = relative_error(A_unc, fit.coefficients, fit.bank.concepts);
    r.bank_unc = std::move(fit.bank);
  }
  r.bank_combined = combine(r.bank_cer, r.bank_unc);
  r.coeffs_cer = transform_nnls(A, r.bank_cer);
  r.coeffs_unc = transform_nnls(A, r.bank_unc);
  r.coeffs_combined = transform_nnls(A, r.bank_combined);

  // Step 4: local and global importances.
  const auto masks = make_dropout_masks(derive_seed(seed, kDropout), config.n_mc_samples, ds.head.channels(),
                                        ds.head.dropout_rate);
  const auto design_cer = make_mask_design(config.n_qmc, r.d_cer(), derive_seed(seed, kDesignCer));
  const auto design_unc = make_mask_design(config.n_qmc, r.d_unc(), derive_seed(seed, kDesignUnc));
  r.local = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(items.size()), r.d_cer() + r.d_unc());
  std::vector<ImportanceVector> locals;
  locals.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const bool is_unc = r.groups.group[i] == Group::Uncertain;
    auto e = is_unc ? local_importance(items[i], r.coeffs_unc, r.bank_unc, ds.head, masks, r.gmm, design_unc,
                                       config.pooling, config.measure)
                    : local_importance(items[i], r.coeffs_cer, r.bank_cer, ds.head, masks, r.gmm, design_cer,
                                       config.pooling, config.measure);
    r.local.row(static_cast<Eigen::Index>(i)).segment(is_unc ? r.d_cer() : 0, e.raw.size()) = e.raw.transpose();
    locals.push_back(std::move(e));
  }
  r.global = global_importance(locals, r.groups.group, r.d_cer(), r.d_unc());
  return r;
}

json pipeline_report(const PipelineResult& r, const RunConfig& config, const Dataset& ds) {
  double mean_t = 0, mean_a = 0, mean_e = 0;
  for (const auto& s : r.scores) {
    mean_t += s.total;
    mean_a += s.aleatoric;
    mean_e += s.epistemic;
  }
  const double n = double(std::max<std::size_t>(r.scores.size(), 1));
  const auto e_cer = r.global.certain.reported(), e_unc = r.global.uncertain.reported();
  return {
      {"report_version", kReportVersion},
      {"config", to_json(config)},
      {"seed", r.seed},
      {"n_items", ds.manifest.n_items},
      {"n_classes", ds.manifest.n_classes},
      {"uncertainty", {{"measure", to_string(config.measure)}, {"mean_total", mean_t / n},
                       {"mean_aleatoric", mean_a / n}, {"mean_epistemic", mean_e / n}}},
      {"gmm",
       {{"weights", {r.gmm.weight_certain, r.gmm.weight_uncertain}},
        {"means", {r.gmm.mean_certain, r.gmm.mean_uncertain}},
        {"variances", {r.gmm.var_certain, r.gmm.var_uncertain}},
        {"iterations", r.gmm.info.iterations},
        {"log_likelihood", r.gmm.info.log_likelihood},
        {"converged", r.gmm.info.converged}}},
      {"groups", {{"certain", r.groups.count(Group::Certain)}, {"uncertain", r.groups.count(Group::Uncertain)}}},
      {"banks",
       {{"certain", bank_sidecar(r.bank_cer, r.nmf_iterations_cer, r.nmf_error_cer)},
        {"uncertain", bank_sidecar(r.bank_unc, r.nmf_iterations_unc, r.nmf_error_unc)}}},
      {"global_importance",
       {{"certain", vec_json(e_cer)},
        {"uncertain", vec_json(e_unc)},
        {"certain_empty", r.global.certain.empty},
        {"uncertain_empty", r.global.uncertain.empty}}},
      {"top_concepts",
       {{"certain", top_concepts(e_cer, config.top_k)},
        {"uncertain", [&] {
           auto t = top_concepts(e_unc, config.top_k);
           for (auto& c : t) c += static_cast<int>(r.d_cer());
           return t;
         }()}}},
  };
}

void write_run(const PipelineResult& r, const RunConfig& config, const Dataset& ds) {
  const fs::path dir(config.out);
  require(!config.out.empty(), ErrorCode::InvalidConfig, "no output directory given");
  fs::create_directories(dir);
  const std::size_t n = r.scores.size();

  std::vector<float> u;
  for (const auto& s : r.scores)
    for (double v : {s.total, s.aleatoric, s.epistemic}) u.push_back(static_cast<float>(v));
  write_tensor(TensorFile::from_floats({static_cast<std::int64_t>(n), 3}, u), dir / "uncertainty.npy");
  std::vector<float> f(r.groups.f.begin(), r.groups.f.end());
  write_tensor(TensorFile::from_floats({static_cast<std::int64_t>(n)}, f), dir / "f_values.npy");
  std::vector<std::int64_t> g;
  for (auto x : r.groups.group) g.push_back(static_cast<std::int64_t>(x));
  write_tensor(TensorFile::from_ints({static_cast<std::int64_t>(n)}, g), dir / "groups.npy");
  const auto pred = to_i64(r.predicted);
  write_tensor(TensorFile::from_ints({static_cast<std::int64_t>(n)}, pred), dir / "predicted.npy");

  write_tensor(TensorFile::from_matrix(r.bank_cer.concepts), dir / "bank_cer.npy");
  write_text(dir / "bank_cer.json", bank_sidecar(r.bank_cer, r.nmf_iterations_cer, r.nmf_error_cer).dump(1) + "\n");
  write_tensor(TensorFile::from_matrix(r.bank_unc.concepts), dir / "bank_unc.npy");
  write_text(dir / "bank_unc.json", bank_sidecar(r.bank_unc, r.nmf_iterations_unc, r.nmf_error_unc).dump(1) + "\n");
  write_tensor(TensorFile::from_matrix(r.coeffs_cer), dir / "coeffs_cer.npy");
  write_tensor(TensorFile::from_matrix(r.coeffs_unc), dir / "coeffs_unc.npy");
  write_tensor(TensorFile::from_matrix(r.coeffs_combined), dir / "coeffs_combined.npy");
  write_tensor(TensorFile::from_matrix(r.local), dir / "local_importance.npy");
  write_tensor(TensorFile::from_vector(r.global.certain.raw), dir / "global_cer.npy");
  write_tensor(TensorFile::from_vector(r.global.uncertain.raw), dir / "global_unc.npy");
  write_tensor(TensorFile::from_matrix(r.attribution(ds.manifest.items)), dir / "attribution.npy");

  json report = pipeline_report(r, config, ds);
  report["dataset_path"] = fs::weakly_canonical(fs::absolute(config.dataset)).string();
  write_text(dir / "report.json", report.dump(1) + "\n");
}

Run load_run(const fs::path& dir) {
  require(fs::is_regular_file(dir / "report.json"), ErrorCode::MissingRunArtifacts,
          "no report.json in " + dir.string());
  Run run;
  run.dir = dir;
  const json report = json::parse(read_text(dir / "report.json"));
  run.config = config_from_json(report.at("config"));
  run.dataset = load_dataset(report.at("dataset_path").get<std::string>());
  auto& r = run.result;
  r.seed = report.at("seed").get<std::uint64_t>();
  try {
    const auto& g = report.at("gmm");
    r.gmm.weight_certain = g.at("weights").at(0);
    r.gmm.weight_uncertain = g.at("weights").at(1);
    r.gmm.mean_certain = g.at("means").at(0);
    r.gmm.mean_uncertain = g.at("means").at(1);
    r.gmm.var_certain = g.at("variances").at(0);
    r.gmm.var_uncertain = g.at("variances").at(1);
    r.gmm.info.iterations = g.at("iterations");
    r.gmm.info.log_likelihood = g.at("log_likelihood");
    r.gmm.info.converged = g.at("converged");

    const Eigen::MatrixXd u = read_tensor(dir / "uncertainty.npy").to_matrix();
    for (Eigen::Index i = 0; i < u.rows(); ++i) r.scores.push_back({u(i, 0), u(i, 1), u(i, 2)});
    const Eigen::VectorXd f = read_tensor(dir / "f_values.npy").to_vector();
    r.groups.f.assign(f.data(), f.data() + f.size());
    for (auto v : read_tensor(dir / "groups.npy").ints()) r.groups.group.push_back(v ? Group::Uncertain : Group::Certain);
    for (auto v : read_tensor(dir / "predicted.npy").ints()) r.predicted.push_back(static_cast<int>(v));

    r.bank_cer = read_bank(dir, "bank_cer");
    r.bank_unc = read_bank(dir, "bank_unc");
    r.bank_combined = combine(r.bank_cer, r.bank_unc);
    r.coeffs_cer = read_tensor(dir / "coeffs_cer.npy").to_matrix();
    r.coeffs_unc = read_tensor(dir / "coeffs_unc.npy").to_matrix();
    r.coeffs_combined = read_tensor(dir / "coeffs_combined.npy").to_matrix();
    r.local = read_tensor(dir / "local_importance.npy").to_matrix();
    r.global.certain = {read_tensor(dir / "global_cer.npy").to_vector(), ImportanceScope::GlobalCertain, {},
                        report.at("global_importance").at("certain_empty")};
    r.global.uncertain = {read_tensor(dir / "global_unc.npy").to_vector(), ImportanceScope::GlobalUncertain, {},
                          report.at("global_importance").at("uncertain_empty")};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingRunArtifacts, std::string("report.json: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MissingFile) throw Error(ErrorCode::MissingRunArtifacts, e.what());
    throw;
  }
  const auto n = static_cast<std::size_t>(run.dataset.manifest.n_items);
  require(r.scores.size() == n && r.groups.group.size() == n && r.predicted.size() == n &&
              static_cast<std::size_t>(r.local.rows()) == n,
          ErrorCode::MissingRunArtifacts, "run artifacts do not match the dataset's item count");
  return run;
}

// ---------------------------------------------------------------------------
// filtering

std::vector<FilterMethod> resolve_filter_methods(const std::vector<std::string>& names) {
  std::vector<FilterMethod> out;
  for (const auto& n : names) {
    if (n == "all") return {std::begin(kAllFilterMethods), std::end(kAllFilterMethods)};
    out.push_back(parse_filter_method(n));
  }
  require(!out.empty(), ErrorCode::InvalidConfig, "no filter methods selected");
  return out;
}

FilterOutcome run_filter(const PipelineResult& r, const Dataset& ds, const std::vector<int>& flagged,
                         const std::vector<FilterMethod>& methods, Pooling pooling) {
  const auto& items = ds.manifest.items;
  const int d_cer = static_cast<int>(r.d_cer()), d_unc = static_cast<int>(r.d_unc());
  require(!flagged.empty(), ErrorCode::EmptyFlagSet, "no noise concepts flagged");
  std::vector<int> local_flags;
  for (int c : flagged) {
    require(c >= d_cer && c < d_cer + d_unc, ErrorCode::InvalidFlags,
            "concept " + std::to_string(c) + " is not in the uncertain bank [" + std::to_string(d_cer) + ", " +
                std::to_string(d_cer + d_unc) + ")");
    local_flags.push_back(c - d_cer);
  }
  const auto candidates = r.members(Group::Uncertain);
  require(!candidates.empty(), ErrorCode::EmptyGroup, "the uncertain group is empty");
  const bool has_truth = std::all_of(candidates.begin(), candidates.end(),
                                     [&](std::size_t i) { return items[i].is_corrupted.has_value(); });

  FilterOutcome out;
  out.flagged = flagged;
  for (auto m : methods) {
    FilterRanking rk;
    switch (m) {
      case FilterMethod::OursImportance:
        rk = noise_filter_ranking(r.local.rightCols(d_unc), local_flags, candidates, items, m);
        break;
      case FilterMethod::OursNMF:
        rk = noise_filter_ranking(pool_items(r.coeffs_unc, items, pooling), local_flags, candidates, items, m);
        break;
      case FilterMethod::BaselineTotal:
        rk = baseline_uncertainty_ranking(r.scores, Measure::Total, candidates, items);
        break;
      case FilterMethod::BaselineAleatoric:
        rk = baseline_uncertainty_ranking(r.scores, Measure::Aleatoric, candidates, items);
        break;
      case FilterMethod::BaselineEpistemic:
        rk = baseline_uncertainty_ranking(r.scores, Measure::Epistemic, candidates, items);
        break;
    }
    if (has_truth) {
      auto c = kept_useful_curve(rk, items);
      out.aucs.push_back(curve_auc(c));
      out.curves.push_back(std::move(c));
    } else {
      out.aucs.push_back(std::nullopt);
      out.curves.push_back(std::nullopt);
    }
    out.rankings.push_back(std::move(rk));
  }
  return out;
}

std::vector<int> auto_flag(const PipelineResult& r, const Dataset& ds) {
  auto local = auto_flag_concepts(r.coeffs_unc, r.members(Group::Uncertain), ds.manifest.items);
  for (auto& c : local) c += static_cast<int>(r.d_cer());
  return local;
}

json curve_json(const Curve& c) { return {{"label", c.label}, {"x", c.x}, {"y", c.y}}; }

std::string curves_csv(const std::vector<Curve>& curves) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "label,x,y\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.x.size(); ++i) ss << c.label << ',' << c.x[i] << ',' << c.y[i] << '\n';
  return ss.str();
}

json filter_report(const FilterOutcome& f, const Dataset& ds) {
  json methods = json::array();
  for (std::size_t k = 0; k < f.rankings.size(); ++k) {
    std::vector<std::string> ids;
    for (auto i : f.rankings[k].order) ids.push_back(ds.manifest.items[i].id);
    json m = {{"method", to_string(f.rankings[k].method)}, {"ranking", ids}};
    m["auc"] = f.aucs[k] ? json(*f.aucs[k]) : json(nullptr);
    m["curve"] = f.curves[k] ? curve_json(*f.curves[k]) : json(nullptr);
    methods.push_back(std::move(m));
  }
  return {{"report_version", kReportVersion}, {"flags", f.flagged}, {"methods", std::move(methods)}};
}

// ---------------------------------------------------------------------------
// rejection

const RejectMethodOutcome& RejectOutcome::get(RejectMethod m) const {
  for (const auto& o : methods)
    if (o.ranking.method == m) return o;
  throw Error(ErrorCode::InvalidConfig, "rejection method not computed");
}

RejectOutcome run_reject(const PipelineResult& r, const Dataset& ds, Pooling pooling) {
  const auto& items = ds.manifest.items;
  const Eigen::MatrixXd pooled = pool_items(r.coeffs_combined, items, pooling);
  const auto e_cer = r.global.certain.reported(), e_unc = r.global.uncertain.reported();
  RejectOutcome out;
  for (auto m : kAllRejectMethods) {
    RejectMethodOutcome o;
    switch (m) {
      case RejectMethod::ConceptOnly:
      case RejectMethod::Weighted:
        o.ranking = rejection_ranking(pooled, e_cer, e_unc, r.groups.f, items, m);
        break;
      case RejectMethod::Total:
        o.ranking = baseline_rejection_ranking(r.scores, Measure::Total, items);
        break;
      case RejectMethod::Aleatoric:
        o.ranking = baseline_rejection_ranking(r.scores, Measure::Aleatoric, items);
        break;
      case RejectMethod::Epistemic:
        o.ranking = baseline_rejection_ranking(r.scores, Measure::Epistemic, items);
        break;
    }
    o.accuracy = accuracy_rejection_curve(o.ranking.order, r.predicted, items);
    o.accuracy.label = std::string(to_string(m)) + ":accuracy";
    o.ood = ood_rejection_curve(o.ranking.order, items);
    o.ood.label = std::string(to_string(m)) + ":ood_remaining";
    o.accuracy_auc = curve_auc(o.accuracy);
    o.ood_auc = curve_auc(o.ood);
    o.ood_at_40 = curve_at(o.ood, 0.40);
    out.methods.push_back(std::move(o));
  }
  return out;
}

json reject_report(const std::vector<std::uint64_t>& seeds, const std::vector<RejectOutcome>& per_seed) {
  require(!per_seed.empty() && seeds.size() == per_seed.size(), ErrorCode::InvalidConfig,
          "one rejection outcome per seed expected");
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  json methods = json::array();
  for (std::size_t k = 0; k < per_seed.front().methods.size(); ++k) {
    std::vector<double> acc, ood, at40;
    for (const auto& o : per_seed) {
      acc.push_back(o.methods[k].accuracy_auc);
      ood.push_back(o.methods[k].ood_auc);
      at40.push_back(o.methods[k].ood_at_40);
    }
    const auto& first = per_seed.front().methods[k];
    methods.push_back({{"method", to_string(first.ranking.method)},
                       {"accuracy_auc", acc},
                       {"ood_auc", ood},
                       {"ood_remaining_at_40", at40},
                       {"mean_accuracy_auc", mean(acc)},
                       {"mean_ood_auc", mean(ood)},
                       {"mean_ood_remaining_at_40", mean(at40)},
                       {"accuracy_curve", curve_json(first.accuracy)},
                       {"ood_curve", curve_json(first.ood)}});
  }
  json report = {{"report_version", kReportVersion}, {"seeds", seeds}, {"methods", std::move(methods)}};
  std::vector<double> diff;
  for (const auto& o : per_seed)
    diff.push_back(o.get(RejectMethod::Weighted).accuracy_auc - o.get(RejectMethod::Total).accuracy_auc);
  report["wins_weighted_over_total"] = std::count_if(diff.begin(), diff.end(), [](double d) { return d >= 0; });
  try {
    const auto w = wilcoxon_one_sided(diff);
    report["wilcoxon"] = {{"comparison", "Weighted > Total (accuracy AUC)"},
                          {"p_value", w.p_value},
                          {"w_plus", w.w_plus},
                          {"n", w.n},
                          {"exact", w.exact}};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::TooFewPairs) throw;
    report["wilcoxon"] = nullptr;
    report["warnings"] = {std::string("p-value omitted: ") + e.what()};
  }
  return report;
}

// ---------------------------------------------------------------------------
// intervention

InterventionOutcome run_intervene(const PipelineResult& r, const Dataset& ds, const std::vector<int>& ablate,
                                  Pooling pooling) {
  require(!ablate.empty(), ErrorCode::EmptyFlagSet, "no concepts to ablate");
  const auto& items = ds.manifest.items;
  for (const auto& it : items)
    require(it.group_attr.has_value(), ErrorCode::MissingGroupAttr, "item '" + it.id + "' has no group_attr");

  InterventionOutcome o;
  o.ablated = ablate;
  const Eigen::MatrixXd pooled = pool_items(r.coeffs_combined, items, pooling);
  std::vector<double> attr;
  for (const auto& it : items) attr.push_back(*it.group_attr);
  for (Eigen::Index c = 0; c < pooled.cols(); ++c) {
    std::vector<double> col(pooled.col(c).data(), pooled.col(c).data() + pooled.rows());
    try {
      o.pearson.push_back(pearson_correlation(col, attr));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConstantInput) throw;
      o.pearson.push_back(std::nullopt);
    }
  }
  o.before = concept_ablation_repredict(r.coeffs_combined, r.bank_combined, {}, items, ds.head, pooling);
  o.after = concept_ablation_repredict(r.coeffs_combined, r.bank_combined, ablate, items, ds.head, pooling);
  o.gap_before = equalized_odds_gap(o.before.predicted, items, ds.manifest.n_classes);
  o.gap_after = equalized_odds_gap(o.after.predicted, items, ds.manifest.n_classes);
  for (std::size_t i = 0; i < items.size(); ++i)
    if (o.before.predicted[i] != o.after.predicted[i]) o.changed.push_back(i);
  return o;
}

json intervene_report(const InterventionOutcome& o, const Dataset& ds) {
  json pearson = json::array();
  for (const auto& p : o.pearson) pearson.push_back(p ? json(*p) : json(nullptr));
  json changed = json::array();
  for (auto i : o.changed)
    changed.push_back({{"id", ds.manifest.items[i].id},
                       {"before", o.before.predicted[i]},
                       {"after", o.after.predicted[i]}});
  return {{"report_version", kReportVersion},
          {"ablated", o.ablated},
          {"pearson", std::move(pearson)},
          {"equalized_odds",
           {{"definition", "mean over classes of max(|TPR gap|, |FPR gap|), one-vs-rest"},
            {"before", o.gap_before.gap},
            {"after", o.gap_after.gap},
            {"delta", o.gap_after.gap - o.gap_before.gap},
            {"skipped_before", o.gap_before.skipped},
            {"skipped_after", o.gap_after.skipped}}},
          {"predictions_before", o.before.predicted},
          {"predictions_after", o.after.predicted},
          {"changed", std::move(changed)}};
}

}  // namespace cue
