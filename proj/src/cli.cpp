#include "cue/cli.hpp"

#include <csignal>
#include <filesystem>
#include <sstream>

#include <CLI11.hpp>

#include "cue/pipeline.hpp"
#include "cue/service.hpp"
#include "cue/synth.hpp"

namespace cue {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    const auto b = part.find_first_not_of(" \t"), e = part.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
  }
  return out;
}

long long parse_int(const std::string& s, ErrorCode code) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), code, "not an integer: '" + s + "'");
  return v;
}

// Options shared by every subcommand; strings so "given" is distinguishable from defaults.
struct Overrides {
  std::string config, dataset, out, measure, pooling, seeds, methods, flags, serve_addr;
  int d_cer = 0, d_unc = 0, n_qmc = 0;
  bool auto_flag = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON config file; command-line flags win");
  app->add_option("--dataset", o.dataset, "Dataset directory");
  app->add_option("--out", o.out, "Run directory");
  app->add_option("--measure", o.measure, "total | aleatoric | epistemic");
  app->add_option("--d-cer", o.d_cer, "Concepts in the certain bank");
  app->add_option("--d-unc", o.d_unc, "Concepts in the uncertain bank");
  app->add_option("--n-qmc", o.n_qmc, "Sobol base sample count");
  app->add_option("--seeds", o.seeds, "Seeds, e.g. 0,1,2 or 0-19");
  app->add_option("--pooling", o.pooling, "mean | max");
  app->add_option("--methods", o.methods, "Comma-separated method names or 'all'");
  app->add_option("--flags", o.flags, "Comma-separated concept ids (combined numbering)");
  app->add_flag("--auto-flag", o.auto_flag, "Choose noise concepts with a logistic probe");
  app->add_option("--serve-addr", o.serve_addr, "host:port for serve");
}

RunConfig apply(RunConfig c, const Overrides& o, const CLI::App* app) {
  if (!o.config.empty()) {
    try {
      c = config_from_json(json::parse(read_text(o.config)), c);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::InvalidConfig, o.config + ": " + e.what());
    }
  }
  auto given = [&](const char* name) { return app->count(name) > 0; };
  if (given("--dataset")) c.dataset = o.dataset;
  if (given("--out")) c.out = o.out;
  if (given("--measure")) c.measure = parse_measure(o.measure);
  if (given("--d-cer")) c.d_cer = o.d_cer;
  if (given("--d-unc")) c.d_unc = o.d_unc;
  if (given("--n-qmc")) c.n_qmc = o.n_qmc;
  if (given("--seeds")) c.seeds = parse_seed_list(o.seeds);
  if (given("--pooling")) c.pooling = parse_pooling(o.pooling);
  if (given("--methods")) c.methods = split(o.methods, ',');
  if (given("--flags")) c.flags = parse_id_list(o.flags);
  if (given("--auto-flag")) c.auto_flag = o.auto_flag;
  if (given("--serve-addr")) c.serve_addr = o.serve_addr;
  return c;
}

/// Loads the run named by --out (or the config) and merges overrides onto its recorded config.
Run open_run(const Overrides& o, const CLI::App* app) {
  RunConfig probe = apply({}, o, app);
  require(!probe.out.empty(), ErrorCode::InvalidConfig, "--out must name a pipeline run directory");
  Run run = load_run(probe.out);
  run.config = apply(run.config, o, app);
  run.config.out = run.dir.string();
  validate(run.config);
  return run;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(1) + "\n"); }

int cmd_synth(const std::string& spec_path, const std::string& out_dir, const CLI::App* app, std::uint64_t seed,
              std::ostream& out) {
  require(!out_dir.empty(), ErrorCode::InvalidConfig, "synth needs --out");
  SynthSpec spec;
  if (!spec_path.empty()) {
    try {
      spec = synth_spec_from_json(json::parse(read_text(spec_path)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, spec_path + ": " + e.what());
    }
  } else {
    spec = default_synth_spec(1000, 4, 0);
  }
  if (app->count("--seed")) {
    spec.seed = seed;
    const bool derived = spec_path.empty() || !json::parse(read_text(spec_path)).contains("class_centers");
    if (derived) apply_default_layout(spec);
  }
  generate_to(spec, out_dir);
  out << json{{"dataset", out_dir}, {"n_items", spec.n_items}, {"seed", spec.seed}}.dump() << '\n';
  return 0;
}

int cmd_pipeline(const Overrides& o, const CLI::App* app, std::ostream& out) {
  RunConfig c = apply({}, o, app);
  require(!c.dataset.empty(), ErrorCode::InvalidConfig, "pipeline needs --dataset");
  require(!c.out.empty(), ErrorCode::InvalidConfig, "pipeline needs --out");
  validate(c);
  const Dataset ds = load_dataset(c.dataset);
  const auto r = run_pipeline(ds, c, c.seeds.front());
  write_run(r, c, ds);
  out << json{{"run", c.out},
              {"seed", r.seed},
              {"certain", r.groups.count(Group::Certain)},
              {"uncertain", r.groups.count(Group::Uncertain)}}
             .dump()
      << '\n';
  return 0;
}

int cmd_filter(const Overrides& o, const CLI::App* app, std::ostream& out, std::ostream& err) {
  Run run = open_run(o, app);
  std::vector<int> flags;
  std::string source;
  if (app->count("--flags")) {
    flags = run.config.flags;
    source = "cli";
  } else if (run.config.auto_flag) {
    flags = auto_flag(run.result, run.dataset);
    source = "auto";
  } else {
    flags = FlagStore(run.dir).flagged();
    source = FlagStore::kFileName;
  }
  const auto outcome =
      run_filter(run.result, run.dataset, flags, resolve_filter_methods(run.config.methods), run.config.pooling);
  json report = filter_report(outcome, run.dataset);
  report["flag_source"] = source;
  write_json(run.dir / "filter_report.json", report);
  std::vector<Curve> curves;
  for (const auto& c : outcome.curves)
    if (c) curves.push_back(*c);
  if (!curves.empty())
    write_text(run.dir / "filter_curves.csv", curves_csv(curves));
  else
    err << "warning: no is_corrupted truth flags; curves and AUCs omitted\n";
  json summary = json::object();
  for (std::size_t k = 0; k < outcome.rankings.size(); ++k)
    summary[std::string(to_string(outcome.rankings[k].method))] =
        outcome.aucs[k] ? json(*outcome.aucs[k]) : json(nullptr);
  out << json{{"report", (run.dir / "filter_report.json").string()}, {"flags", flags}, {"auc", summary}}.dump()
      << '\n';
  return 0;
}

int cmd_reject(const Overrides& o, const CLI::App* app, std::ostream& out, std::ostream& err) {
  Run run = open_run(o, app);
  std::vector<RejectOutcome> per_seed;
  for (auto seed : run.config.seeds) {
    if (seed == run.result.seed) {
      per_seed.push_back(run_reject(run.result, run.dataset, run.config.pooling));
    } else {
      const auto r = run_pipeline(run.dataset, run.config, seed);
      per_seed.push_back(run_reject(r, run.dataset, run.config.pooling));
    }
  }
  json report = reject_report(run.config.seeds, per_seed);
  write_json(run.dir / "reject_report.json", report);
  std::vector<Curve> curves;
  for (const auto& m : per_seed.front().methods) {
    curves.push_back(m.accuracy);
    curves.push_back(m.ood);
  }
  write_text(run.dir / "reject_curves.csv", curves_csv(curves));
  if (report.contains("warnings"))
    for (const auto& w : report["warnings"]) err << "warning: " << w.get<std::string>() << '\n';
  json summary = json::object();
  for (const auto& m : report["methods"]) summary[m["method"].get<std::string>()] = m["mean_accuracy_auc"];
  out << json{{"report", (run.dir / "reject_report.json").string()},
              {"mean_accuracy_auc", summary},
              {"p_value", report["wilcoxon"].is_null() ? json(nullptr) : report["wilcoxon"]["p_value"]}}
             .dump()
      << '\n';
  return 0;
}

int cmd_intervene(const Overrides& o, const CLI::App* app, std::ostream& out) {
  Run run = open_run(o, app);
  const auto outcome = run_intervene(run.result, run.dataset, run.config.flags, run.config.pooling);
  const json report = intervene_report(outcome, run.dataset);
  write_json(run.dir / "intervene_report.json", report);
  out << json{{"report", (run.dir / "intervene_report.json").string()},
              {"gap_before", outcome.gap_before.gap},
              {"gap_after", outcome.gap_after.gap},
              {"changed", outcome.changed.size()}}
             .dump()
      << '\n';
  return 0;
}

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const Overrides& o, const CLI::App* app, const std::string& static_dir, std::ostream& out) {
  Run probe = open_run(o, app);
  const auto [host, port] = parse_addr(probe.config.serve_addr);
  Service service(probe.dir, static_dir);
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  out << "serving " << probe.dir.string() << " on http://" << host << ':' << port << std::endl;
  service.listen(host, port);
  g_service = nullptr;
  return 0;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) {
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      const auto v = parse_int(part, ErrorCode::InvalidConfig);
      require(v >= 0, ErrorCode::InvalidConfig, "seeds must be nonnegative");
      out.push_back(static_cast<std::uint64_t>(v));
    } else {
      const auto lo = parse_int(part.substr(0, dash), ErrorCode::InvalidConfig);
      const auto hi = parse_int(part.substr(dash + 1), ErrorCode::InvalidConfig);
      require(lo >= 0 && hi >= lo, ErrorCode::InvalidConfig, "bad seed range '" + part + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(static_cast<std::uint64_t>(s));
    }
  }
  require(!out.empty(), ErrorCode::InvalidConfig, "empty seed list");
  return out;
}

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& part : split(text, ',')) out.push_back(static_cast<int>(parse_int(part, ErrorCode::InvalidFlags)));
  return out;
}

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-based explanations of predictive uncertainty"};
  app.require_subcommand(1);
  Overrides o;
  std::string spec_path, synth_out, static_dir;
  std::uint64_t synth_seed = 0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("spec", spec_path, "JSON synth spec (defaults when omitted)");
  synth->add_option("--out", synth_out, "Dataset directory to write")->required();
  synth->add_option("--seed", synth_seed, "Override the spec seed");

  auto* pipeline = app.add_subcommand("pipeline", "Score, group, learn concepts and importances; write a run");
  auto* filter = app.add_subcommand("filter", "Rank uncertain items for noise filtering");
  auto* reject = app.add_subcommand("reject", "Accuracy- and OOD-rejection curves");
  auto* intervene = app.add_subcommand("intervene", "Ablate concepts and measure the equalized-odds gap");
  auto* serve = app.add_subcommand("serve", "HTTP API over a run directory");
  for (auto* sub : {pipeline, filter, reject, intervene, serve}) add_common(sub, o);
  serve->add_option("--static", static_dir, "Directory of UI assets served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      // app.help() already shows the selected subcommand
      out << app.help();
      return 0;
    }
    err << json{{"code", "InvalidConfig"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }

  try {
    if (*synth) return cmd_synth(spec_path, synth_out, synth, synth_seed, out);
    if (*pipeline) return cmd_pipeline(o, pipeline, out);
    if (*filter) return cmd_filter(o, filter, out, err);
    if (*reject) return cmd_reject(o, reject, out, err);
    if (*intervene) return cmd_intervene(o, intervene, out);
    if (*serve) return cmd_serve(o, serve, static_dir, out);
  } catch (const Error& e) {
    err << json{{"code", to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
    return exit_code(e.code());
  } catch (const json::exception& e) {
    err << json{{"code", "InvalidConfig"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << json{{"code", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace cue
