#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "latentrem/em.hpp"
#include "latentrem/evaluate.hpp"
#include "latentrem/io.hpp"
#include "latentrem/simulate.hpp"
#include "latentrem/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latentrem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitIo = 3;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::io:
    case ErrorCode::parse: return kExitIo;
    case ErrorCode::divergence:
    case ErrorCode::numerical_failure:
    case ErrorCode::non_convergence: return kExitDivergence;
    default: return kExitUsage;
  }
}

/// Flags shared by fit, select and evaluate.
struct DataFlags {
  std::string config;
  std::string panel;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> filter;
  bool static_model = false;
  std::optional<int> dim;
  std::optional<int> intervals;
  std::optional<double> width;
  std::optional<double> start;
  std::optional<double> end;
  std::optional<std::string> exposure;
  std::optional<std::string> groups;
  std::optional<std::string> covariates;
  bool undirected = false;
  bool clip = false;
};

void add_data_flags(CLI::App* sub, DataFlags& f, bool with_panel_required) {
  sub->add_option("--config", f.config, "JSON document with 'model', 'data' and 'static' sections")->check(CLI::ExistingFile);
  auto* p = sub->add_option("--panel", f.panel, "event CSV: sender,receiver,timestamp[,count]");
  if (with_panel_required) p->required();
  sub->add_option("--seed", f.seed, "seed for initial jitter");
  sub->add_option("--filter", f.filter, "ekf or ukf")->check(CLI::IsMember({"ekf", "ukf"}));
  sub->add_flag("--static", f.static_model, "fit the static model (Sigma = 0)");
  sub->add_option("--d", f.dim, "latent dimension")->check(CLI::PositiveNumber);
  sub->add_option("--intervals", f.intervals, "number of intervals")->check(CLI::PositiveNumber);
  sub->add_option("--width", f.width, "interval width (years for ISO dates)");
  sub->add_option("--start", f.start, "start of interval 1");
  sub->add_option("--end", f.end, "end of the last interval");
  sub->add_option("--exposure", f.exposure, "CSV node,k,exposure")->check(CLI::ExistingFile);
  sub->add_option("--groups", f.groups, "CSV node,group relabelling nodes to groups")->check(CLI::ExistingFile);
  sub->add_option("--covariates", f.covariates, "CSV name,k,sender,receiver,value")->check(CLI::ExistingFile);
  sub->add_flag("--undirected", f.undirected, "sum both directions into unordered dyads");
  sub->add_flag("--clip", f.clip, "clip out-of-range events into the first/last interval");
}

struct Loaded {
  ModelConfig model;
  IngestOptions data;
  bool static_model = false;
  json document = json::object();
};

Loaded load_config(const DataFlags& f) {
  Loaded out;
  if (!f.config.empty()) {
    out.document = read_json(f.config);
    const json& d = out.document;
    if (!d.is_object()) throw Error(ErrorCode::invalid_config, f.config + ": expected a JSON object");
    for (const auto& [key, value] : d.items()) {
      if (key != "model" && key != "data" && key != "static" && key != "select") {
        throw Error(ErrorCode::invalid_config, "unknown key '" + key + "' in " + f.config);
      }
    }
    if (d.contains("model")) out.model = model_config_from_json(d.at("model"));
    if (d.contains("data")) out.data = ingest_options_from_json(d.at("data"));
    out.static_model = d.value("static", false);
  }
  if (f.seed) out.model.em.seed = *f.seed;
  if (f.filter) out.model.filter.kind = parse_filter_kind(*f.filter);
  if (f.static_model) out.static_model = true;
  if (f.dim) out.model.dim = *f.dim;
  if (f.intervals) out.data.intervals.count = *f.intervals;
  if (f.width) out.data.intervals.width = *f.width;
  if (f.start) out.data.intervals.start = *f.start;
  if (f.end) out.data.intervals.end = *f.end;
  if (f.exposure) out.data.exposure_path = *f.exposure;
  if (f.groups) out.data.groups_path = *f.groups;
  if (f.covariates) out.data.covariates_path = *f.covariates;
  if (f.undirected) out.data.directed = false;
  if (f.clip) out.data.intervals.clip = true;
  // Relative data paths in a config resolve against the config's directory.
  if (!f.config.empty()) {
    const fs::path base = fs::path(f.config).parent_path();
    auto resolve = [&](std::optional<std::string>& p, bool from_flag) {
      if (p && !from_flag && fs::path(*p).is_relative()) p = (base / *p).string();
    };
    resolve(out.data.exposure_path, f.exposure.has_value());
    resolve(out.data.groups_path, f.groups.has_value());
    resolve(out.data.covariates_path, f.covariates.has_value());
  }
  return out;
}

IngestResult load_panel(const std::string& path, const IngestOptions& options) {
  IngestResult r = ingest_events(path, options);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  return r;
}

FitResult run_fit(const NetworkPanel& panel, const ModelConfig& cfg, bool static_model) {
  return static_model ? static_fit(panel, cfg) : em_fit(panel, cfg);
}

std::vector<std::string> node_labels(int p) {
  const int width = static_cast<int>(std::to_string(p).size());
  std::vector<std::string> out;
  for (int i = 1; i <= p; ++i) {
    std::string s = std::to_string(i);
    out.push_back("n" + std::string(static_cast<std::size_t>(width) - s.size(), '0') + s);
  }
  return out;
}

// --- subcommands ---------------------------------------------------------------

int cmd_simulate(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  SimScenario sc;
  if (!config.empty()) sc = scenario_from_json(read_json(config));
  if (seed) sc.seed = *seed;
  SimulatedPanel sim = simulate_scenario(sc, sc.seed);
  sim.panel.labels() = node_labels(sc.nodes);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create directory '" + out_dir + "': " + ec.message());
  const fs::path base(out_dir);
  write_events(sim.panel, (base / "events.csv").string());
  write_trajectory(sim.truth, (base / "truth.csv").string());
  write_json(to_json(sim.params), (base / "truth_params.json").string());
  write_json(to_json(sc), (base / "scenario.json").string());

  IngestOptions data;
  data.directed = sc.directed;
  data.intervals.start = 1.0;
  data.intervals.width = 1.0;
  data.intervals.count = sc.intervals;
  data.nodes = sim.panel.labels();
  ModelConfig model;
  model.dim = sc.dim;
  model.family = sc.family;
  const json fit_config = {{"model", to_json(model)}, {"data", to_json(data)}, {"static", !sc.dynamic}};
  write_json(fit_config, (base / "config.json").string());

  const json sj = to_json(sc);
  write_json({{"schema_version", kSchemaVersion},
              {"tool", "latentrem"},
              {"version", kVersion},
              {"seed", sc.seed},
              {"scenario", sj},
              {"config_hash", config_hash(sj)},
              {"intercept", sim.params.intercept}},
             (base / "manifest.json").string());
  double total = sim.panel.counts().sum();
  std::printf("simulated %d nodes x %d intervals, %.0f events, intercept %.6g -> %s\n", sc.nodes, sc.intervals, total,
              sim.params.intercept, out_dir.c_str());
  return kExitOk;
}

int cmd_fit(const DataFlags& f) {
  const Loaded cfg = load_config(f);
  const IngestResult data = load_panel(f.panel, cfg.data);
  const FitResult fit = run_fit(data.panel, cfg.model, cfg.static_model);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
  const CaicResult ic = caic(fit, data.panel);
  const json extra = {{"input", {{"panel", f.panel}, {"panel_hash", fnv1a_file(f.panel)}, {"data", to_json(cfg.data)}}},
                      {"caic",
                       {{"log_likelihood", ic.log_likelihood},
                        {"regression_df", ic.regression_df},
                        {"latent_df", ic.latent_df},
                        {"caic", ic.caic}}}};
  serialize_fit(fit, data.panel, f.out, extra);
  const auto& last = fit.trace.records.back();
  std::printf("%s fit: %d iterations, converged=%s, Q=%.10g, sigma=%.6g, cAIC=%.10g -> %s\n",
              cfg.static_model ? "static" : to_string(cfg.model.filter.kind).c_str(), fit.iterations,
              fit.converged ? "yes" : "no", last.q_total(), last.sigma_spherical, ic.caic, f.out.c_str());
  if (fit.divergence) {
    std::fprintf(stderr, "error[divergence]: filter diverged at iteration %d (%s); wrote last valid iterate\n",
                 fit.divergence_iteration, fit.divergence.detail.c_str());
    return kExitDivergence;
  }
  return kExitOk;
}

struct Candidate {
  int dim;
  FilterKind filter;
  SigmaStructure sigma;
  bool static_model;
};

int cmd_select(const DataFlags& f, const std::vector<int>& dims_flag, const std::vector<std::string>& filters_flag,
               const std::vector<std::string>& sigmas_flag, bool no_static) {
  const Loaded cfg = load_config(f);
  std::vector<int> dims{1, 2, 3};
  std::vector<FilterKind> filters{cfg.model.filter.kind};
  std::vector<SigmaStructure> sigmas{cfg.model.sigma_structure};
  bool with_static = true;
  if (cfg.document.contains("select")) {
    const json& s = cfg.document.at("select");
    for (const auto& [key, value] : s.items()) {
      if (key != "dims" && key != "filters" && key != "sigma_structures" && key != "static") {
        throw Error(ErrorCode::invalid_config, "unknown key '" + key + "' in select");
      }
    }
    if (s.contains("dims")) dims = s.at("dims").get<std::vector<int>>();
    if (s.contains("filters")) {
      filters.clear();
      for (const auto& x : s.at("filters")) filters.push_back(parse_filter_kind(x.get<std::string>()));
    }
    if (s.contains("sigma_structures")) {
      sigmas.clear();
      for (const auto& x : s.at("sigma_structures")) sigmas.push_back(parse_sigma_structure(x.get<std::string>()));
    }
    with_static = s.value("static", true);
  }
  if (!dims_flag.empty()) dims = dims_flag;
  if (!filters_flag.empty()) {
    filters.clear();
    for (const auto& x : filters_flag) filters.push_back(parse_filter_kind(x));
  }
  if (!sigmas_flag.empty()) {
    sigmas.clear();
    for (const auto& x : sigmas_flag) sigmas.push_back(parse_sigma_structure(x));
  }
  if (no_static) with_static = false;

  std::vector<Candidate> cands;
  for (int d : dims) {
    if (d < 1) throw Error(ErrorCode::invalid_config, "candidate dimension must be positive");
    for (FilterKind fk : filters)
      for (SigmaStructure ss : sigmas) cands.push_back({d, fk, ss, false});
    if (with_static) cands.push_back({d, FilterKind::ekf, cfg.model.sigma_structure, true});
  }

  const IngestResult data = load_panel(f.panel, cfg.data);
  struct Row {
    Candidate c;
    std::string status;
    CaicResult ic;
    int iterations = 0;
  };
  std::vector<Row> rows;
  for (const Candidate& c : cands) {
    ModelConfig m = cfg.model;
    m.dim = c.dim;
    m.filter.kind = c.filter;
    m.sigma_structure = c.sigma;
    Row r{c, "ok", {}, 0};
    try {
      const FitResult fit = run_fit(data.panel, m, c.static_model);
      r.iterations = fit.iterations;
      if (fit.divergence) r.status = "diverged-late";
      r.ic = caic(fit, data.panel);
    } catch (const Error& e) {
      r.status = std::string(to_string(e.code()));
      r.ic.caic = r.ic.log_likelihood = std::numeric_limits<double>::quiet_NaN();
    }
    std::fprintf(stderr, "candidate d=%d %s %s: %s cAIC=%s\n", c.dim, c.static_model ? "static" : to_string(c.filter).c_str(),
                 to_string(c.sigma).c_str(), r.status.c_str(), format_double(r.ic.caic).c_str());
    rows.push_back(r);
  }
  std::size_t best = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!std::isfinite(rows[i].ic.caic)) continue;
    if (best == rows.size() || rows[i].ic.caic < rows[best].ic.caic) best = i;
  }

  std::error_code ec;
  fs::create_directories(f.out, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create directory '" + f.out + "': " + ec.message());
  const std::string path = (fs::path(f.out) / "select.csv").string();
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  const char* header = "dim,model,filter,sigma_structure,status,iterations,log_likelihood,regression_df,latent_df,caic,best\n";
  std::fputs(header, fp);
  std::fputs(header, stdout);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    char line[512];
    std::snprintf(line, sizeof line, "%d,%s,%s,%s,%s,%d,%s,%s,%s,%s,%d\n", r.c.dim, r.c.static_model ? "static" : "dynamic",
                  to_string(r.c.filter).c_str(), r.c.static_model ? "none" : to_string(r.c.sigma).c_str(), r.status.c_str(),
                  r.iterations, format_double(r.ic.log_likelihood).c_str(), format_double(r.ic.regression_df).c_str(),
                  format_double(r.ic.latent_df).c_str(), format_double(r.ic.caic).c_str(), i == best ? 1 : 0);
    std::fputs(line, fp);
    std::fputs(line, stdout);
  }
  if (std::fclose(fp) != 0) throw Error(ErrorCode::io, "failed writing '" + path + "'");
  if (best == rows.size()) {
    std::fprintf(stderr, "error[divergence]: no candidate produced a fit\n");
    return kExitDivergence;
  }
  return kExitOk;
}

int cmd_evaluate(DataFlags f, const std::string& fit_dir, const std::string& truth_dir, std::uint64_t kl_seed) {
  if (!truth_dir.empty()) {
    if (f.panel.empty()) f.panel = (fs::path(truth_dir) / "events.csv").string();
    if (f.config.empty()) f.config = (fs::path(truth_dir) / "config.json").string();
  }
  if (f.panel.empty()) throw Error(ErrorCode::invalid_argument, "evaluate needs --panel or --truth");
  const Loaded cfg = load_config(f);
  const IngestResult data = load_panel(f.panel, cfg.data);
  FitResult fit = read_fit(fit_dir);
  json report = {{"fit", fit_dir}, {"panel", f.panel}};

  const CaicResult ic = caic(fit, data.panel);
  report["caic"] = {{"log_likelihood", ic.log_likelihood},
                    {"regression_df", ic.regression_df},
                    {"latent_df", ic.latent_df},
                    {"caic", ic.caic}};
  if (!truth_dir.empty()) {
    const fs::path base(truth_dir);
    const LatentTrajectory truth = read_trajectory((base / "truth.csv").string(), MomentKind::smoothed);
    const Parameters truth_params = parameters_from_json(read_json((base / "truth_params.json").string()));
    const SimScenario sc = scenario_from_json(read_json((base / "scenario.json").string()));
    const KlEstimate kl = kl_out_of_fold(data.panel, fit.smoothed, fit.params, truth, truth_params, sc.family, kl_seed);
    report["kl"] = {{"value", kl.value}, {"standard_error", kl.standard_error}, {"terms", kl.terms}, {"seed", kl_seed}};
    report["distance_correlation"] = distance_correlation(fit.smoothed, truth);
    std::printf("KL %.6g (se %.3g), distance correlation %.4f\n", kl.value, kl.standard_error,
                report["distance_correlation"].get<double>());
  }
  std::printf("cAIC %.10g (loglik %.10g, df %.4g + %.4g)\n", ic.caic, ic.log_likelihood, ic.regression_df, ic.latent_df);

  const std::string out = f.out.empty() ? fit_dir : f.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create directory '" + out + "': " + ec.message());
  std::FILE* fp = std::fopen((fs::path(out) / "residuals.csv").string().c_str(), "w");
  if (!fp) throw Error(ErrorCode::io, "cannot write residuals in '" + out + "'");
  std::fputs("k,sender,receiver,observed,fitted,variance,residual,distance\n", fp);
  double ss = 0.0;
  long long m = 0, extreme = 0;
  for (const Residual& r : residuals(fit, data.panel)) {
    std::fprintf(fp, "%d,%d,%d,%s,%s,%s,%s,%s\n", r.k, r.sender, r.receiver, format_double(r.observed).c_str(),
                 format_double(r.fitted).c_str(), format_double(r.variance).c_str(), format_double(r.residual).c_str(),
                 format_double(r.distance).c_str());
    if (std::isfinite(r.residual)) {
      ss += r.residual * r.residual;
      ++m;
      if (std::abs(r.residual) > 3.0) ++extreme;
    }
  }
  if (std::fclose(fp) != 0) throw Error(ErrorCode::io, "failed writing residuals");
  report["residuals"] = {{"count", m}, {"mean_square", m ? ss / static_cast<double>(m) : 0.0}, {"beyond_3", extreme}};
  write_json(report, (fs::path(out) / "evaluate.json").string());
  return kExitOk;
}

int cmd_study(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed, bool quiet) {
  StudySpec spec = study_spec_from_json(read_json(config));
  if (seed) spec.seed = *seed;
  std::size_t total = 0;
  for (const auto& c : spec.cells) total += static_cast<std::size_t>(c.scenario.replicates) * spec.methods.size();
  std::size_t done = 0;
  const StudyResult res = run_study(spec, [&](const StudyRow& r) {
    ++done;
    if (quiet) return;
    std::fprintf(stderr, "[%zu/%zu] %s rep %d %s: %s kl=%s (%.2fs)\n", done, total, r.cell.c_str(), r.replicate,
                 to_string(r.method).c_str(), r.failed ? "failed" : (r.diverged ? "diverged-late" : "ok"),
                 format_double(r.kl).c_str(), r.seconds);
  });
  write_study(res, spec, out_dir);
  std::printf("%-16s %-7s %5s %5s %5s %12s %12s\n", "cell", "method", "reps", "done", "div", "kl_median", "kl_mean");
  for (const auto& a : res.aggregates) {
    std::printf("%-16s %-7s %5d %5d %5d %12.6g %12.6g\n", a.cell.c_str(), to_string(a.method).c_str(), a.replicates,
                a.completed, a.divergences, a.kl_median, a.kl_mean);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic latent-space relational event models for interval count networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string sim_config, sim_out;
  std::optional<std::uint64_t> sim_seed;
  auto* sim = app.add_subcommand("simulate", "simulate a panel and its true trajectories from a scenario");
  sim->add_option("--config", sim_config, "scenario JSON (defaults when omitted)")->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--seed", sim_seed, "override the scenario seed");

  DataFlags fit_flags;
  auto* fit = app.add_subcommand("fit", "fit the dynamic (or static) model to an event panel");
  add_data_flags(fit, fit_flags, true);
  fit->add_option("--out", fit_flags.out, "output directory")->required();

  DataFlags sel_flags;
  std::vector<int> sel_dims;
  std::vector<std::string> sel_filters, sel_sigmas;
  bool sel_no_static = false;
  auto* sel = app.add_subcommand("select", "compare candidate models by cAIC");
  add_data_flags(sel, sel_flags, true);
  sel->add_option("--out", sel_flags.out, "output directory")->required();
  sel->add_option("--dims", sel_dims, "candidate dimensions (default 1 2 3)")->delimiter(',');
  sel->add_option("--filters", sel_filters, "candidate filters")->delimiter(',')->check(CLI::IsMember({"ekf", "ukf"}));
  sel->add_option("--sigma-structures", sel_sigmas, "candidate Sigma structures")->delimiter(',');
  sel->add_flag("--no-static", sel_no_static, "skip static candidates");

  DataFlags ev_flags;
  std::string ev_fit, ev_truth;
  std::uint64_t ev_seed = 1;
  auto* ev = app.add_subcommand("evaluate", "residuals and cAIC for a fit; out-of-fold KL against a simulated truth");
  add_data_flags(ev, ev_flags, false);
  ev->add_option("--fit", ev_fit, "fit output directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--truth", ev_truth, "simulate output directory")->check(CLI::ExistingDirectory);
  ev->add_option("--out", ev_flags.out, "output directory (default: the fit directory)");
  ev->add_option("--kl-seed", ev_seed, "seed of the fresh panel for KL");

  std::string st_config, st_out;
  std::optional<std::uint64_t> st_seed;
  bool st_quiet = false;
  auto* st = app.add_subcommand("study", "run a simulation sweep");
  st->add_option("--config", st_config, "study JSON")->required()->check(CLI::ExistingFile);
  st->add_option("--out", st_out, "output directory")->required();
  st->add_option("--seed", st_seed, "override the master seed");
  st->add_flag("--quiet", st_quiet, "no per-fit progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error[usage]: %s\n%s", e.what(), app.help().c_str());
    return kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(sim_config, sim_out, sim_seed);
    if (*fit) return cmd_fit(fit_flags);
    if (*sel) return cmd_select(sel_flags, sel_dims, sel_filters, sel_sigmas, sel_no_static);
    if (*ev) return cmd_evaluate(ev_flags, ev_fit, ev_truth, ev_seed);
    if (*st) return cmd_study(st_config, st_out, st_seed, st_quiet);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return exit_code(e.code());
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error[invalid_config]: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
