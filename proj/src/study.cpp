#include "latentrem/study.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include "latentrem/em.hpp"
#include "latentrem/evaluate.hpp"

namespace latentrem {

std::string to_string(StudyMethod m) {
  switch (m) {
    case StudyMethod::ekf: return "ekf";
    case StudyMethod::ukf: return "ukf";
    case StudyMethod::static_model: return "static";
  }
  return "?";
}

StudyMethod parse_study_method(const std::string& s) {
  if (s == "ekf") return StudyMethod::ekf;
  if (s == "ukf") return StudyMethod::ukf;
  if (s == "static") return StudyMethod::static_model;
  throw Error(ErrorCode::invalid_config, "unknown study method '" + s + "' (expected ekf, ukf or static)");
}

void StudySpec::validate() const {
  if (cells.empty()) throw Error(ErrorCode::invalid_config, "study has no cells");
  if (methods.empty()) throw Error(ErrorCode::invalid_config, "study has no methods");
  for (const auto& c : cells) {
    if (c.name.empty()) throw Error(ErrorCode::invalid_config, "study cell without a name");
    c.scenario.validate();
  }
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

StudyResult run_study(const StudySpec& spec, const std::function<void(const StudyRow&)>& progress) {
  spec.validate();
  StudyResult out;
  for (std::size_t c = 0; c < spec.cells.size(); ++c) {
    const StudyCell& cell = spec.cells[c];
    const SimScenario& sc = cell.scenario;
    for (int rep = 0; rep < sc.replicates; ++rep) {
      const std::uint64_t data_seed = derive_seed(spec.seed, c + 1, static_cast<std::uint64_t>(rep) + 1);
      const SimulatedPanel sim = simulate_scenario(sc, data_seed);
      const std::uint64_t kl_seed = derive_seed(data_seed, 3);
      for (StudyMethod method : spec.methods) {
        StudyRow row;
        row.cell = cell.name;
        row.replicate = rep;
        row.method = method;
        row.nodes = sc.nodes;
        row.intervals = sc.intervals;
        row.dim = sc.dim;
        row.family = sc.family.kind == Family::Kind::poisson ? "poisson" : "negbin";
        row.dispersion = sc.family.dispersion;
        row.mean_rate = sc.mean_rate;
        row.data_seed = data_seed;

        ModelConfig cfg = spec.fit;
        cfg.dim = sc.dim;
        cfg.filter.kind = method == StudyMethod::ukf ? FilterKind::ukf : FilterKind::ekf;
        cfg.em.seed = derive_seed(data_seed, 4);
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const FitResult fit = method == StudyMethod::static_model ? static_fit(sim.panel, cfg) : em_fit(sim.panel, cfg);
          row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          row.iterations = fit.iterations;
          row.converged = fit.converged;
          row.diverged = static_cast<bool>(fit.divergence);
          row.sigma_spherical = fit.trace.records.empty() ? 0.0 : fit.trace.records.back().sigma_spherical;
          const KlEstimate kl = kl_out_of_fold(sim.panel, fit.smoothed, fit.params, sim.truth, sim.params, sc.family, kl_seed);
          row.kl = kl.value;
          row.kl_se = kl.standard_error;
          row.caic = caic(fit, sim.panel).caic;
        } catch (const Error& e) {
          row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          row.failed = true;
          row.diverged = e.code() == ErrorCode::divergence;
          row.error = std::string(to_string(e.code())) + ": " + e.what();
          row.kl = row.kl_se = row.caic = std::numeric_limits<double>::quiet_NaN();
        }
        if (progress) progress(row);
        out.rows.push_back(std::move(row));
      }
    }
  }
  out.aggregates = aggregate_rows(out.rows);
  return out;
}

std::vector<StudyAggregate> aggregate_rows(const std::vector<StudyRow>& rows) {
  // Keep first-appearance order of (cell, method).
  std::vector<std::pair<std::string, StudyMethod>> keys;
  std::map<std::pair<std::string, int>, std::vector<const StudyRow*>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.cell, static_cast<int>(r.method));
    if (!groups.count(key)) keys.emplace_back(r.cell, r.method);
    groups[key].push_back(&r);
  }
  std::vector<StudyAggregate> out;
  for (const auto& [cell, method] : keys) {
    const auto& g = groups[{cell, static_cast<int>(method)}];
    StudyAggregate a;
    a.cell = cell;
    a.method = method;
    a.replicates = static_cast<int>(g.size());
    std::vector<double> kls, secs;
    for (const StudyRow* r : g) {
      if (r->diverged) ++a.divergences;
      secs.push_back(r->seconds);
      if (!r->failed && std::isfinite(r->kl)) kls.push_back(r->kl);
    }
    a.completed = static_cast<int>(kls.size());
    a.divergence_rate = a.replicates ? static_cast<double>(a.divergences) / a.replicates : 0.0;
    a.kl_median = median(kls);
    a.seconds_median = median(secs);
    if (!kls.empty()) {
      double s = 0.0;
      for (double v : kls) s += v;
      a.kl_mean = s / static_cast<double>(kls.size());
      double ss = 0.0;
      for (double v : kls) ss += (v - a.kl_mean) * (v - a.kl_mean);
      a.kl_sd = kls.size() > 1 ? std::sqrt(ss / static_cast<double>(kls.size() - 1)) : 0.0;
    } else {
      a.kl_mean = a.kl_sd = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(a);
  }
  return out;
}

}  // namespace latentrem
