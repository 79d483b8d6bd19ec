#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "latentrem/em.hpp"
#include "latentrem/evaluate.hpp"
#include "latentrem/io.hpp"
#include "latentrem/simulate.hpp"

namespace py = pybind11;
using namespace latentrem;
using nlohmann::json;

namespace {

/// Means as an (n+1) x pd array.
Eigen::MatrixXd stacked_means(const LatentTrajectory& t) {
  Eigen::MatrixXd out(t.means.size(), t.state_dim());
  for (std::size_t k = 0; k < t.means.size(); ++k) out.row(static_cast<Index>(k)) = t.means[k].transpose();
  return out;
}

Eigen::MatrixXd stacked_variances(const LatentTrajectory& t) {
  Eigen::MatrixXd out(t.covariances.size(), t.state_dim());
  for (std::size_t k = 0; k < t.covariances.size(); ++k) out.row(static_cast<Index>(k)) = t.covariances[k].diagonal().transpose();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dynamic latent-space relational event models";

  static py::exception<Error> error_type(m, "LatentremError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(std::string(to_string(e.code())) + ": " + e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<NetworkPanel>(m, "Panel")
      .def_property_readonly("nodes", &NetworkPanel::nodes)
      .def_property_readonly("intervals", &NetworkPanel::intervals)
      .def_property_readonly("directed", &NetworkPanel::directed)
      .def_property_readonly("counts", [](const NetworkPanel& p) { return Eigen::MatrixXd(p.counts()); },
                             "intervals x dyads count matrix")
      .def_property_readonly("dyads",
                             [](const NetworkPanel& p) {
                               std::vector<std::pair<int, int>> out;
                               for (Index r = 0; r < p.dyad_count(); ++r) out.emplace_back(p.dyads().dyad(r).sender, p.dyads().dyad(r).receiver);
                               return out;
                             })
      .def_property_readonly("labels", [](const NetworkPanel& p) { return p.labels(); })
      .def("write_events", &write_events, py::arg("path"));

  py::class_<SimulatedPanel>(m, "Simulation")
      .def_readonly("panel", &SimulatedPanel::panel)
      .def_property_readonly("truth", [](const SimulatedPanel& s) { return stacked_means(s.truth); })
      .def_property_readonly("intercept", [](const SimulatedPanel& s) { return s.params.intercept; });

  py::class_<FitResult>(m, "Fit")
      .def_property_readonly("means", [](const FitResult& f) { return stacked_means(f.smoothed); })
      .def_property_readonly("variances", [](const FitResult& f) { return stacked_variances(f.smoothed); })
      .def_property_readonly("params_json", [](const FitResult& f) { return to_json(f.params).dump(); })
      .def_property_readonly("intercept", [](const FitResult& f) { return f.params.intercept; })
      .def_property_readonly("sigma", [](const FitResult& f) { return f.params.sigma; })
      .def_readonly("iterations", &FitResult::iterations)
      .def_readonly("converged", &FitResult::converged)
      .def_readonly("static_model", &FitResult::static_model)
      .def_property_readonly("diverged", [](const FitResult& f) { return static_cast<bool>(f.divergence); })
      .def_readonly("warnings", &FitResult::warnings)
      .def("save", [](const FitResult& f, const NetworkPanel& p, const std::string& dir) { serialize_fit(f, p, dir); },
           py::arg("panel"), py::arg("directory"));

  m.def(
      "_simulate",
      [](const std::string& scenario, std::optional<std::uint64_t> seed) {
        const SimScenario sc = scenario.empty() ? SimScenario{} : scenario_from_json(json::parse(scenario));
        return simulate_scenario(sc, seed ? *seed : sc.seed);
      },
      py::arg("scenario_json"), py::arg("seed") = py::none());

  m.def(
      "_ingest",
      [](const std::string& path, const std::string& options) {
        return ingest_events(path, options.empty() ? IngestOptions{} : ingest_options_from_json(json::parse(options))).panel;
      },
      py::arg("path"), py::arg("options_json"));

  m.def(
      "_fit",
      [](const NetworkPanel& panel, const std::string& config, bool static_model) {
        const ModelConfig cfg = config.empty() ? ModelConfig{} : model_config_from_json(json::parse(config));
        py::gil_scoped_release release;
        return static_model ? static_fit(panel, cfg) : em_fit(panel, cfg);
      },
      py::arg("panel"), py::arg("config_json"), py::arg("static_model"));

  m.def(
      "caic",
      [](const FitResult& fit, const NetworkPanel& panel) {
        const CaicResult c = latentrem::caic(fit, panel);
        py::dict d;
        d["log_likelihood"] = c.log_likelihood;
        d["regression_df"] = c.regression_df;
        d["latent_df"] = c.latent_df;
        d["caic"] = c.caic;
        return d;
      },
      py::arg("fit"), py::arg("panel"));

  m.def(
      "_kl",
      [](const FitResult& fit, const SimulatedPanel& sim, const std::string& family, std::uint64_t seed) {
        const SimScenario sc = scenario_from_json(json::parse(family));
        const KlEstimate k = kl_out_of_fold(sim.panel, fit.smoothed, fit.params, sim.truth, sim.params, sc.family, seed);
        py::dict d;
        d["value"] = k.value;
        d["standard_error"] = k.standard_error;
        d["terms"] = k.terms;
        return d;
      },
      py::arg("fit"), py::arg("simulation"), py::arg("scenario_json"), py::arg("seed"));

  m.def("distance_correlation", [](const FitResult& fit, const SimulatedPanel& sim) {
    return latentrem::distance_correlation(fit.smoothed, sim.truth);
  });
}
