#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latentrem/simulate.hpp"
#include "latentrem/types.hpp"

namespace latentrem {

enum class StudyMethod { ekf, ukf, static_model };

std::string to_string(StudyMethod m);
StudyMethod parse_study_method(const std::string& s);

struct StudyCell {
  std::string name;
  SimScenario scenario;
};

struct StudySpec {
  std::vector<StudyCell> cells;
  std::vector<StudyMethod> methods{StudyMethod::ekf, StudyMethod::ukf, StudyMethod::static_model};
  /// Fit settings shared by every method; the latent dimension comes from each scenario.
  ModelConfig fit;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One fit of one method on one replicate panel.
struct StudyRow {
  std::string cell;
  int replicate = 0;
  StudyMethod method = StudyMethod::ekf;
  int nodes = 0;
  int intervals = 0;
  int dim = 0;
  std::string family;
  double dispersion = 0.0;
  double mean_rate = 0.0;
  std::uint64_t data_seed = 0;
  bool failed = false;    // no estimate (first-iteration divergence or other error)
  bool diverged = false;  // any filter divergence, including first-iteration failures
  std::string error;
  int iterations = 0;
  bool converged = false;
  double kl = 0.0;
  double kl_se = 0.0;
  double caic = 0.0;
  double sigma_spherical = 0.0;
  double seconds = 0.0;  // wall-clock of the fit; not part of the deterministic outputs
};

struct StudyAggregate {
  std::string cell;
  StudyMethod method = StudyMethod::ekf;
  int replicates = 0;
  int completed = 0;
  int divergences = 0;
  double divergence_rate = 0.0;
  double kl_mean = 0.0;
  double kl_median = 0.0;
  double kl_sd = 0.0;
  double seconds_median = 0.0;
};

struct StudyResult {
  std::vector<StudyRow> rows;  // ordered by cell, replicate, method
  std::vector<StudyAggregate> aggregates;
};

/// Runs every (cell, replicate, method). Data seeds derive from the master
/// seed, the cell position and the replicate; the fresh panel used for the
/// out-of-fold KL is shared by all methods within a replicate. Per-fit
/// failures are recorded in the row and the sweep continues.
StudyResult run_study(const StudySpec& spec, const std::function<void(const StudyRow&)>& progress = {});

std::vector<StudyAggregate> aggregate_rows(const std::vector<StudyRow>& rows);

}  // namespace latentrem
