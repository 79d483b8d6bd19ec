#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentrem/em.hpp"
#include "latentrem/simulate.hpp"
#include "latentrem/study.hpp"
#include "latentrem/types.hpp"

namespace latentrem {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

/// How event timestamps map onto intervals [start + (k-1) w, start + k w), k = 1..n.
///
/// Timestamps are plain numbers or ISO dates (YYYY-MM-DD, optionally followed
/// by Thh:mm[:ss]); dates become decimal years, so width 1 means one year.
/// Missing pieces are filled from the data: start defaults to the earliest
/// timestamp; with a width and no count, n covers the latest timestamp; with
/// a count and no width, the range [start, end] is split into n parts and an
/// event exactly at a derived end goes into interval n.
struct IntervalSpec {
  std::optional<double> start;
  std::optional<double> end;
  std::optional<double> width;
  std::optional<int> count;
  /// Events outside [start, end) are moved into the first/last interval instead of rejected.
  bool clip = false;
};

struct IngestOptions {
  IntervalSpec intervals;
  bool directed = true;
  /// Node labels in index order; events naming other labels are rejected.
  /// When empty, labels are collected from the events and sorted.
  std::vector<std::string> nodes;
  /// CSV with columns node,k,exposure (k = 1..n); unlisted cells keep exposure 1.
  std::optional<std::string> exposure_path;
  /// CSV with columns node,group; events are relabelled to groups and
  /// within-group events are dropped.
  std::optional<std::string> groups_path;
  /// CSV with columns name,k,sender,receiver,value; unlisted cells are 0.
  std::optional<std::string> covariates_path;
};

struct IngestResult {
  NetworkPanel panel;
  double start = 0.0;
  double width = 1.0;
  long long events = 0;         // rows accepted (before summation)
  long long clipped = 0;
  long long within_group = 0;   // dropped by the grouping map
  std::vector<std::string> warnings;
};

/// Reads sender,receiver,timestamp[,count] rows (header required, comma
/// separated, column order free) and bins them. Self-loops and out-of-range
/// rows are errors carrying their line number; an input without events
/// raises Error(no_events). Undirected panels store (i, j) with i < j and sum
/// both directions. The result does not depend on row order.
IngestResult ingest_events(const std::string& path, const IngestOptions& options);

/// Timestamp text to a number (decimal years for ISO dates).
double parse_timestamp(const std::string& text);

/// Writes every nonzero count as sender,receiver,timestamp,count with timestamp = k.
void write_events(const NetworkPanel& panel, const std::string& path);

// --- configuration documents ------------------------------------------------

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys raise Error(invalid_config).
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SimScenario& scenario);
SimScenario scenario_from_json(const nlohmann::json& j);

nlohmann::json to_json(const StudySpec& spec);
StudySpec study_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const IngestOptions& options);
/// Reads the "data" section of a fit config.
IngestOptions ingest_options_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Parameters& params);
Parameters parameters_from_json(const nlohmann::json& j);

/// Parses a JSON file; Error(io) when unreadable, Error(parse) when malformed.
nlohmann::json read_json(const std::string& path);
void write_json(const nlohmann::json& j, const std::string& path);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);
/// fnv1a_hex of a file's contents; Error(io) when unreadable.
std::string fnv1a_file(const std::string& path);
/// Hash of the compact, key-sorted dump of a JSON document.
std::string config_hash(const nlohmann::json& j);

// --- fit artifacts -----------------------------------------------------------

/// Writes trajectories.csv (smoothed), filtered.csv, params.json, trace.csv,
/// residuals.csv and manifest.json into `dir` (created if needed).
/// Numbers carry 17 significant digits. Unwritable paths raise Error(io).
void serialize_fit(const FitResult& fit, const NetworkPanel& panel, const std::string& dir,
                   const nlohmann::json& extra_manifest = nlohmann::json::object());

/// Rebuilds config, parameters, trace and trajectories (means and
/// per-coordinate variances; off-diagonal covariances are not stored).
FitResult read_fit(const std::string& dir);

/// k,node,dim,mean,var rows for k = 0..n.
void write_trajectory(const LatentTrajectory& traj, const std::string& path);
LatentTrajectory read_trajectory(const std::string& path, MomentKind kind = MomentKind::smoothed);

// --- study artifacts ---------------------------------------------------------

/// results.csv and aggregates.csv (deterministic for a given spec), timings.csv
/// (wall-clock, varies between runs) and manifest.json.
void write_study(const StudyResult& result, const StudySpec& spec, const std::string& dir);

/// Formats a double with 17 significant digits ("nan" / "inf" / "-inf" for non-finite).
std::string format_double(double v);

}  // namespace latentrem
