#include "latentrem/io.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "latentrem/evaluate.hpp"
#include "latentrem/mstep.hpp"

namespace latentrem {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void parse_fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::parse, where + ": " + what);
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  std::string out = s.substr(a, b - a);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
      cur.push_back(c);
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Line-numbered CSV reader with a mandatory header.
class CsvReader {
 public:
  explicit CsvReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw Error(ErrorCode::io, "cannot open '" + path + "'");
    std::vector<std::string> row;
    if (!next(row)) return;
    for (std::size_t c = 0; c < row.size(); ++c) header_[lower(row[c])] = c;
    width_ = row.size();
  }

  /// Column position among `names` (first match); -1 when absent.
  long column(std::initializer_list<const char*> names) const {
    for (const char* n : names) {
      auto it = header_.find(n);
      if (it != header_.end()) return static_cast<long>(it->second);
    }
    return -1;
  }

  long require(std::initializer_list<const char*> names) const {
    const long c = column(names);
    if (c < 0) parse_fail(path_, std::string("missing column '") + *names.begin() + "'");
    return c;
  }

  bool next(std::vector<std::string>& row) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      row = split_csv(line);
      if (width_ && row.size() != width_) {
        parse_fail(where(), "expected " + std::to_string(width_) + " fields, found " + std::to_string(row.size()));
      }
      return true;
    }
    return false;
  }

  bool has_header() const { return width_ > 0; }
  long line() const { return line_; }
  std::string where() const { return path_ + ":" + std::to_string(line_); }

 private:
  std::string path_;
  std::ifstream in_;
  std::map<std::string, std::size_t> header_;
  std::size_t width_ = 0;
  long line_ = 0;
};

double parse_number(const std::string& s, const std::string& where) {
  if (s.empty()) parse_fail(where, "empty number");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) parse_fail(where, "not a number: '" + s + "'");
  return v;
}

double parse_count(const std::string& s, const std::string& where) {
  const double v = parse_number(s, where);
  if (!std::isfinite(v) || v < 0.0 || v != std::floor(v)) parse_fail(where, "count must be a non-negative integer: '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  const double v = parse_number(s, where);
  if (v != std::floor(v) || std::abs(v) > 1e9) parse_fail(where, "not an integer: '" + s + "'");
  return static_cast<int>(v);
}

std::string join_lines(const std::vector<long>& lines) {
  std::string out;
  const std::size_t shown = std::min<std::size_t>(lines.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) out += (i ? ", " : "") + std::to_string(lines[i]);
  if (lines.size() > shown) out += ", ... (" + std::to_string(lines.size()) + " rows)";
  return out;
}

std::map<std::string, std::string> read_groups(const std::string& path) {
  CsvReader csv(path);
  const long cn = csv.require({"node"});
  const long cg = csv.require({"group"});
  std::map<std::string, std::string> out;
  std::vector<std::string> row;
  while (csv.next(row)) {
    const auto [it, fresh] = out.emplace(row[cn], row[cg]);
    if (!fresh && it->second != row[cg]) parse_fail(csv.where(), "node '" + row[cn] + "' mapped to two groups");
  }
  return out;
}

struct EventRow {
  long line;
  std::string sender, receiver;
  double t;
  double count;
};

}  // namespace

double parse_timestamp(const std::string& text) {
  const std::string s = trim(text);
  // ISO date: YYYY-MM-DD[Thh:mm[:ss]]
  if (s.size() >= 10 && s[4] == '-' && s[7] == '-' && std::isdigit(static_cast<unsigned char>(s[0]))) {
    int y = 0, mo = 0, d = 0, hh = 0, mm = 0;
    double ss = 0.0;
    char sep = 0;
    const int got = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d:%lf", &y, &mo, &d, &sep, &hh, &mm, &ss);
    if (got < 3 || (got > 3 && got < 6) || (got >= 4 && sep != 'T' && sep != ' ')) {
      throw Error(ErrorCode::parse, "malformed date '" + s + "'");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0.0 || ss >= 61.0) {
      throw Error(ErrorCode::parse, "invalid date '" + s + "'");
    }
    const sys_days day0{year_month_day{year{y}, January, day{1}}};
    const sys_days next{year_month_day{year{y + 1}, January, day{1}}};
    const double days_in_year = static_cast<double>((next - day0).count());
    const double elapsed = static_cast<double>((sys_days{ymd} - day0).count()) + (hh * 3600.0 + mm * 60.0 + ss) / 86400.0;
    return y + elapsed / days_in_year;
  }
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) throw Error(ErrorCode::parse, "malformed timestamp '" + s + "'");
  return v;
}

IngestResult ingest_events(const std::string& path, const IngestOptions& options) {
  CsvReader csv(path);
  if (!csv.has_header()) throw Error(ErrorCode::no_events, path + ": no events");
  const long cs = csv.require({"sender", "source", "from"});
  const long cr = csv.require({"receiver", "target", "to"});
  const long ct = csv.require({"timestamp", "time", "date"});
  const long cc = csv.column({"count", "weight"});

  std::map<std::string, std::string> groups;
  if (options.groups_path) groups = read_groups(*options.groups_path);

  IngestResult out;
  std::vector<EventRow> rows;
  std::vector<long> self_loops;
  std::vector<std::string> row;
  while (csv.next(row)) {
    EventRow e;
    e.line = csv.line();
    e.sender = row[cs];
    e.receiver = row[cr];
    if (e.sender.empty() || e.receiver.empty()) parse_fail(csv.where(), "empty node label");
    try {
      e.t = parse_timestamp(row[ct]);
    } catch (const Error& err) {
      parse_fail(csv.where(), err.what());
    }
    e.count = cc >= 0 ? parse_count(row[cc], csv.where()) : 1.0;
    if (e.sender == e.receiver) {
      self_loops.push_back(e.line);
      continue;
    }
    if (!groups.empty()) {
      auto gs = groups.find(e.sender);
      auto gr = groups.find(e.receiver);
      if (gs == groups.end()) parse_fail(csv.where(), "node '" + e.sender + "' missing from the group map");
      if (gr == groups.end()) parse_fail(csv.where(), "node '" + e.receiver + "' missing from the group map");
      if (gs->second == gr->second) {
        ++out.within_group;
        continue;
      }
      e.sender = gs->second;
      e.receiver = gr->second;
    }
    if (e.count > 0.0) rows.push_back(std::move(e));
  }
  if (!self_loops.empty()) {
    throw Error(ErrorCode::invalid_argument, path + ": self-loop rows at lines " + join_lines(self_loops));
  }
  if (rows.empty()) throw Error(ErrorCode::no_events, path + ": no events");

  // Interval grid.
  const IntervalSpec& iv = options.intervals;
  double tmin = rows.front().t, tmax = rows.front().t;
  for (const auto& e : rows) {
    tmin = std::min(tmin, e.t);
    tmax = std::max(tmax, e.t);
  }
  const double start = iv.start.value_or(tmin);
  double width = 0.0;
  int n = 0;
  bool derived_end = false;
  if (iv.width && !(*iv.width > 0.0)) throw Error(ErrorCode::invalid_config, "interval width must be positive");
  if (iv.count && *iv.count < 1) throw Error(ErrorCode::invalid_config, "interval count must be at least 1");
  if (iv.width && iv.count) {
    width = *iv.width;
    n = *iv.count;
    if (iv.end && std::abs(*iv.end - (start + n * width)) > 1e-9 * std::max(1.0, std::abs(*iv.end))) {
      throw Error(ErrorCode::invalid_config, "interval start, end, width and count are inconsistent");
    }
  } else if (iv.width) {
    width = *iv.width;
    if (iv.end) {
      n = static_cast<int>(std::ceil((*iv.end - start) / width - 1e-9));
    } else {
      n = static_cast<int>(std::floor((tmax - start) / width)) + 1;
    }
  } else if (iv.count) {
    n = *iv.count;
    const double end = iv.end.value_or(tmax);
    derived_end = !iv.end;
    width = (end - start) / n;
    if (!(width > 0.0)) {
      if (derived_end && n == 1 && end == start) {
        width = 1.0;
      } else {
        throw Error(ErrorCode::invalid_config, "interval range is empty");
      }
    }
  } else {
    throw Error(ErrorCode::invalid_config, "interval width or count required");
  }
  if (n < 1) throw Error(ErrorCode::invalid_config, "interval range is empty");
  const double end = start + n * width;

  // Node labels.
  std::vector<std::string> labels = options.nodes;
  if (labels.empty()) {
    std::set<std::string> seen;
    for (const auto& e : rows) {
      seen.insert(e.sender);
      seen.insert(e.receiver);
    }
    labels.assign(seen.begin(), seen.end());
  }
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!index.emplace(labels[i], static_cast<int>(i)).second) {
      throw Error(ErrorCode::invalid_config, "duplicate node label '" + labels[i] + "'");
    }
  }
  if (labels.size() < 2) throw Error(ErrorCode::invalid_argument, path + ": fewer than two nodes");

  NetworkPanel panel(static_cast<int>(labels.size()), n, options.directed);
  std::vector<long> outside;
  for (const auto& e : rows) {
    auto is = index.find(e.sender);
    auto ir = index.find(e.receiver);
    if (is == index.end() || ir == index.end()) {
      throw Error(ErrorCode::invalid_argument, path + ":" + std::to_string(e.line) + ": unknown node '" +
                                                   (is == index.end() ? e.sender : e.receiver) + "'");
    }
    long k = static_cast<long>(std::floor((e.t - start) / width)) + 1;
    if (derived_end && e.t == end) k = n;
    if (k < 1 || k > n) {
      if (!iv.clip) {
        outside.push_back(e.line);
        continue;
      }
      k = std::clamp<long>(k, 1, n);
      ++out.clipped;
    }
    panel.add_count(static_cast<int>(k), is->second, ir->second, e.count);
    ++out.events;
  }
  if (!outside.empty()) {
    std::ostringstream msg;
    msg.precision(17);
    msg << path << ": events outside [" << start << ", " << end << ") at lines " << join_lines(outside);
    throw Error(ErrorCode::invalid_argument, msg.str());
  }
  panel.labels() = labels;

  if (options.exposure_path) {
    CsvReader ex(*options.exposure_path);
    const long cn = ex.require({"node"});
    const long ck = ex.require({"k", "interval"});
    const long cv = ex.require({"exposure", "value"});
    while (ex.next(row)) {
      auto it = index.find(row[cn]);
      if (it == index.end()) throw Error(ErrorCode::invalid_argument, ex.where() + ": unknown exposure node '" + row[cn] + "'");
      const int k = parse_int(row[ck], ex.where());
      if (k < 1 || k > n) parse_fail(ex.where(), "interval " + std::to_string(k) + " outside 1.." + std::to_string(n));
      const double v = parse_number(row[cv], ex.where());
      if (!std::isfinite(v) || v < 0.0) parse_fail(ex.where(), "exposure must be finite and non-negative");
      panel.set_exposure(k, it->second, v);
    }
  }

  if (options.covariates_path) {
    CsvReader cv(*options.covariates_path);
    const long cname = cv.require({"name"});
    const long ck = cv.require({"k", "interval"});
    const long cs2 = cv.require({"sender", "source", "from"});
    const long cr2 = cv.require({"receiver", "target", "to"});
    const long cval = cv.require({"value"});
    std::map<std::string, Eigen::MatrixXd> cov;
    while (cv.next(row)) {
      auto is = index.find(row[cs2]);
      auto ir = index.find(row[cr2]);
      if (is == index.end() || ir == index.end()) throw Error(ErrorCode::invalid_argument, cv.where() + ": unknown covariate node");
      const int k = parse_int(row[ck], cv.where());
      if (k < 1 || k > n) parse_fail(cv.where(), "interval " + std::to_string(k) + " outside 1.." + std::to_string(n));
      const Index r = panel.dyads().row(is->second, ir->second);
      if (r < 0) parse_fail(cv.where(), "covariate on a self-loop");
      auto [it, fresh] = cov.try_emplace(row[cname]);
      if (fresh) it->second = Eigen::MatrixXd::Zero(n, panel.dyad_count());
      it->second(k - 1, r) = parse_number(row[cval], cv.where());
    }
    for (auto& [name, values] : cov) panel.covariates().push_back({name, std::move(values)});
  }

  panel.validate();
  out.panel = std::move(panel);
  out.start = start;
  out.width = width;
  if (out.clipped) out.warnings.push_back(std::to_string(out.clipped) + " events clipped into the interval range");
  if (out.within_group) out.warnings.push_back(std::to_string(out.within_group) + " within-group events dropped");
  return out;
}

void write_events(const NetworkPanel& panel, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  auto label = [&](int i) { return panel.labels().empty() ? std::to_string(i) : panel.labels()[static_cast<std::size_t>(i)]; };
  os << "sender,receiver,timestamp,count\n";
  for (int k = 1; k <= panel.intervals(); ++k) {
    for (Index r = 0; r < panel.dyad_count(); ++r) {
      const double y = panel.count(k, r);
      if (y <= 0.0) continue;
      const Dyad& d = panel.dyads().dyad(r);
      os << label(d.sender) << ',' << label(d.receiver) << ',' << k << ',' << static_cast<long long>(y) << '\n';
    }
  }
  if (!os) throw Error(ErrorCode::io, "failed writing '" + path + "'");
}

// --- JSON ---------------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, ctx + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::invalid_config, "unknown key '" + key + "' in " + ctx);
  }
}

template <class T>
void get_to(const json& j, const char* key, T& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, ctx + "." + key + ": " + e.what());
  }
}

template <class T>
void get_opt(const json& j, const char* key, std::optional<T>& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  get_to(j, key, v, ctx);
  out = v;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from(const json& j, const std::string& ctx) {
  if (j.is_null()) return {};
  if (!j.is_array()) throw Error(ErrorCode::invalid_config, ctx + " must be an array");
  Eigen::VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = j[i].get<double>();
  return v;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw Error(ErrorCode::invalid_config, ctx + " must be an array of rows");
  const auto rows = static_cast<Index>(j.size());
  const auto cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw Error(ErrorCode::invalid_config, ctx + " is ragged");
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json family_json(const Family& f) {
  return {{"kind", f.kind == Family::Kind::poisson ? "poisson" : "negbin"}, {"dispersion", f.dispersion}};
}

Family family_from(const json& j) {
  check_keys(j, {"kind", "dispersion"}, "family");
  Family f;
  std::string kind = "poisson";
  get_to(j, "kind", kind, "family");
  get_to(j, "dispersion", f.dispersion, "family");
  if (kind == "poisson") {
    f.kind = Family::Kind::poisson;
  } else if (kind == "negbin" || kind == "negative_binomial") {
    f.kind = Family::Kind::negative_binomial;
    if (!(f.dispersion > 0.0)) throw Error(ErrorCode::invalid_config, "negative binomial family needs dispersion > 0");
  } else {
    throw Error(ErrorCode::invalid_config, "unknown family '" + kind + "'");
  }
  return f;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {
      {"dim", c.dim},
      {"sigma_structure", to_string(c.sigma_structure)},
      {"family", family_json(c.family)},
      {"filter",
       {{"kind", to_string(c.filter.kind)},
        {"kappa", opt_json(c.filter.kappa)},
        {"update_iterations", c.filter.update_iterations},
        {"reuse_previous_variance", c.filter.reuse_previous_variance},
        {"variance_floor", c.filter.variance_floor}}},
      {"effects",
       {{"intercept", c.effects.intercept},
        {"sender", c.effects.sender},
        {"receiver", c.effects.receiver},
        {"covariates", c.effects.covariates},
        {"fix_effect_variances", c.effects.fix_effect_variances}}},
      {"em",
       {{"max_iterations", c.em.max_iterations},
        {"tolerance", c.em.tolerance},
        {"sigma_init_scale", c.em.sigma_init_scale},
        {"init_cov_scale", c.em.init_cov_scale},
        {"update_sigma", c.em.update_sigma},
        {"update_regression", c.em.update_regression},
        {"offset_method", to_string(c.em.offset_method)},
        {"offset_from_smoothed", c.em.offset_from_smoothed},
        {"init", to_string(c.em.init)},
        {"seed", c.em.seed}}},
  };
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j, {"dim", "sigma_structure", "family", "filter", "effects", "em"}, "model");
  ModelConfig c;
  get_to(j, "dim", c.dim, "model");
  if (j.contains("sigma_structure")) c.sigma_structure = parse_sigma_structure(j.at("sigma_structure").get<std::string>());
  if (j.contains("family")) c.family = family_from(j.at("family"));
  if (j.contains("filter")) {
    const json& f = j.at("filter");
    check_keys(f, {"kind", "kappa", "update_iterations", "reuse_previous_variance", "variance_floor"}, "filter");
    if (f.contains("kind")) c.filter.kind = parse_filter_kind(f.at("kind").get<std::string>());
    get_opt(f, "kappa", c.filter.kappa, "filter");
    get_to(f, "update_iterations", c.filter.update_iterations, "filter");
    get_to(f, "reuse_previous_variance", c.filter.reuse_previous_variance, "filter");
    get_to(f, "variance_floor", c.filter.variance_floor, "filter");
  }
  if (j.contains("effects")) {
    const json& e = j.at("effects");
    check_keys(e, {"intercept", "sender", "receiver", "covariates", "fix_effect_variances"}, "effects");
    get_to(e, "intercept", c.effects.intercept, "effects");
    get_to(e, "sender", c.effects.sender, "effects");
    get_to(e, "receiver", c.effects.receiver, "effects");
    get_to(e, "covariates", c.effects.covariates, "effects");
    get_to(e, "fix_effect_variances", c.effects.fix_effect_variances, "effects");
  }
  if (j.contains("em")) {
    const json& e = j.at("em");
    check_keys(e,
               {"max_iterations", "tolerance", "sigma_init_scale", "init_cov_scale", "update_sigma", "update_regression",
                "offset_method", "offset_from_smoothed", "init", "seed"},
               "em");
    get_to(e, "max_iterations", c.em.max_iterations, "em");
    get_to(e, "tolerance", c.em.tolerance, "em");
    get_to(e, "sigma_init_scale", c.em.sigma_init_scale, "em");
    get_to(e, "init_cov_scale", c.em.init_cov_scale, "em");
    get_to(e, "update_sigma", c.em.update_sigma, "em");
    get_to(e, "update_regression", c.em.update_regression, "em");
    if (e.contains("offset_method")) c.em.offset_method = parse_offset_method(e.at("offset_method").get<std::string>());
    get_to(e, "offset_from_smoothed", c.em.offset_from_smoothed, "em");
    if (e.contains("init")) c.em.init = parse_init_strategy(e.at("init").get<std::string>());
    get_to(e, "seed", c.em.seed, "em");
  }
  if (c.dim < 1) throw Error(ErrorCode::invalid_config, "dim must be at least 1");
  return c;
}

json to_json(const SimScenario& s) {
  return {{"nodes", s.nodes},         {"intervals", s.intervals}, {"dim", s.dim},
          {"dynamic", s.dynamic},     {"directed", s.directed},   {"intercept", opt_json(s.intercept)},
          {"mean_rate", s.mean_rate}, {"family", family_json(s.family)}, {"replicates", s.replicates},
          {"seed", s.seed}};
}

SimScenario scenario_from_json(const json& j) {
  check_keys(j, {"nodes", "intervals", "dim", "dynamic", "directed", "intercept", "mean_rate", "family", "replicates", "seed"},
             "scenario");
  SimScenario s;
  get_to(j, "nodes", s.nodes, "scenario");
  get_to(j, "intervals", s.intervals, "scenario");
  get_to(j, "dim", s.dim, "scenario");
  get_to(j, "dynamic", s.dynamic, "scenario");
  get_to(j, "directed", s.directed, "scenario");
  get_opt(j, "intercept", s.intercept, "scenario");
  get_to(j, "mean_rate", s.mean_rate, "scenario");
  if (j.contains("family")) s.family = family_from(j.at("family"));
  get_to(j, "replicates", s.replicates, "scenario");
  get_to(j, "seed", s.seed, "scenario");
  s.validate();
  return s;
}

json to_json(const StudySpec& spec) {
  json cells = json::array();
  for (const auto& c : spec.cells) {
    json cj = to_json(c.scenario);
    cj.erase("seed");
    cj["name"] = c.name;
    cells.push_back(cj);
  }
  json methods = json::array();
  for (auto m : spec.methods) methods.push_back(to_string(m));
  return {{"seed", spec.seed}, {"methods", methods}, {"fit", to_json(spec.fit)}, {"cells", cells}};
}

StudySpec study_spec_from_json(const json& j) {
  check_keys(j, {"seed", "methods", "fit", "defaults", "cells"}, "study");
  StudySpec spec;
  get_to(j, "seed", spec.seed, "study");
  if (j.contains("methods")) {
    spec.methods.clear();
    for (const auto& m : j.at("methods")) spec.methods.push_back(parse_study_method(m.get<std::string>()));
  }
  if (j.contains("fit")) spec.fit = model_config_from_json(j.at("fit"));
  const json defaults = j.value("defaults", json::object());
  if (!j.contains("cells") || !j.at("cells").is_array()) throw Error(ErrorCode::invalid_config, "study needs a 'cells' array");
  std::set<std::string> names;
  for (const auto& cj : j.at("cells")) {
    if (!cj.is_object() || !cj.contains("name")) throw Error(ErrorCode::invalid_config, "study cell without a name");
    json merged = defaults;
    for (const auto& [key, value] : cj.items()) merged[key] = value;
    StudyCell cell;
    cell.name = merged.at("name").get<std::string>();
    merged.erase("name");
    if (!names.insert(cell.name).second) throw Error(ErrorCode::invalid_config, "duplicate study cell '" + cell.name + "'");
    cell.scenario = scenario_from_json(merged);
    spec.cells.push_back(cell);
  }
  spec.validate();
  return spec;
}

json to_json(const IngestOptions& o) {
  json j = {{"directed", o.directed},
            {"start", opt_json(o.intervals.start)},
            {"end", opt_json(o.intervals.end)},
            {"width", opt_json(o.intervals.width)},
            {"count", opt_json(o.intervals.count)},
            {"clip", o.intervals.clip},
            {"exposure", opt_json(o.exposure_path)},
            {"groups", opt_json(o.groups_path)},
            {"covariates", opt_json(o.covariates_path)}};
  if (!o.nodes.empty()) j["nodes"] = o.nodes;
  return j;
}

IngestOptions ingest_options_from_json(const json& j) {
  check_keys(j, {"directed", "start", "end", "width", "count", "clip", "nodes", "exposure", "groups", "covariates"}, "data");
  IngestOptions o;
  get_to(j, "directed", o.directed, "data");
  get_opt(j, "start", o.intervals.start, "data");
  get_opt(j, "end", o.intervals.end, "data");
  get_opt(j, "width", o.intervals.width, "data");
  get_opt(j, "count", o.intervals.count, "data");
  get_to(j, "clip", o.intervals.clip, "data");
  get_to(j, "nodes", o.nodes, "data");
  get_opt(j, "exposure", o.exposure_path, "data");
  get_opt(j, "groups", o.groups_path, "data");
  get_opt(j, "covariates", o.covariates_path, "data");
  return o;
}

json to_json(const Parameters& p) {
  return {{"intercept", p.intercept},
          {"fixed_coeffs", vector_json(p.fixed_coeffs)},
          {"sender_effects", vector_json(p.sender_effects)},
          {"receiver_effects", vector_json(p.receiver_effects)},
          {"sender_variance", p.sender_variance},
          {"receiver_variance", p.receiver_variance},
          {"sigma", matrix_json(p.sigma)},
          {"dispersion", opt_json(p.dispersion)}};
}

Parameters parameters_from_json(const json& j) {
  check_keys(j,
             {"intercept", "fixed_coeffs", "sender_effects", "receiver_effects", "sender_variance", "receiver_variance",
              "sigma", "dispersion", "regression_df", "pinned_senders", "pinned_receivers"},
             "params");
  Parameters p;
  get_to(j, "intercept", p.intercept, "params");
  if (j.contains("fixed_coeffs")) p.fixed_coeffs = vector_from(j.at("fixed_coeffs"), "fixed_coeffs");
  if (j.contains("sender_effects")) p.sender_effects = vector_from(j.at("sender_effects"), "sender_effects");
  if (j.contains("receiver_effects")) p.receiver_effects = vector_from(j.at("receiver_effects"), "receiver_effects");
  get_to(j, "sender_variance", p.sender_variance, "params");
  get_to(j, "receiver_variance", p.receiver_variance, "params");
  if (j.contains("sigma")) p.sigma = matrix_from(j.at("sigma"), "sigma");
  get_opt(j, "dispersion", p.dispersion, "params");
  return p;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
}

void write_json(const json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  os << j.dump(2) << '\n';
  if (!os) throw Error(ErrorCode::io, "failed writing '" + path + "'");
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

std::string config_hash(const json& j) { return fnv1a_hex(j.dump()); }

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --- fit artifacts -------------------------------------------------------------

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::io, "cannot create directory '" + dir + "': " + ec.message());
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : path_(path), os_(path) {
    if (!os_) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  }
  std::ostream& out() { return os_; }
  void close() {
    os_.close();
    if (!os_) throw Error(ErrorCode::io, "failed writing '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream os_;
};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out + "\"";
}

}  // namespace

void write_trajectory(const LatentTrajectory& traj, const std::string& path) {
  CsvWriter w(path);
  auto& os = w.out();
  os << "k,node,dim,mean,var\n";
  for (int k = 0; k <= traj.intervals(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const bool has_cov = ku < traj.covariances.size();
    for (int i = 0; i < traj.nodes; ++i) {
      for (int m = 0; m < traj.dim; ++m) {
        const Index q = static_cast<Index>(i) * traj.dim + m;
        os << k << ',' << i << ',' << m << ',' << format_double(traj.means[ku][q]) << ','
           << format_double(has_cov ? traj.covariances[ku](q, q) : 0.0) << '\n';
      }
    }
  }
  w.close();
}

LatentTrajectory read_trajectory(const std::string& path, MomentKind kind) {
  CsvReader csv(path);
  const long ck = csv.require({"k"}), cn = csv.require({"node"}), cd = csv.require({"dim"});
  const long cm = csv.require({"mean"}), cv = csv.require({"var"});
  struct Cell {
    int k, i, m;
    double mean, var;
  };
  std::vector<Cell> cells;
  int kmax = -1, imax = -1, mmax = -1;
  std::vector<std::string> row;
  while (csv.next(row)) {
    Cell c{parse_int(row[ck], csv.where()), parse_int(row[cn], csv.where()), parse_int(row[cd], csv.where()),
           parse_number(row[cm], csv.where()), parse_number(row[cv], csv.where())};
    if (c.k < 0 || c.i < 0 || c.m < 0) parse_fail(csv.where(), "negative index");
    kmax = std::max(kmax, c.k);
    imax = std::max(imax, c.i);
    mmax = std::max(mmax, c.m);
    cells.push_back(c);
  }
  if (cells.empty()) parse_fail(path, "no rows");
  LatentTrajectory t;
  t.nodes = imax + 1;
  t.dim = mmax + 1;
  t.kind = kind;
  const Index pd = t.state_dim();
  if (static_cast<Index>(cells.size()) != (kmax + 1) * pd) parse_fail(path, "incomplete trajectory table");
  t.means.assign(static_cast<std::size_t>(kmax + 1), Eigen::VectorXd::Zero(pd));
  t.covariances.assign(static_cast<std::size_t>(kmax + 1), Eigen::MatrixXd::Zero(pd, pd));
  for (const Cell& c : cells) {
    const Index q = static_cast<Index>(c.i) * t.dim + c.m;
    t.means[static_cast<std::size_t>(c.k)][q] = c.mean;
    t.covariances[static_cast<std::size_t>(c.k)](q, q) = c.var;
  }
  return t;
}

void serialize_fit(const FitResult& fit, const NetworkPanel& panel, const std::string& dir, const json& extra_manifest) {
  ensure_dir(dir);
  const fs::path base(dir);
  const std::vector<std::string> files{"trajectories.csv", "filtered.csv", "params.json", "trace.csv", "residuals.csv"};

  write_trajectory(fit.smoothed, (base / "trajectories.csv").string());
  write_trajectory(fit.filtered, (base / "filtered.csv").string());

  json pj = to_json(fit.params);
  pj["regression_df"] = fit.regression_df;
  pj["pinned_senders"] = fit.pinned_senders;
  pj["pinned_receivers"] = fit.pinned_receivers;
  write_json(pj, (base / "params.json").string());

  {
    CsvWriter w((base / "trace.csv").string());
    w.out() << "iteration,q_poisson,q_gaussian,q_total,sigma_spherical,intercept,regression_iterations,q_previous,elbo\n";
    for (const auto& r : fit.trace.records) {
      w.out() << r.iteration << ',' << format_double(r.q_poisson) << ',' << format_double(r.q_gaussian) << ','
              << format_double(r.q_total()) << ',' << format_double(r.sigma_spherical) << ',' << format_double(r.intercept)
              << ',' << r.regression_iterations << ',' << format_double(r.q_previous) << ',' << format_double(r.elbo) << '\n';
    }
    w.close();
  }

  {
    CsvWriter w((base / "residuals.csv").string());
    w.out() << "k,sender,receiver,observed,fitted,variance,residual,distance\n";
    for (const auto& r : residuals(fit, panel)) {
      w.out() << r.k << ',' << r.sender << ',' << r.receiver << ',' << format_double(r.observed) << ','
              << format_double(r.fitted) << ',' << format_double(r.variance) << ',' << format_double(r.residual) << ','
              << format_double(r.distance) << '\n';
    }
    w.close();
  }

  const json config = to_json(fit.config);
  json manifest = {
      {"schema_version", kSchemaVersion},
      {"tool", "latentrem"},
      {"version", kVersion},
      {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
      {"config", config},
      {"config_hash", config_hash(config)},
      {"seed", fit.config.em.seed},
      {"static", fit.static_model},
      {"iterations", fit.iterations},
      {"converged", fit.converged},
      {"divergence", fit.divergence ? json{{"iteration", fit.divergence_iteration},
                                           {"reason", to_string(fit.divergence.reason)},
                                           {"detail", fit.divergence.detail}}
                                    : json(nullptr)},
      {"initial",
       {{"strategy", to_string(fit.initial.strategy)}, {"fallback", fit.initial.fallback}, {"warning", fit.initial.warning}}},
      {"warnings", fit.warnings},
      {"nodes", panel.labels()},
      {"intervals", panel.intervals()},
      {"directed", panel.directed()},
      {"dim", fit.smoothed.dim},
  };
  json hashes = json::object();
  for (const auto& f : files) hashes[f] = fnv1a_file((base / f).string());
  manifest["files"] = hashes;
  for (const auto& [key, value] : extra_manifest.items()) manifest[key] = value;
  write_json(manifest, (base / "manifest.json").string());
}

FitResult read_fit(const std::string& dir) {
  const fs::path base(dir);
  const json manifest = read_json((base / "manifest.json").string());
  if (manifest.value("schema_version", 0) != kSchemaVersion) {
    throw Error(ErrorCode::parse, dir + ": unsupported schema version");
  }
  FitResult fit;
  fit.config = model_config_from_json(manifest.at("config"));
  fit.static_model = manifest.value("static", false);
  fit.iterations = manifest.value("iterations", 0);
  fit.converged = manifest.value("converged", false);
  if (manifest.contains("divergence") && !manifest.at("divergence").is_null()) {
    const json& d = manifest.at("divergence");
    fit.divergence.reason = DivergenceReason::non_finite;
    const std::string reason = d.value("reason", "non_finite");
    for (auto r : {DivergenceReason::non_finite, DivergenceReason::singular, DivergenceReason::cholesky}) {
      if (to_string(r) == reason) fit.divergence.reason = r;
    }
    fit.divergence.detail = d.value("detail", "");
    fit.divergence_iteration = d.value("iteration", 0);
  }
  if (manifest.contains("warnings")) fit.warnings = manifest.at("warnings").get<std::vector<std::string>>();
  if (manifest.contains("initial")) {
    const json& in = manifest.at("initial");
    fit.initial.strategy = parse_init_strategy(in.value("strategy", "mds"));
    fit.initial.fallback = in.value("fallback", false);
    fit.initial.warning = in.value("warning", "");
  }

  const json pj = read_json((base / "params.json").string());
  fit.params = parameters_from_json(pj);
  fit.regression_df = pj.value("regression_df", 0.0);
  fit.pinned_senders = pj.value("pinned_senders", std::vector<int>{});
  fit.pinned_receivers = pj.value("pinned_receivers", std::vector<int>{});

  fit.smoothed = read_trajectory((base / "trajectories.csv").string(), MomentKind::smoothed);
  fit.filtered = read_trajectory((base / "filtered.csv").string(), MomentKind::filtered);
  fit.initial.mean = fit.smoothed.means.front();
  fit.initial.cov = fit.smoothed.covariances.front();

  CsvReader csv((base / "trace.csv").string());
  const long ci = csv.require({"iteration"}), cp = csv.require({"q_poisson"}), cg = csv.require({"q_gaussian"});
  const long cs = csv.require({"sigma_spherical"}), ca = csv.require({"intercept"});
  const long cr = csv.require({"regression_iterations"}), cq = csv.require({"q_previous"}), ce = csv.require({"elbo"});
  std::vector<std::string> row;
  while (csv.next(row)) {
    TraceRecord r;
    r.iteration = parse_int(row[ci], csv.where());
    r.q_poisson = parse_number(row[cp], csv.where());
    r.q_gaussian = parse_number(row[cg], csv.where());
    r.sigma_spherical = parse_number(row[cs], csv.where());
    r.intercept = parse_number(row[ca], csv.where());
    r.regression_iterations = parse_int(row[cr], csv.where());
    r.q_previous = parse_number(row[cq], csv.where());
    r.elbo = parse_number(row[ce], csv.where());
    fit.trace.records.push_back(r);
  }
  return fit;
}

// --- study artifacts -------------------------------------------------------------

void write_study(const StudyResult& result, const StudySpec& spec, const std::string& dir) {
  ensure_dir(dir);
  const fs::path base(dir);
  {
    CsvWriter w((base / "results.csv").string());
    w.out() << "cell,replicate,method,nodes,intervals,dim,family,dispersion,mean_rate,data_seed,failed,diverged,"
               "iterations,converged,kl,kl_se,caic,sigma_spherical,error\n";
    for (const auto& r : result.rows) {
      w.out() << csv_field(r.cell) << ',' << r.replicate << ',' << to_string(r.method) << ',' << r.nodes << ','
              << r.intervals << ',' << r.dim << ',' << r.family << ',' << format_double(r.dispersion) << ','
              << format_double(r.mean_rate) << ',' << r.data_seed << ',' << (r.failed ? 1 : 0) << ','
              << (r.diverged ? 1 : 0) << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ','
              << format_double(r.kl) << ',' << format_double(r.kl_se) << ',' << format_double(r.caic) << ','
              << format_double(r.sigma_spherical) << ',' << csv_field(r.error) << '\n';
    }
    w.close();
  }
  {
    CsvWriter w((base / "aggregates.csv").string());
    w.out() << "cell,method,replicates,completed,divergences,divergence_rate,kl_mean,kl_median,kl_sd\n";
    for (const auto& a : result.aggregates) {
      w.out() << csv_field(a.cell) << ',' << to_string(a.method) << ',' << a.replicates << ',' << a.completed << ','
              << a.divergences << ',' << format_double(a.divergence_rate) << ',' << format_double(a.kl_mean) << ','
              << format_double(a.kl_median) << ',' << format_double(a.kl_sd) << '\n';
    }
    w.close();
  }
  {
    CsvWriter w((base / "timings.csv").string());
    w.out() << "cell,replicate,method,seconds\n";
    for (const auto& r : result.rows) {
      w.out() << csv_field(r.cell) << ',' << r.replicate << ',' << to_string(r.method) << ',' << format_double(r.seconds)
              << '\n';
    }
    w.close();
  }
  const json sj = to_json(spec);
  json seeds = json::array();
  for (const auto& r : result.rows) {
    if (r.method != spec.methods.front()) continue;
    seeds.push_back({{"cell", r.cell}, {"replicate", r.replicate}, {"data_seed", r.data_seed}});
  }
  json manifest = {{"schema_version", kSchemaVersion},
                   {"tool", "latentrem"},
                   {"version", kVersion},
                   {"master_seed", spec.seed},
                   {"study", sj},
                   {"config_hash", config_hash(sj)},
                   {"fit_config_hash", config_hash(sj.at("fit"))},
                   {"seeds", seeds},
                   {"files",
                    {{"results.csv", fnv1a_file((base / "results.csv").string())},
                     {"aggregates.csv", fnv1a_file((base / "aggregates.csv").string())}}}};
  write_json(manifest, (base / "manifest.json").string());
}

}  // namespace latentrem
