#pragma once

// JSON documents (calibration, scenario, run manifest) and CSV trace output.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dflim/calibration.hpp"
#include "dflim/version.hpp"
#include "dflim/cusum.hpp"
#include "dflim/simulate.hpp"

namespace dflim {

using json = nlohmann::json;

inline constexpr const char* kCalibrationSchema = "dflim-cal-v1";
inline constexpr const char* kScenarioSchema = "dflim-scn-v1";
inline constexpr const char* kManifestSchema = "dflim-run-v1";

namespace detail {

inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where,
                         std::initializer_list<const char*> required = {}) {
  if (!j.is_object()) throw ParseError(where + ": expected an object", 0);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ParseError(where + ": unknown field '" + it.key() + "'", 0);
  }
  for (const char* r : required)
    if (!j.contains(r)) throw ParseError(where + ": missing field '" + std::string(r) + "'", 0);
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing field '" + std::string(key) + "'", 0);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + "." + key + ": " + e.what(), 0);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const json& j, const std::string& where) {
  require_keys(j, {"rows", "cols", "data"}, where, {"rows", "cols", "data"});
  const long rows = get<long>(j, "rows", where);
  const long cols = get<long>(j, "cols", where);
  const auto data = get<std::vector<double>>(j, "data", where);
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw ParseError(where + ": data length " + std::to_string(data.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols),
                     0);
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j, const char* key, const std::string& where) {
  const auto data = get<std::vector<double>>(j, key, where);
  return Eigen::Map<const Vector>(data.data(), static_cast<long>(data.size()));
}

inline json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what(), static_cast<long long>(e.byte));
  }
}

inline void write_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write to '" + path.string() + "' failed");
}

}  // namespace detail

// ---- calibration -----------------------------------------------------------------

inline json calibration_to_json(const Calibration& cal) {
  const CalibrationParams& p = cal.params;
  const CalibrationProvenance& pv = cal.provenance;
  json j;
  j["schema"] = kCalibrationSchema;
  j["model"] = {{"m0", detail::matrix_to_json(cal.model.m0)},
                {"lambda", detail::vector_to_json(cal.model.basis.lambda)},
                {"u", detail::matrix_to_json(cal.model.basis.u)},
                {"v", detail::matrix_to_json(cal.model.basis.v)}};
  j["params"] = {{"mu0", detail::vector_to_json(p.mu0)},
                 {"cov0", detail::matrix_to_json(p.cov0)},
                 {"cov0_chol", detail::matrix_to_json(p.cov0_chol)},
                 {"cov0_jitter", p.cov0_jitter},
                 {"sigma_t", p.sigma_t},
                 {"t_mean", p.t_mean},
                 {"omega0_sq", p.omega0_sq},
                 {"c", p.c},
                 {"target_arl0", p.target_arl0},
                 {"control_limit_h", p.control_limit_h},
                 {"batch_size_m", p.batch_size_m}};
  j["provenance"] = {{"n", pv.n}, {"q", pv.q}, {"c", pv.c}, {"m", pv.m}, {"target_arl0", pv.target_arl0},
                     {"holdout", pv.holdout}};
  j["provenance"]["seed"] = pv.seed ? json(*pv.seed) : json(nullptr);
  j["warnings"] = cal.warnings;
  return j;
}

inline Calibration calibration_from_json(const json& j) {
  const std::string w = kCalibrationSchema;
  detail::require_keys(j, {"schema", "model", "params", "provenance", "warnings"}, w,
                       {"schema", "model", "params", "provenance"});
  if (detail::get<std::string>(j, "schema", w) != kCalibrationSchema) {
    throw ParseError("unsupported calibration schema '" + j["schema"].get<std::string>() + "'", 0);
  }
  Calibration cal;
  const json& m = j["model"];
  detail::require_keys(m, {"m0", "lambda", "u", "v"}, w + ".model", {"m0", "lambda", "u", "v"});
  cal.model.m0 = detail::matrix_from_json(m["m0"], w + ".model.m0");
  cal.model.basis.lambda = detail::vector_from_json(m, "lambda", w + ".model");
  cal.model.basis.u = detail::matrix_from_json(m["u"], w + ".model.u");
  cal.model.basis.v = detail::matrix_from_json(m["v"], w + ".model.v");

  const json& pj = j["params"];
  const std::string pw = w + ".params";
  detail::require_keys(pj,
                       {"mu0", "cov0", "cov0_chol", "cov0_jitter", "sigma_t", "t_mean", "omega0_sq", "c",
                        "target_arl0", "control_limit_h", "batch_size_m"},
                       pw,
                       {"mu0", "cov0", "cov0_chol", "sigma_t", "t_mean", "omega0_sq", "c", "target_arl0",
                        "control_limit_h", "batch_size_m"});
  CalibrationParams& p = cal.params;
  p.mu0 = detail::vector_from_json(pj, "mu0", pw);
  p.cov0 = detail::matrix_from_json(pj["cov0"], pw + ".cov0");
  p.cov0_chol = detail::matrix_from_json(pj["cov0_chol"], pw + ".cov0_chol");
  p.cov0_jitter = detail::get_or<double>(pj, "cov0_jitter", 0.0, pw);
  p.sigma_t = detail::get<double>(pj, "sigma_t", pw);
  p.t_mean = detail::get<double>(pj, "t_mean", pw);
  p.omega0_sq = detail::get<double>(pj, "omega0_sq", pw);
  p.c = detail::get<double>(pj, "c", pw);
  p.target_arl0 = detail::get<double>(pj, "target_arl0", pw);
  p.control_limit_h = detail::get<double>(pj, "control_limit_h", pw);
  p.batch_size_m = detail::get<long>(pj, "batch_size_m", pw);

  const json& v = j["provenance"];
  const std::string vw = w + ".provenance";
  detail::require_keys(v, {"n", "q", "c", "m", "target_arl0", "holdout", "seed"}, vw);
  cal.provenance.n = detail::get_or<long>(v, "n", 0, vw);
  cal.provenance.q = detail::get_or<double>(v, "q", 0.9, vw);
  cal.provenance.c = detail::get_or<double>(v, "c", p.c, vw);
  cal.provenance.m = detail::get_or<long>(v, "m", p.batch_size_m, vw);
  cal.provenance.target_arl0 = detail::get_or<double>(v, "target_arl0", p.target_arl0, vw);
  cal.provenance.holdout = detail::get_or<long>(v, "holdout", 0, vw);
  if (v.contains("seed") && !v["seed"].is_null()) cal.provenance.seed = detail::get<std::uint64_t>(v, "seed", vw);
  if (j.contains("warnings")) cal.warnings = detail::get<std::vector<std::string>>(j, "warnings", w);

  const long r = cal.model.basis.lambda.size();
  const long p1 = cal.model.m0.rows();
  const long p2 = cal.model.m0.cols();
  if (r < 1 || cal.model.basis.u.rows() != p1 || cal.model.basis.u.cols() != r || cal.model.basis.v.rows() != p2 ||
      cal.model.basis.v.cols() != r || p.mu0.size() != 2 * r || p.cov0.rows() != 2 * r || p.cov0.cols() != 2 * r ||
      p.cov0_chol.rows() != 2 * r || p.cov0_chol.cols() != 2 * r) {
    throw ParseError(w + ": inconsistent dimensions between model and params", 0);
  }
  if (!(p.control_limit_h > 0.0) || !(p.sigma_t > 0.0) || !(p.omega0_sq > 0.0)) {
    throw Error(ErrorKind::InvalidInput, w + ": H, sigma_t and omega0_sq must be positive");
  }
  return cal;
}

inline Calibration load_calibration(const std::filesystem::path& path) {
  return calibration_from_json(detail::parse_file(path));
}

inline void save_calibration(const Calibration& cal, const std::filesystem::path& path) {
  detail::write_file(path, calibration_to_json(cal));
}

// ---- scenario ------------------------------------------------------------------------

/// A scenario document: the process plus where (if anywhere) the shift starts.
struct ScenarioDocument {
  ScenarioConfig config;
  std::optional<long> shift_at;
};

inline json scenario_to_json(const ScenarioConfig& c, std::optional<long> shift_at = std::nullopt) {
  auto cov = [](const CovSpec& s) { return json{{"kind", to_string(s.kind)}, {"dim", s.dim}, {"rho", s.rho}}; };
  json j;
  j["schema"] = kScenarioSchema;
  j["p1"] = c.p1;
  j["p2"] = c.p2;
  j["background"] = to_string(c.background);
  j["shift"] = to_string(c.shift);
  j["shift_scale"] = c.shift_scale;
  j["shift_at"] = shift_at ? json(*shift_at) : json(nullptr);
  j["noise"] = {{"dist", to_string(c.noise.dist)}, {"row_cov", cov(c.noise.row_cov)}, {"col_cov", cov(c.noise.col_cov)}};
  j["temporal"] = {{"lag", c.temporal.lag}, {"phi", c.temporal.phi}};
  j["length"] = c.length;
  j["seed"] = c.seed;
  return j;
}

inline ScenarioDocument scenario_from_json(const json& j) {
  const std::string w = kScenarioSchema;
  detail::require_keys(j,
                       {"schema", "p1", "p2", "background", "shift", "shift_scale", "shift_at", "noise", "temporal",
                        "length", "seed"},
                       w, {"schema", "p1", "p2"});
  if (detail::get<std::string>(j, "schema", w) != kScenarioSchema) {
    throw ParseError("unsupported scenario schema '" + j["schema"].get<std::string>() + "'", 0);
  }
  auto parse_enum = [&](auto fallback, const json& obj, const char* key, const std::string& where) {
    using E = decltype(fallback);
    if (!obj.contains(key)) return fallback;
    try {
      return enum_from_string<E>(detail::get<std::string>(obj, key, where));
    } catch (const Error& e) {
      throw ParseError(where + "." + key + ": " + e.detail(), 0);
    }
  };
  ScenarioDocument doc;
  ScenarioConfig& c = doc.config;
  c.p1 = detail::get<long>(j, "p1", w);
  c.p2 = detail::get<long>(j, "p2", w);
  c.background = parse_enum(Background::chessboard2, j, "background", w);
  c.shift = parse_enum(ShiftKind::none, j, "shift", w);
  c.shift_scale = detail::get_or<double>(j, "shift_scale", 1.0, w);
  if (j.contains("shift_at") && !j["shift_at"].is_null()) doc.shift_at = detail::get<long>(j, "shift_at", w);
  c.length = detail::get_or<long>(j, "length", 800, w);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", 1, w);
  c.noise.row_cov.dim = c.p1;
  c.noise.col_cov.dim = c.p2;
  if (j.contains("noise")) {
    const json& n = j["noise"];
    const std::string nw = w + ".noise";
    detail::require_keys(n, {"dist", "row_cov", "col_cov"}, nw);
    c.noise.dist = parse_enum(NoiseDist::normal, n, "dist", nw);
    auto cov = [&](const char* key, CovSpec& s) {
      if (!n.contains(key)) return;
      const json& cj = n[key];
      const std::string cw = nw + "." + key;
      detail::require_keys(cj, {"kind", "dim", "rho"}, cw);
      s.kind = parse_enum(CovKind::tri_diagonal, cj, "kind", cw);
      s.dim = detail::get_or<long>(cj, "dim", s.dim, cw);
      s.rho = detail::get_or<double>(cj, "rho", 0.3, cw);
    };
    cov("row_cov", c.noise.row_cov);
    cov("col_cov", c.noise.col_cov);
  }
  if (j.contains("temporal")) {
    const json& t = j["temporal"];
    detail::require_keys(t, {"lag", "phi"}, w + ".temporal");
    c.temporal.lag = detail::get_or<long>(t, "lag", 5, w + ".temporal");
    c.temporal.phi = detail::get_or<double>(t, "phi", 0.5, w + ".temporal");
  }
  Scenario::validate(c);
  return doc;
}

inline ScenarioDocument load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(detail::parse_file(path));
}

// ---- traces ----------------------------------------------------------------------------

/// Per-step CSV with the drift and control limit as header comments.
class TraceWriter {
 public:
  TraceWriter(const std::filesystem::path& path, const MonitorConfig& cfg) : out_(path) {
    if (!out_) throw Error(ErrorKind::IoError, "cannot write trace '" + path.string() + "'");
    out_.precision(17);
    out_ << "# drift=" << cfg.drift << "\n# H=" << cfg.control_limit_h << "\nt,T_t,S_t,alarm\n";
  }

  void operator()(const TraceRecord& r) { out_ << r.t << ',' << r.t_stat << ',' << r.s << ',' << (r.alarm ? 1 : 0) << '\n'; }

  TraceSink sink() {
    return [this](const TraceRecord& r) { (*this)(r); };
  }

 private:
  std::ofstream out_;
};

inline void write_alarms_csv(const std::vector<AlarmEvent>& alarms, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write alarms '" + path.string() + "'");
  out.precision(17);
  out << "alarm,time,S_at_alarm\n";
  for (std::size_t i = 0; i < alarms.size(); ++i) out << i + 1 << ',' << alarms[i].time << ',' << alarms[i].s_at_alarm << '\n';
}

// ---- run manifest ------------------------------------------------------------------------

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now()) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::optional<std::string> config_path;
  std::optional<std::string> calibration_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;
  int exit_code = 0;
  std::string error;

  json to_json() const {
    json j;
    j["schema"] = kManifestSchema;
    j["version"] = DFLIM_VERSION;
    j["subcommand"] = subcommand;
    j["argv"] = argv;
    j["config"] = config_path ? json(*config_path) : json(nullptr);
    j["calibration"] = calibration_path ? json(*calibration_path) : json(nullptr);
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["outputs"] = outputs;
    j["started"] = started;
    j["finished"] = finished;
    j["exit_code"] = exit_code;
    j["error"] = error.empty() ? json(nullptr) : json(error);
    return j;
  }

  void save(const std::filesystem::path& path) const { detail::write_file(path, to_json()); }
};

}  // namespace dflim
