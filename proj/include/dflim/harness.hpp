#pragma once

// Monte Carlo run-length estimation, scenario grids with CSV/JSON output, and
// sample-based checks of the feature shift results.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dflim/calibration.hpp"
#include "dflim/version.hpp"
#include "dflim/cusum.hpp"
#include "dflim/diagnostics.hpp"
#include "dflim/simulate.hpp"

namespace dflim {

struct ArlEstimate {
  double mean_rl = 0.0;
  double std_err = 0.0;
  long n_reps = 0;
  long n_censored = 0;
  long max_len = 0;
  /// True when censored runs were counted at max_len, making mean_rl a lower bound.
  bool lower_bound = false;
  std::vector<long> run_lengths;  // per replication; max_len for censored runs
  std::vector<bool> censored;
};

enum class CensorPolicy { include_at_max, exclude };

struct ArlOptions {
  std::optional<long> shift_at;  // 1-based frame of the change, none for ARL₀
  long n_reps = 300;
  long max_len = 800;
  std::uint64_t base_seed = 1;
  CensorPolicy censor = CensorPolicy::include_at_max;
  unsigned threads = 0;  // 0: DFLIM_THREADS or hardware concurrency
};

/// Replication index reserved for calibration streams so they never overlap monitoring runs.
inline constexpr std::uint64_t kCalibrationReplication = 0x8000000000000000ull;

/// Worker count: explicit request, else DFLIM_THREADS, else hardware concurrency.
inline unsigned worker_count(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DFLIM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
template <typename Body>
void parallel_for(long n, unsigned threads, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<long>(std::max(1u, threads), std::max(1L, n)));
  if (workers <= 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (long i = next++; i < n && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Run length of one replication: τ, or nullopt when no alarm within max_len.
inline std::optional<long> run_length(const std::shared_ptr<const Scenario>& sc, const InControlModel& model,
                                      const CalibrationParams& params, std::optional<long> shift_at,
                                      std::uint64_t rep, std::uint64_t seed) {
  SequenceGenerator gen(sc, shift_at, rep, seed);
  auto alarm = run(gen, model, params);
  if (alarm) return alarm->time;
  return std::nullopt;
}

inline ArlEstimate summarize_run_lengths(std::vector<long> lengths, std::vector<bool> censored, long max_len,
                                         CensorPolicy policy) {
  ArlEstimate est;
  est.n_reps = static_cast<long>(lengths.size());
  est.max_len = max_len;
  est.n_censored = static_cast<long>(std::count(censored.begin(), censored.end(), true));
  std::vector<double> used;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (censored[i] && policy == CensorPolicy::exclude) continue;
    used.push_back(static_cast<double>(lengths[i]));
  }
  est.lower_bound = est.n_censored > 0 && policy == CensorPolicy::include_at_max;
  if (!used.empty()) {
    double sum = 0.0;
    for (double v : used) sum += v;
    est.mean_rl = sum / static_cast<double>(used.size());
    if (used.size() > 1) {
      double ss = 0.0;
      for (double v : used) ss += (v - est.mean_rl) * (v - est.mean_rl);
      est.std_err = std::sqrt(ss / static_cast<double>(used.size() - 1)) / std::sqrt(static_cast<double>(used.size()));
    }
  } else {
    est.mean_rl = std::numeric_limits<double>::quiet_NaN();
    est.std_err = std::numeric_limits<double>::quiet_NaN();
  }
  est.run_lengths = std::move(lengths);
  est.censored = std::move(censored);
  return est;
}

/**
 * Monitors n_reps independent sequences of up to max_len frames. Replication i
 * draws its noise from streams keyed by (base_seed, i), so results do not
 * depend on the thread count.
 */
inline ArlEstimate estimate_arl(const ScenarioConfig& scenario, const InControlModel& model,
                                const CalibrationParams& params, const ArlOptions& opts) {
  if (opts.n_reps < 2) throw Error(ErrorKind::InvalidInput, "estimate_arl needs n_reps >= 2");
  if (opts.max_len < 1) throw Error(ErrorKind::InvalidInput, "max_len must be positive");
  if (model.m0.rows() != scenario.p1 || model.m0.cols() != scenario.p2) {
    throw Error(ErrorKind::InvalidInput, "calibration is for " + std::to_string(model.m0.rows()) + "x" +
                                             std::to_string(model.m0.cols()) + " frames, scenario is " +
                                             std::to_string(scenario.p1) + "x" + std::to_string(scenario.p2));
  }
  if (params.mu0.size() != 2 * model.rank()) {
    throw Error(ErrorKind::InvalidInput, "calibration parameters do not match the model rank");
  }
  ScenarioConfig cfg = scenario;
  cfg.length = opts.max_len;
  const auto sc = Scenario::compile(cfg);

  std::vector<long> lengths(static_cast<std::size_t>(opts.n_reps), opts.max_len);
  std::vector<char> cens(static_cast<std::size_t>(opts.n_reps), 1);
  if (std::isfinite(params.control_limit_h)) {
    parallel_for(opts.n_reps, worker_count(opts.threads), [&](long i) {
      const auto rl = run_length(sc, model, params, opts.shift_at, static_cast<std::uint64_t>(i), opts.base_seed);
      if (rl) {
        lengths[static_cast<std::size_t>(i)] = *rl;
        cens[static_cast<std::size_t>(i)] = 0;
      }
    });
  }
  return summarize_run_lengths(std::move(lengths), std::vector<bool>(cens.begin(), cens.end()), opts.max_len,
                               opts.censor);
}

/**
 * Calibrates on n_train in-control frames of the scenario drawn from the
 * reserved calibration stream. The true background is passed as the in-control
 * mean, so rank selection sees the exact low-rank spectrum.
 */
inline Calibration calibrate_scenario(const ScenarioConfig& scenario, long n_train, const CalibrationOptions& opts,
                                      std::uint64_t seed) {
  ScenarioConfig cfg = scenario;
  cfg.shift = ShiftKind::none;
  cfg.length = n_train;
  const auto sc = Scenario::compile(cfg);
  SequenceGenerator gen(sc, std::nullopt, kCalibrationReplication, seed);
  std::vector<Matrix> frames;
  frames.reserve(static_cast<std::size_t>(n_train));
  while (auto x = gen.next()) frames.push_back(std::move(*x));
  Calibration cal = calibrate(frames, sc->m0, opts);
  cal.provenance.seed = seed;
  return cal;
}

// ---- grids --------------------------------------------------------------------------

struct GridCell {
  std::string label;
  ScenarioConfig scenario;       // shift kind set here; none for ARL₀ cells
  std::optional<long> shift_at;  // defaults to frame 1 when scenario.shift != none
};

struct GridOptions {
  long n_train = 400;
  CalibrationOptions calibration{1.0, 0.01, 200.0, 50};
  long n_reps = 300;
  long max_len = 800;
  std::uint64_t seed = 1;
  CensorPolicy censor = CensorPolicy::include_at_max;
  unsigned threads = 0;
};

struct GridRow {
  GridCell cell;
  long rank = 0;
  double h = std::numeric_limits<double>::quiet_NaN();
  ArlEstimate estimate;
  std::string error;  // empty when the cell ran
};

struct GridReport {
  GridOptions options;
  std::vector<GridRow> rows;
};

/// Identity of the in-control process a calibration belongs to.
inline std::string calibration_key(const ScenarioConfig& s) {
  std::ostringstream os;
  os << s.p1 << 'x' << s.p2 << '|' << to_string(s.background) << '|' << to_string(s.noise.dist) << '|'
     << to_string(s.noise.row_cov.kind) << ':' << s.noise.row_cov.rho << '|' << to_string(s.noise.col_cov.kind)
     << ':' << s.noise.col_cov.rho << '|' << s.temporal.lag << ':' << s.temporal.phi;
  return os.str();
}

/// Cells sharing an in-control process share one calibration; a failing cell records its error.
inline GridReport run_grid(const std::vector<GridCell>& grid, const GridOptions& opts) {
  if (grid.empty()) throw Error(ErrorKind::InvalidInput, "empty scenario grid");
  GridReport report;
  report.options = opts;
  std::map<std::string, std::shared_ptr<const Calibration>> cache;
  std::map<std::string, std::string> cache_errors;
  for (const GridCell& cell : grid) {
    GridRow row;
    row.cell = cell;
    try {
      const std::string key = calibration_key(cell.scenario);
      if (cache_errors.count(key)) throw Error(ErrorKind::InvalidInput, cache_errors[key]);
      if (!cache.count(key)) {
        try {
          cache[key] = std::make_shared<const Calibration>(
              calibrate_scenario(cell.scenario, opts.n_train, opts.calibration, opts.seed));
        } catch (const std::exception& e) {
          cache_errors[key] = std::string("calibration: ") + e.what();
          throw;
        }
      }
      const Calibration& cal = *cache[key];
      row.rank = cal.model.rank();
      row.h = cal.params.control_limit_h;
      ArlOptions ao;
      ao.shift_at = cell.shift_at;
      if (!ao.shift_at && cell.scenario.shift != ShiftKind::none) ao.shift_at = 1;
      ao.n_reps = opts.n_reps;
      ao.max_len = opts.max_len;
      ao.base_seed = opts.seed;
      ao.censor = opts.censor;
      ao.threads = opts.threads;
      row.estimate = estimate_arl(cell.scenario, cal.model, cal.params, ao);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline const char* kGridCsvHeader =
    "label,p1,p2,noise,background,lag,covariance,shift,shift_at,rank,H,mean_rl,std_err,n_reps,n_censored,max_len,"
    "lower_bound,error";

inline void write_grid_csv(const GridReport& report, std::ostream& os) {
  os << kGridCsvHeader << '\n';
  os.precision(17);
  for (const GridRow& r : report.rows) {
    const ScenarioConfig& s = r.cell.scenario;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    std::optional<long> shift_at = r.cell.shift_at;
    if (!shift_at && s.shift != ShiftKind::none) shift_at = 1;
    os << r.cell.label << ',' << s.p1 << ',' << s.p2 << ',' << to_string(s.noise.dist) << ','
       << to_string(s.background) << ',' << s.temporal.lag << ',' << to_string(s.noise.row_cov.kind) << ','
       << to_string(s.shift) << ',' << (shift_at ? std::to_string(*shift_at) : "") << ',' << r.rank << ',' << r.h
       << ',' << r.estimate.mean_rl << ',' << r.estimate.std_err << ',' << r.estimate.n_reps << ','
       << r.estimate.n_censored << ',' << r.estimate.max_len << ',' << (r.estimate.lower_bound ? 1 : 0) << ",\""
       << err << "\"\n";
  }
}

/// Sidecar with everything needed to rerun the grid.
inline nlohmann::json grid_sidecar(const GridReport& report) {
  const GridOptions& o = report.options;
  nlohmann::json j;
  j["schema"] = "dflim-grid-v1";
  j["version"] = DFLIM_VERSION;
  j["seed"] = o.seed;
  j["calibration_replication"] = kCalibrationReplication;
  j["replication_seeds"] = "replication i uses streams keyed by (seed, i, frame)";
  j["n_train"] = o.n_train;
  j["n_reps"] = o.n_reps;
  j["max_len"] = o.max_len;
  j["q"] = o.calibration.q;
  j["c"] = o.calibration.c;
  j["target_arl0"] = o.calibration.target_arl0;
  j["batch_m"] = o.calibration.batch_m;
  j["censor_policy"] = o.censor == CensorPolicy::include_at_max ? "include_at_max" : "exclude";
  j["cells"] = report.rows.size();
  return j;
}

/// The in-control settings of the published tables: noise × rank × lag × covariance.
inline std::vector<ScenarioConfig> standard_settings(long p1, long p2) {
  std::vector<ScenarioConfig> out;
  for (NoiseDist d : {NoiseDist::normal, NoiseDist::exp_transformed})
    for (Background b : {Background::chessboard2, Background::chessboard2_plus_rank3})
      for (long lag : {5L, 20L})
        for (CovKind k : {CovKind::tri_diagonal, CovKind::exponential})
          out.push_back(ScenarioConfig::make(p1, p2, d, b, lag, k));
  return out;
}

inline std::string setting_label(const ScenarioConfig& s) {
  std::ostringstream os;
  os << (s.noise.dist == NoiseDist::normal ? "normal" : "nonnormal") << "-r"
     << (s.background == Background::chessboard2 ? 2 : 5) << "-lag" << s.temporal.lag << '-'
     << (s.noise.row_cov.kind == CovKind::tri_diagonal ? "tri" : "exp");
  return os.str();
}

/// ARL₀ cells (shift none) or ARL₁ cells for one shift kind over the table settings.
inline std::vector<GridCell> standard_grid(long p1, long p2, ShiftKind shift, bool first_setting_only = false) {
  std::vector<GridCell> cells;
  for (ScenarioConfig s : standard_settings(p1, p2)) {
    s.shift = shift;
    GridCell c{setting_label(s) + (shift == ShiftKind::none ? "" : "-" + std::string(to_string(shift))), s,
               std::nullopt};
    cells.push_back(c);
    if (first_setting_only) break;
  }
  return cells;
}

// ---- empirical feature-shift checks ------------------------------------------------

struct ShiftEffectReport {
  long n_draws = 0;
  long rank = 0;
  Vector beta_shift;        // mean β under shift minus λ
  Vector beta_shift_se;
  Vector beta_expected;     // uᵢᵀ A vᵢ
  Vector gamma_shift;       // (mean γ shifted − mean γ in control) / √(p1 p2)
  Vector gamma_shift_se;
  Vector gamma_reference;   // top singular values of A / √(p1 p2)
  DeltaDecomposition deltas;
  double delta_identity = 0.0;  // tr(Σ⁻¹Σ̃) + δᵀΣ⁻¹δ − 2r from the sample blocks
  double t_shift = 0.0;         // mean T shifted − mean T in control
  double t_shift_se = 0.0;
};

/**
 * Draws n_draws independent frames (first frame of independent replications),
 * each observed with and without the shift on the same noise. Feature moments
 * are taken from these i.i.d. samples; the projection basis comes from the
 * true background with rank chosen at full energy.
 */
inline ShiftEffectReport empirical_shift_effects(const ScenarioConfig& setting, long n_draws,
                                                   std::uint64_t seed, unsigned threads = 0) {
  if (n_draws < 10) throw Error(ErrorKind::InvalidInput, "need at least 10 draws");
  ScenarioConfig cfg = setting;
  cfg.length = 1;
  const auto sc = Scenario::compile(cfg);
  const InControlModel model = build_model(sc->m0, 1.0);
  const long r = model.rank();
  const Matrix& a = sc->shift;

  std::vector<FeatureVector> y0(static_cast<std::size_t>(n_draws)), y1(static_cast<std::size_t>(n_draws));
  parallel_for(n_draws, worker_count(threads), [&](long i) {
    SequenceGenerator gen(sc, std::nullopt, static_cast<std::uint64_t>(i), seed);
    const Matrix x0 = *gen.next();
    y0[static_cast<std::size_t>(i)] = feature_vector(x0, model);
    y1[static_cast<std::size_t>(i)] = feature_vector(x0 + a, model);
  });

  ShiftEffectReport rep;
  rep.n_draws = n_draws;
  rep.rank = r;
  const double n = static_cast<double>(n_draws);
  const double scale = std::sqrt(static_cast<double>(cfg.p1 * cfg.p2));

  rep.beta_expected = project_beta(a, model.basis);
  const FeatureMoments m0 = estimate_moments(y0);
  const FeatureMoments m1 = estimate_moments(y1);
  rep.beta_shift = m1.mean.head(r) - model.basis.lambda;
  rep.beta_shift_se = (m1.cov.diagonal().head(r) / n).cwiseSqrt();

  Vector gdiff_mean = Vector::Zero(r);
  for (long i = 0; i < n_draws; ++i) gdiff_mean += y1[i].gamma - y0[i].gamma;
  gdiff_mean /= n;
  Vector gdiff_var = Vector::Zero(r);
  for (long i = 0; i < n_draws; ++i) {
    const Vector d = y1[i].gamma - y0[i].gamma - gdiff_mean;
    gdiff_var += d.cwiseProduct(d);
  }
  gdiff_var /= (n - 1.0);
  rep.gamma_shift = gdiff_mean / scale;
  rep.gamma_shift_se = (gdiff_var / n).cwiseSqrt() / scale;
  rep.gamma_reference = Vector::Zero(r);
  const long ka = std::min<long>(r, std::min(a.rows(), a.cols()));
  if (a.squaredNorm() > 0.0) rep.gamma_reference.head(ka) = top_singular_values(a, ka) / scale;

  BlockCov bc;
  bc.sigma_beta = m0.cov.topLeftCorner(r, r);
  bc.p = m0.cov.topRightCorner(r, r);
  bc.sigma_gamma = m0.cov.bottomRightCorner(r, r);
  bc.p_tilde = m1.cov.topRightCorner(r, r);
  bc.sigma_gamma_tilde = m1.cov.bottomRightCorner(r, r);
  const Vector delta = m1.mean - m0.mean;
  bc.delta_beta = delta.head(r);
  bc.delta_gamma = delta.tail(r);
  rep.deltas = delta_decomposition(bc);

  const CholeskyFactor l0 = cholesky_spd(m0.cov, JitterPolicy::none);
  const Matrix w = lower_solve(l0.lower, bc.sigma_tilde());
  rep.delta_identity = lower_solve(l0.lower, w.transpose()).trace() +
                       lower_solve(l0.lower, Matrix(delta)).squaredNorm() - 2.0 * static_cast<double>(r);

  std::vector<double> tdiff(static_cast<std::size_t>(n_draws));
  double tsum = 0.0;
  for (long i = 0; i < n_draws; ++i) {
    tdiff[i] = t_statistic(y1[i], m0.mean, l0.lower) - t_statistic(y0[i], m0.mean, l0.lower);
    tsum += tdiff[i];
  }
  rep.t_shift = tsum / n;
  double tss = 0.0;
  for (double v : tdiff) tss += (v - rep.t_shift) * (v - rep.t_shift);
  rep.t_shift_se = std::sqrt(tss / (n - 1.0) / n);
  return rep;
}

}  // namespace dflim
