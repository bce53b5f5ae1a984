// Acceptance run: one PASS/FAIL line per criterion, then a summary.
//
// Criteria listed with --expect-fail are still run and reported; they only
// stop counting toward the exit status. The ctest registration names the ones
// known to fail together with the reason in the decisions ledger.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dflim/dflim.hpp"
#include "oracles.hpp"

using namespace dflim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ScenarioConfig setting(long p1, long p2) {
  return ScenarioConfig::make(p1, p2, NoiseDist::normal, Background::chessboard2, 5, CovKind::tri_diagonal);
}

const CalibrationOptions kCalibration{1.0, 0.01, 200.0, 50, 0};
constexpr std::uint64_t kSeed = 1;

Outcome control_limit_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> omega(0.5, 20.0), sigma(0.5, 10.0), c(0.01, 0.1), arl(50.0, 2000.0);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double o = omega(rng), s = sigma(rng), cc = c(rng), target = arl(rng);
    const double h = solve_control_limit(o, s, cc, target);
    worst = std::max(worst, std::abs(arl0_rhs(h, o, s, cc) - target) / target);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 1.0, fmt("max rel err %.2e over 50 triples, %.3f s", worst, secs)};
}

struct Arl0Run {
  Calibration cal;
  ArlEstimate est;
  double seconds = 0.0;
};

Arl0Run arl0_run(const ScenarioConfig& sc, const CalibrationOptions& opts, long n_train) {
  const auto t0 = Clock::now();
  Arl0Run out{calibrate_scenario(sc, n_train, opts, kSeed), {}, 0.0};
  ArlOptions ao;
  ao.n_reps = 300;
  ao.max_len = 800;
  ao.base_seed = kSeed;
  out.est = estimate_arl(sc, out.cal.model, out.cal.params, ao);
  out.seconds = seconds_since(t0);
  return out;
}

std::string describe(const Arl0Run& r) {
  return fmt("ARL0 %.2f (SE %.2f, %ld censored), H %.3f, %.0f s", r.est.mean_rl, r.est.std_err, r.est.n_censored,
             r.cal.params.control_limit_h, r.seconds);
}

Outcome arl0_reproduction(const Arl0Run& full, const Arl0Run& fast, const Arl0Run& long_run_moments) {
  const auto in_band = [](const Arl0Run& r) { return r.est.mean_rl >= 160.0 && r.est.mean_rl <= 240.0; };
  const bool pass = in_band(full) && in_band(fast) && fast.seconds <= 300.0;
  return {pass, "100x200: " + describe(full) + "; 40x80: " + describe(fast) +
                    "; diagnostic 40x80 with T moments from 4000 held-out frames: " + describe(long_run_moments)};
}

Outcome arl1_bounds(const Arl0Run& full) {
  struct Case {
    ShiftKind kind;
    double bound;
  };
  const Case cases[] = {{ShiftKind::chessboard, 5.0}, {ShiftKind::sine, 15.0}, {ShiftKind::sparse, 40.0},
                        {ShiftKind::ring, 60.0}};
  const double arl0 = full.est.mean_rl;
  bool pass = true;
  std::string detail;
  for (const Case& c : cases) {
    ScenarioConfig sc = setting(100, 200);
    sc.shift = c.kind;
    ArlOptions ao;
    ao.shift_at = 1;
    ao.n_reps = 300;
    ao.max_len = 800;
    ao.base_seed = kSeed;
    const ArlEstimate e = estimate_arl(sc, full.cal.model, full.cal.params, ao);
    const bool ok = e.mean_rl <= c.bound && e.mean_rl < arl0 / 3.0;
    pass = pass && ok;
    detail += fmt("%s %.2f (SE %.2f) %s; ", std::string(to_string(c.kind)).c_str(), e.mean_rl, e.std_err,
                  ok ? "ok" : "out of bounds");
  }
  detail += fmt("ARL0/3 = %.2f", arl0 / 3.0);
  return {pass, detail};
}

Outcome cvm_consistency() {
  double avg = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> ts(5000);
    for (double& t : ts) t = nd(rng);
    avg += cvm_omega2(ts, 50) / 20.0;
  }
  const double constant = cvm_omega2(std::vector<double>(500, 3.25), 50);

  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  std::vector<double> ts(1000), moved(1000);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    ts[i] = nd(rng);
    moved[i] = -3.0 * ts[i] + 17.0;
  }
  const double base = cvm_omega2(ts, 50);
  const double scale_err = std::abs(cvm_omega2(moved, 50) - 9.0 * base) / (9.0 * base);
  const bool pass = std::abs(avg - 1.0) <= 0.1 && constant == 0.0 && scale_err <= 1e-10;
  return {pass, fmt("mean estimate %.4f, constant series %.1f, scale/translation rel err %.1e", avg, constant,
                    scale_err)};
}

Outcome delta_identity() {
  std::mt19937_64 rng(kSeed);
  double worst = 0.0;
  bool signs = true;
  for (int rep = 0; rep < 100; ++rep) {
    const long r = 1 + rep % 5;
    const Matrix s = oracle::random_spd(2 * r, rng);
    Matrix st = oracle::random_spd(2 * r, rng);
    const Matrix lb = cholesky_spd(Matrix(s.topLeftCorner(r, r))).lower;
    const Matrix lbt = cholesky_spd(Matrix(st.topLeftCorner(r, r))).lower;
    Matrix t = Matrix::Identity(2 * r, 2 * r);
    t.topLeftCorner(r, r) = lb * oracle::inverse(lbt);
    st = t * st * t.transpose();
    st = 0.5 * (st + st.transpose());
    const Vector delta = oracle::random_matrix(2 * r, 1, rng).col(0);

    BlockCov bc;
    bc.sigma_beta = s.topLeftCorner(r, r);
    bc.p = s.topRightCorner(r, r);
    bc.sigma_gamma = s.bottomRightCorner(r, r);
    bc.p_tilde = st.topRightCorner(r, r);
    bc.sigma_gamma_tilde = st.bottomRightCorner(r, r);
    bc.delta_beta = delta.head(r);
    bc.delta_gamma = delta.tail(r);
    const DeltaDecomposition d = delta_decomposition(bc);

    const Matrix inv = oracle::inverse(s);
    const double expected = (inv * st).trace() + oracle::quad_form(delta, inv) - 2.0 * static_cast<double>(r);
    worst = std::max(worst, std::abs(d.total() - expected) / std::max(1.0, std::abs(expected)));
    signs = signs && d.delta2 >= 0.0 && d.delta3 >= 0.0;
  }
  return {worst <= 1e-9 && signs, fmt("max rel err %.2e over 100 instances, nonneg terms: %s", worst,
                                      signs ? "yes" : "no")};
}

Outcome feature_exactness() {
  const InControlModel m = build_model(chessboard_mean(100, 200), 1.0);
  const double beta_err = (project_beta(m.m0, m.basis) - m.basis.lambda).cwiseAbs().maxCoeff();
  const FeatureVector y = feature_vector(m.m0, m);
  const Vector mu = y.stacked();
  const double t0 = t_statistic(mu, mu, Matrix::Identity(mu.size(), mu.size()));
  const double gamma0 = project_gamma(Matrix::Zero(100, 200), m.rank()).cwiseAbs().maxCoeff();
  return {beta_err <= 1e-10 && std::abs(t0) <= 1e-12 && gamma0 == 0.0,
          fmt("beta err %.1e, T at mean %.1e, gamma of zero residual %.1e", beta_err, t0, gamma0)};
}

Outcome generator_fidelity() {
  std::mt19937_64 rng(kSeed);
  std::normal_distribution<double> nd;
  double s = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) s += exp_transform_value(nd(rng));
  const double exp_mean = s / n;

  ScenarioConfig sc = setting(40, 80);
  sc.length = 500;
  const auto frames = generate_sequence(sc, std::nullopt, 0);
  double var = 0.0;
  for (const Matrix& f : frames) var += (f - chessboard_mean(40, 80)).squaredNorm();
  var /= static_cast<double>(frames.size()) * 40.0 * 80.0;
  const double target = 1.333251953125;

  const bool board = shift_matrix(ShiftKind::chessboard, 100, 200) == chessboard_mean(100, 200);
  const Matrix tri = make_matrix(3, 3, {1, 0.3, 0, 0.3, 1, 0.3, 0, 0.3, 1});
  const Matrix ex = make_matrix(3, 3, {1, 0.3, 0.09, 0.3, 1, 0.3, 0.09, 0.3, 1});
  const bool covs = make_cov({CovKind::tri_diagonal, 3, 0.3}) == tri &&
                    (make_cov({CovKind::exponential, 3, 0.3}) - ex).cwiseAbs().maxCoeff() <= 1e-15;

  const bool pass = std::abs(exp_mean - 1.0) <= 0.005 && std::abs(var - target) / target <= 0.02 && board && covs;
  return {pass, fmt("exp mean %.5f, MA entry variance %.5f (target %.6f), chessboard shift identical: %s, "
                    "dim-3 covariances match: %s",
                    exp_mean, var, target, board ? "yes" : "no", covs ? "yes" : "no")};
}

Outcome beta_shift() {
  ScenarioConfig sc = setting(100, 200);
  sc.shift = ShiftKind::chessboard;
  sc.shift_scale = 0.5;
  const ShiftEffectReport r = empirical_shift_effects(sc, 2000, kSeed);
  bool pass = true;
  std::string detail;
  for (long i = 0; i < r.rank; ++i) {
    const double z = (r.beta_shift(i) - r.beta_expected(i)) / r.beta_shift_se(i);
    pass = pass && std::abs(z) <= 4.0;
    detail += fmt("coord %ld: shift %.4f vs 0.5*lambda %.4f (%.2f SE); ", i + 1, r.beta_shift(i), r.beta_expected(i), z);
  }
  return {pass, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "dflim_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);

  ScenarioConfig sc = setting(40, 80);
  sc.shift = ShiftKind::sine;
  sc.length = 60;
  auto produce = [&](const std::string& tag) {
    const auto frames = generate_sequence(sc, 30, 0);
    write_mseq(frames, dir / (tag + ".mseq"));
    const Calibration cal = calibrate_scenario(setting(40, 80), 200, kCalibration, kSeed);
    TraceWriter trace(dir / (tag + ".trace.csv"), monitor_config(cal.params));
    run_with_restart(read_mseq(dir / (tag + ".mseq")), cal.model, cal.params, trace.sink());
    GridOptions go;
    go.n_train = 200;
    go.n_reps = 8;
    go.max_len = 100;
    go.seed = kSeed;
    std::ofstream grid(dir / (tag + ".grid.csv"));
    write_grid_csv(run_grid(standard_grid(40, 80, ShiftKind::ring, true), go), grid);
  };
  produce("a");
  produce("b");
  bool pass = true;
  std::string detail;
  for (const char* ext : {".mseq", ".trace.csv", ".grid.csv"}) {
    const bool same = slurp(dir / (std::string("a") + ext)) == slurp(dir / (std::string("b") + ext));
    pass = pass && same;
    detail += fmt("%s %s; ", ext + 1, same ? "identical" : "DIFFERENT");
  }
  fs::remove_all(dir);
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::vector<int> expect_fail;
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail; reported but not counted in the exit code");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());

  int counted_failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::string tag = o.pass ? "PASS" : "FAIL";
    if (expected.count(id)) tag += o.pass ? " (listed as expected failure)" : " (expected failure)";
    else if (!o.pass) ++counted_failures;
    std::cout << "criterion " << id << " " << name << ": " << tag << " | " << o.detail
              << fmt(" [%.1f s]", seconds_since(t0)) << std::endl;
  };

  report(1, "control-limit round trip", control_limit_round_trip);

  // Criteria 2 and 3 share the full-size calibration and ARL0 run.
  std::optional<Arl0Run> full;
  report(2, "ARL0 reproduction", [&] {
    full = arl0_run(setting(100, 200), kCalibration, 400);
    const Arl0Run fast = arl0_run(setting(40, 80), kCalibration, 400);
    CalibrationOptions held = kCalibration;
    held.holdout = 4000;
    const Arl0Run diag = arl0_run(setting(40, 80), held, 4400);
    return arl0_reproduction(*full, fast, diag);
  });
  report(3, "ARL1 bounds", [&] {
    if (!full) full = arl0_run(setting(100, 200), kCalibration, 400);
    return arl1_bounds(*full);
  });
  report(4, "CvM consistency", cvm_consistency);
  report(5, "delta decomposition identity", delta_identity);
  report(6, "feature-layer exactness", feature_exactness);
  report(7, "generator fidelity", generator_fidelity);
  report(8, "beta shift under a scaled mean", beta_shift);
  report(9, "determinism", determinism);

  std::cout << (counted_failures == 0 ? "acceptance: all counted criteria passed" : "acceptance: FAILED") << std::endl;
  return counted_failures == 0 ? 0 : 1;
}
