#pragma once

// Setup phase: estimate the in-control mean, pick the rank, build the
// projection basis, estimate the feature moments and the T-series scale
// parameters, and solve for the control limit.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dflim/features.hpp"
#include "dflim/linalg.hpp"

namespace dflim {

struct CalibrationParams {
  Vector mu0;              // E₀[y], length 2r
  Matrix cov0;             // Cov₀(y), 2r x 2r
  Matrix cov0_chol;        // lower Cholesky factor of cov0 (+ jitter)
  double cov0_jitter = 0;  // diagonal loading applied before factorization
  double sigma_t = 0;      // in-control standard deviation of T
  double t_mean = 0;       // E₀[T], estimated as the sample mean of T
  double omega0_sq = 0;    // long-run variance of T
  double c = 0.01;
  double target_arl0 = 0;
  double control_limit_h = 0;
  long batch_size_m = 50;

  /// The per-step allowance subtracted in the CUSUM recursion.
  double drift() const { return t_mean + c * sigma_t; }
};

struct CalibrationOptions {
  double q = 0.9;
  double c = 0.01;
  double target_arl0 = 200.0;
  long batch_m = 50;
  /// Trailing frames reserved for the T-series estimates (T̄, σ_T, Ω₀²); 0 uses every frame for everything.
  long holdout = 0;
};

struct CalibrationProvenance {
  long n = 0;
  double q = 0.9;
  double c = 0.01;
  long m = 50;
  double target_arl0 = 0;
  long holdout = 0;
  std::optional<std::uint64_t> seed;
};

struct Calibration {
  InControlModel model;
  CalibrationParams params;
  CalibrationProvenance provenance;
  std::vector<std::string> warnings;
};

/// Constant in the corrected ARL₀ equation.
inline constexpr double kSiegmundShift = 1.166;

inline Matrix estimate_mean(std::span<const Matrix> frames) {
  if (frames.empty()) throw Error(ErrorKind::InvalidInput, "cannot estimate the mean of zero frames");
  Matrix sum = Matrix::Zero(frames.front().rows(), frames.front().cols());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    require_same_shape(frames[t], sum, "frame " + std::to_string(t + 1));
    sum += frames[t];
  }
  return sum / static_cast<double>(frames.size());
}

/**
 * Smallest r whose cumulative squared-energy fraction reaches q.
 *
 * Values below max(len, 1)·eps·s₁ are treated as exact zeros so that q = 1
 * returns the numerical rank rather than the full length.
 */
inline long select_rank(const Vector& singular_values, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorKind::InvalidInput, "energy threshold q must lie in (0, 1]");
  const long n = singular_values.size();
  for (long i = 0; i < n; ++i) {
    if (!std::isfinite(singular_values(i)) || singular_values(i) < 0.0) {
      throw Error(ErrorKind::InvalidInput, "singular values must be finite and nonnegative");
    }
    if (i > 0 && singular_values(i) > singular_values(i - 1)) {
      throw Error(ErrorKind::InvalidInput, "singular values must be sorted descending");
    }
  }
  if (n == 0 || singular_values(0) <= 0.0) throw Error(ErrorKind::DegenerateSpectrum, "all singular values are zero");

  const double tol = static_cast<double>(std::max<long>(n, 1)) * std::numeric_limits<double>::epsilon() *
                     singular_values(0);
  std::vector<double> energy(static_cast<std::size_t>(n));
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    const double s = singular_values(i) > tol ? singular_values(i) : 0.0;
    energy[static_cast<std::size_t>(i)] = s * s;
    total += s * s;
  }
  double cum = 0.0;
  for (long i = 0; i < n; ++i) {
    cum += energy[static_cast<std::size_t>(i)];
    if (cum >= q * total) return i + 1;
  }
  return n;
}

inline InControlModel build_model(const Matrix& m0, double q) {
  require_finite(m0, "in-control mean");
  if (m0.cwiseAbs().maxCoeff() == 0.0) throw Error(ErrorKind::DegenerateSpectrum, "in-control mean is zero");
  const long k = std::min(m0.rows(), m0.cols());
  SvdResult full = svd(m0, k);
  const long r = select_rank(full.s, q);
  InControlModel model;
  model.m0 = m0;
  model.basis.lambda = full.s.head(r);
  model.basis.u = full.u.leftCols(r);
  model.basis.v = full.v.leftCols(r);
  return model;
}

struct FeatureMoments {
  Vector mean;
  Matrix cov;
};

/// Sample mean and unbiased sample covariance of the stacked feature vectors.
inline FeatureMoments estimate_moments(std::span<const FeatureVector> ys) {
  if (ys.empty()) throw Error(ErrorKind::InsufficientData, "no feature vectors");
  const long r = ys.front().rank();
  const long n = static_cast<long>(ys.size());
  if (n < 2 * r + 2) {
    throw Error(ErrorKind::InsufficientData, "need at least 2r+2 = " + std::to_string(2 * r + 2) +
                                                 " feature vectors, got " + std::to_string(n));
  }
  Matrix y(n, 2 * r);
  for (long t = 0; t < n; ++t) {
    if (ys[static_cast<std::size_t>(t)].rank() != r) throw Error(ErrorKind::InvalidInput, "mixed feature ranks");
    y.row(t) = ys[static_cast<std::size_t>(t)].stacked().transpose();
  }
  FeatureMoments out;
  out.mean = y.colwise().mean().transpose();
  const Matrix centered = y.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return out;
}

/// Sample standard deviation with n−1 denominator.
inline double sigma_t_hat(std::span<const double> ts) {
  if (ts.size() < 2) throw Error(ErrorKind::InsufficientData, "need at least two T values");
  bool constant = true;
  for (double t : ts) constant = constant && (t == ts.front());
  if (constant) throw Error(ErrorKind::DegenerateVariance, "T series is constant; sigma_T undefined");
  double mean = 0.0;
  for (double t : ts) mean += t;
  mean /= static_cast<double>(ts.size());
  double ss = 0.0;
  for (double t : ts) ss += (mean - t) * (mean - t);
  return std::sqrt(ss / static_cast<double>(ts.size() - 1));
}

/// CvM weight; integrates to 1 against t(1−t) on [0, 1].
inline double cvm_weight(double t) { return -24.0 + 150.0 * t - 150.0 * t * t; }

/**
 * Overlapping weighted Cramér–von Mises estimate of the long-run variance.
 *
 * Every window of m consecutive values (n − m + 1 of them) contributes
 * Cᵢ = (1/m) Σⱼ g(j/m)·(j²/m)·(partial mean over first j − window mean)²
 * and the estimate is the average of the Cᵢ.
 */
inline double cvm_omega2(std::span<const double> ts, long m) {
  const long n = static_cast<long>(ts.size());
  if (m < 2) throw Error(ErrorKind::InvalidInput, "CvM batch size must be at least 2");
  if (n < m) {
    throw Error(ErrorKind::InsufficientData,
                "CvM needs n >= m (n = " + std::to_string(n) + ", m = " + std::to_string(m) + ")");
  }
  const double md = static_cast<double>(m);
  std::vector<double> weight(static_cast<std::size_t>(m));
  for (long j = 1; j <= m; ++j) {
    const double jd = static_cast<double>(j);
    weight[static_cast<std::size_t>(j - 1)] = cvm_weight(jd / md) * jd * jd / md / md;
  }
  double total = 0.0;
  for (long i = 0; i + m <= n; ++i) {
    double batch_mean = 0.0;
    for (long j = 0; j < m; ++j) batch_mean += ts[static_cast<std::size_t>(i + j)];
    batch_mean /= md;
    double partial = 0.0;  // running sum of deviations from the batch mean
    double c_i = 0.0;
    for (long j = 1; j <= m; ++j) {
      partial += ts[static_cast<std::size_t>(i + j - 1)] - batch_mean;
      const double dev = partial / static_cast<double>(j);
      c_i += weight[static_cast<std::size_t>(j - 1)] * dev * dev;
    }
    total += c_i;
  }
  return total / static_cast<double>(n - m + 1);
}

/**
 * Right-hand side of the corrected in-control ARL equation as a function of H:
 * Ω²/(2(cσ)²)·[eˣ − 1 − x] with x = 2cσ(H + 1.166Ω)/Ω².
 * Returns +∞ once the exponent passes 700.
 */
inline double arl0_rhs(double h, double omega0, double sigma_t, double c) {
  if (!(h >= 0.0) || !(omega0 > 0.0) || !(sigma_t > 0.0) || !(c > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "arl0_rhs needs h >= 0 and positive omega, sigma_T, c");
  }
  const double omega_sq = omega0 * omega0;
  const double drift = c * sigma_t;
  const double x = 2.0 * drift * (h + kSiegmundShift * omega0) / omega_sq;
  if (x > 700.0) return std::numeric_limits<double>::infinity();
  return omega_sq / (2.0 * drift * drift) * expm1_minus_x(x);
}

/// Control limit H solving arl0_rhs(H) = target by bracketing and bisection.
inline double solve_control_limit(double omega0, double sigma_t, double c, double target_arl0) {
  if (!(target_arl0 > 0.0) || !std::isfinite(target_arl0)) {
    throw Error(ErrorKind::InvalidInput, "target ARL0 must be positive and finite");
  }
  const double at_zero = arl0_rhs(0.0, omega0, sigma_t, c);
  if (!(target_arl0 > at_zero)) {
    throw Error(ErrorKind::InfeasibleTarget, "target ARL0 " + std::to_string(target_arl0) +
                                                 " is not above the H=0 value " + std::to_string(at_zero));
  }
  double lo = 0.0;
  double hi = omega0;
  int doublings = 0;
  while (arl0_rhs(hi, omega0, sigma_t, c) < target_arl0) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 200) throw Error(ErrorKind::NumericalFailure, "could not bracket the control limit");
  }
  for (int it = 0; it < 400 && hi - lo > 2.0 * std::numeric_limits<double>::epsilon() * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (arl0_rhs(mid, omega0, sigma_t, c) < target_arl0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double err_lo = std::abs(arl0_rhs(lo, omega0, sigma_t, c) - target_arl0);
  const double err_hi = std::abs(arl0_rhs(hi, omega0, sigma_t, c) - target_arl0);
  const double h = err_lo < err_hi ? lo : hi;
  if (h <= 0.0) throw Error(ErrorKind::NumericalFailure, "control limit collapsed to zero");
  return h;
}

/// Feature vectors of a batch of frames under a fixed model.
inline std::vector<FeatureVector> feature_vectors(std::span<const Matrix> frames, const InControlModel& model) {
  std::vector<FeatureVector> ys;
  ys.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    try {
      ys.push_back(feature_vector(frames[t], model));
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(t + 1) + ": " + e.detail());
    }
  }
  return ys;
}

/**
 * Full setup phase on in-control training frames.
 *
 * With no override the in-control mean is the sample average of the frames.
 * With opts.holdout = k > 0 the mean, basis and feature moments come from the
 * first n − k frames and T̄, σ_T and Ω₀² from the last k, so the T series used
 * for the control limit is out of sample like the monitored one. Each failure
 * is tagged with the stage that raised it.
 */
inline Calibration calibrate(std::span<const Matrix> frames, const std::optional<Matrix>& m0_override,
                             const CalibrationOptions& opts) {
  if (!(opts.c > 0.0)) throw Error(ErrorKind::InvalidInput, "drift constant c must be positive");
  if (opts.holdout < 0) throw Error(ErrorKind::InvalidInput, "holdout must be nonnegative");
  Calibration out;
  const long n = static_cast<long>(frames.size());
  out.provenance = {n, opts.q, opts.c, opts.batch_m, opts.target_arl0, opts.holdout, std::nullopt};
  const long n_fit = n - opts.holdout;
  const long n_series = opts.holdout > 0 ? opts.holdout : n;
  if (opts.holdout > 0 && n_fit < 1) {
    throw Error(ErrorKind::InsufficientData, "stage 'check_size': holdout " + std::to_string(opts.holdout) +
                                                 " leaves no frames for fitting out of " + std::to_string(n));
  }
  const auto fit_frames = frames.first(static_cast<std::size_t>(std::max(0L, n_fit)));
  const auto series_frames = opts.holdout > 0 ? frames.last(static_cast<std::size_t>(opts.holdout)) : frames;

  Matrix m0 = with_stage("estimate_mean", [&] {
    if (m0_override) {
      for (std::size_t t = 0; t < frames.size(); ++t)
        require_same_shape(frames[t], *m0_override, "frame " + std::to_string(t + 1));
      return *m0_override;
    }
    return estimate_mean(fit_frames);
  });
  out.model = with_stage("build_model", [&] { return build_model(m0, opts.q); });
  const long r = out.model.rank();

  if (n_series < opts.batch_m) {
    throw Error(ErrorKind::InsufficientData, "stage 'check_size': need at least batch_m = " +
                                                 std::to_string(opts.batch_m) + " frames for the T series, got " +
                                                 std::to_string(n_series));
  }
  if (n_fit < 2 * r + 2) {
    throw Error(ErrorKind::InsufficientData, "stage 'check_size': need at least 2r+2 = " +
                                                 std::to_string(2 * r + 2) + " frames for the moments, got " +
                                                 std::to_string(n_fit));
  }
  if (n_series < 2 * opts.batch_m) {
    out.warnings.push_back("only " + std::to_string(n_series) + " frames in the T series for CvM batch size " +
                           std::to_string(opts.batch_m) + "; the long-run variance estimate is unstable below 2m");
  }

  const auto ys = with_stage("features", [&] { return feature_vectors(fit_frames, out.model); });
  const auto moments = with_stage("moments", [&] { return estimate_moments(ys); });

  CalibrationParams& p = out.params;
  p.mu0 = moments.mean;
  p.cov0 = moments.cov;
  // roundoff in the mean leaves a residue of order eps² on constant input
  if (!(p.cov0.trace() > 1e-20 * (1.0 + p.mu0.squaredNorm()))) {
    throw Error(ErrorKind::DegenerateVariance, "stage 'moments': feature covariance is zero; T series undefined");
  }
  const CholeskyFactor chol = with_stage("cov_factor", [&] { return cholesky_spd(p.cov0); });
  const double floor = 1e-10 * p.cov0.trace() / static_cast<double>(2 * r);
  if (chol.min_pivot < floor) {
    throw NotPositiveDefiniteError(
        "stage 'cov_factor': feature covariance is numerically singular; retry with a smaller q (fewer features)",
        chol.min_pivot, -1);
  }
  p.cov0_chol = chol.lower;
  p.cov0_jitter = chol.jitter;

  const auto series_ys =
      opts.holdout > 0 ? with_stage("features", [&] { return feature_vectors(series_frames, out.model); }) : ys;
  std::vector<double> ts;
  ts.reserve(series_ys.size());
  for (const auto& y : series_ys) ts.push_back(t_statistic(y, p.mu0, p.cov0_chol));
  double t_sum = 0.0;
  for (double t : ts) t_sum += t;
  p.t_mean = t_sum / static_cast<double>(ts.size());
  p.sigma_t = with_stage("sigma_t", [&] { return sigma_t_hat(ts); });
  p.omega0_sq = with_stage("omega", [&] { return cvm_omega2(ts, opts.batch_m); });
  if (!(p.omega0_sq > 0.0)) {
    throw Error(ErrorKind::DegenerateVariance,
                "stage 'omega': long-run variance estimate " + std::to_string(p.omega0_sq) + " is not positive");
  }
  p.c = opts.c;
  p.target_arl0 = opts.target_arl0;
  p.batch_size_m = opts.batch_m;
  p.control_limit_h = with_stage("control_limit", [&] {
    return solve_control_limit(std::sqrt(p.omega0_sq), p.sigma_t, p.c, p.target_arl0);
  });
  return out;
}

}  // namespace dflim
