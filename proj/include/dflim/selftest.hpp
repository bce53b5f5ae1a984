#pragma once

// Built-in sanity suite run by `dflim selftest`: closed-form cases that need
// no external oracle.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dflim/calibration.hpp"
#include "dflim/cusum.hpp"
#include "dflim/diagnostics.hpp"
#include "dflim/features.hpp"
#include "dflim/linalg.hpp"
#include "dflim/preprocess.hpp"
#include "dflim/simulate.hpp"

namespace dflim {

struct SelfTestCase {
  std::string name;
  std::function<bool()> check;
};

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string error;
};

namespace detail {

inline bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

template <typename F>
bool throws_kind(F&& f, ErrorKind kind) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

inline InControlModel rank1_model() {
  Vector a(3), b(4);
  a << 2, 0, 0;
  b << 0, 3, 0, 0;
  return build_model(a * b.transpose(), 0.9);
}

}  // namespace detail

inline std::vector<SelfTestCase> selftest_cases() {
  using detail::near;
  std::vector<SelfTestCase> cases;
  auto add = [&](std::string name, std::function<bool()> f) { cases.push_back({std::move(name), std::move(f)}); };

  add("svd identity", [] {
    const Vector s = svd(Matrix::Identity(3, 3), 3).s;
    return near(s(0), 1, 1e-12) && near(s(1), 1, 1e-12) && near(s(2), 1, 1e-12);
  });
  add("svd rank one norm product", [] {
    Vector a(2), b(3);
    a << 2, 0;
    b << 0, 0, 3;
    return near(svd(a * b.transpose(), 1).s(0), 6, 1e-12);
  });
  add("cholesky identity", [] { return cholesky_spd(Matrix::Identity(4, 4)).lower.isIdentity(1e-15); });
  add("cholesky 2x2 by hand", [] {
    const Matrix l = cholesky_spd(make_matrix(2, 2, {4, 2, 2, 5})).lower;
    return l.isApprox(make_matrix(2, 2, {2, 0, 1, 2}), 1e-15);
  });
  add("solve identity", [] {
    Vector b(2);
    b << 1, 2;
    return solve_spd(Matrix::Identity(2, 2), b).isApprox(b, 1e-15);
  });
  add("normal cdf at zero", [] { return std_normal_cdf(0.0) == 0.5; });
  add("normal cdf symmetry", [] { return near(std_normal_cdf(1.3) + std_normal_cdf(-1.3), 1.0, 1e-14); });

  add("beta at the mean is lambda", [] {
    const InControlModel m = detail::rank1_model();
    return near(project_beta(m.m0, m.basis)(0), m.basis.lambda(0), 1e-12);
  });
  add("beta scales with the mean", [] {
    const InControlModel m = detail::rank1_model();
    return near(project_beta(1.5 * m.m0, m.basis)(0), 1.5 * m.basis.lambda(0), 1e-12);
  });
  add("residual at the mean is zero", [] {
    const InControlModel m = detail::rank1_model();
    return residual(m.m0, m.m0).isZero(0.0);
  });
  add("gamma of zero residual", [] { return project_gamma(Matrix::Zero(4, 5), 2).isZero(0.0); });
  add("gamma of a single entry", [] {
    Matrix r = Matrix::Zero(3, 4);
    r(0, 0) = 7;
    return near(project_gamma(r, 1)(0), 7, 1e-12);
  });
  add("T at the mean is zero", [] {
    Vector mu(2);
    mu << 1, 2;
    return t_statistic(mu, mu, Matrix::Identity(2, 2)) == 0.0;
  });
  add("T with identity covariance", [] {
    Vector y(2), mu = Vector::Zero(2);
    y << 3, 4;
    return near(t_statistic(y, mu, Matrix::Identity(2, 2)), 25, 1e-12);
  });

  add("cusum zero increment", [] {
    const auto r = step({}, 1.5, {1.5, 10});
    return r.state.s == 0.0 && !r.alarm;
  });
  add("cusum clamps at zero", [] { return step({}, -3.5, {1.5, 10}).state.s == 0.0; });
  add("cusum one-step crossing", [] {
    const auto r = step({}, 12.0, {1.0, 10});
    return r.alarm && r.alarm->time == 1;
  });
  add("cusum step after alarm rejected", [] {
    return detail::throws_kind([] { step({11, 1, true}, 0.0, {1.0, 10}); }, ErrorKind::UsageError);
  });

  add("mean of one frame", [] {
    const Matrix x = make_matrix(1, 2, {1, 2});
    const std::vector<Matrix> f{x};
    return estimate_mean(f) == x;
  });
  add("mean of opposite frames", [] {
    const Matrix x = make_matrix(1, 2, {1, 2});
    const std::vector<Matrix> f{x, -x};
    return estimate_mean(f).isZero(0.0);
  });
  add("rank with one nonzero value", [] {
    Vector s(3);
    s << 5, 0, 0;
    return select_rank(s, 0.5) == 1 && select_rank(s, 1.0) == 1;
  });
  add("rank at full energy", [] {
    Vector s(4);
    s << 3, 2, 1, 0;
    return select_rank(s, 1.0) == 3;
  });
  add("rank of an outer product", [] { return detail::rank1_model().rank() == 1; });
  add("sigma_T of two points", [] {
    const std::vector<double> ts{0, 2};
    return near(sigma_t_hat(ts), std::sqrt(2.0), 1e-15);
  });
  add("sigma_T of a constant series", [] {
    return detail::throws_kind([] { sigma_t_hat(std::vector<double>{1, 1, 1}); }, ErrorKind::DegenerateVariance);
  });
  add("CvM of a constant series", [] { return cvm_omega2(std::vector<double>(120, 3.25), 50) == 0.0; });
  add("ARL equation positive at zero", [] { return arl0_rhs(0.0, 3.0, 1.5, 0.05) > 0.0; });
  add("ARL equation increasing", [] { return arl0_rhs(40, 3, 1.5, 0.05) > arl0_rhs(30, 3, 1.5, 0.05); });
  add("control limit grows with target", [] {
    return solve_control_limit(3, 1.5, 0.05, 400) > solve_control_limit(3, 1.5, 0.05, 200);
  });

  add("ARL approximation without drift", [] { return near(arl_approx({10, 0, 4}), 25, 1e-12); });
  add("large-variance ARL approximation", [] { return near(arl1_large_omega_approx(10, 4), 50, 1e-12); });
  add("no change gives zero deltas", [] {
    BlockCov bc{Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix::Zero(2, 2),
                Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2)};
    const auto d = delta_decomposition(bc);
    return near(d.delta1, 0, 1e-14) && near(d.delta2, 0, 1e-14) && near(d.delta3, 0, 1e-14);
  });
  add("gamma mean shift with identity blocks", [] {
    Vector dg(3);
    dg << 3, 4, 0;
    BlockCov bc{Matrix::Identity(3, 3), Matrix::Zero(3, 3), Matrix::Identity(3, 3), Matrix::Zero(3, 3),
                Matrix::Identity(3, 3), Vector::Zero(3), dg};
    return near(delta_decomposition(bc).delta3, 25, 1e-12);
  });

  add("exponential transform at zero", [] { return near(exp_transform_value(0.0), 0.6931471805599453, 1e-15); });
  add("sine shift has zero columns", [] {
    const Matrix a = shift_matrix(ShiftKind::sine, 100, 200);
    return a.col(4).isZero(0.0) && a.col(9).isZero(0.0);
  });
  add("chessboard shift equals the background", [] {
    return shift_matrix(ShiftKind::chessboard, 100, 200) == chessboard_mean(100, 200);
  });
  add("zero draw gives zero noise", [] {
    return matrix_normal_from(Matrix::Identity(3, 3), Matrix::Identity(4, 4), Matrix::Zero(3, 4)).isZero(0.0);
  });

  add("differences of a constant sequence", [] {
    const Matrix x = make_matrix(2, 2, {1, 2, 3, 4});
    const std::vector<Matrix> f{x, x, x};
    const auto d = diff_frames(f);
    return d.size() == 2 && d[0].isZero(0.0) && d[1].isZero(0.0);
  });
  add("patch side one", [] {
    const Matrix p = patch_transform(make_matrix(2, 2, {1, 2, 3, 4}), 1);
    return p == make_matrix(1, 4, {1, 2, 3, 4});
  });
  add("patch covering the frame", [] {
    const Matrix x = make_matrix(2, 2, {1, 2, 3, 4});
    return patch_transform(x, 2) == make_matrix(4, 1, {1, 3, 2, 4});
  });
  return cases;
}

inline std::vector<SelfTestResult> run_selftest() {
  std::vector<SelfTestResult> out;
  for (const auto& c : selftest_cases()) {
    SelfTestResult r{c.name, false, {}};
    try {
      r.passed = c.check();
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dflim
