#pragma once

// Dense kernels shared by the feature, calibration, diagnostic and simulation
// layers. Everything here is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dflim/error.hpp"

namespace dflim {

/// Row-major dense real matrix. Frames, means, shifts and noise all use it.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw Error(ErrorKind::InvalidInput, what + " contains NaN or Inf");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::InvalidInput,
                what + ": shape " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " does not match " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

/// Builds a matrix from row-major values, enforcing positive dims and finiteness.
inline Matrix make_matrix(long rows, long cols, const std::vector<double>& values) {
  if (rows <= 0 || cols <= 0) throw Error(ErrorKind::InvalidInput, "matrix dims must be positive");
  if (static_cast<std::size_t>(rows * cols) != values.size()) {
    throw Error(ErrorKind::InvalidInput, "matrix data length " + std::to_string(values.size()) +
                                             " != rows*cols " + std::to_string(rows * cols));
  }
  Matrix m = Eigen::Map<const Matrix>(values.data(), rows, cols);
  require_finite(m, "matrix");
  return m;
}

struct SvdResult {
  Matrix u;  // p1 x k, orthonormal columns
  Vector s;  // k, descending, >= 0
  Matrix v;  // p2 x k, orthonormal columns
};

/// Top-k singular triplets via divide-and-conquer bidiagonal SVD.
inline SvdResult svd(const Matrix& m, long k) {
  if (m.rows() == 0 || m.cols() == 0) throw Error(ErrorKind::InvalidInput, "svd of empty matrix");
  const long kmax = std::min(m.rows(), m.cols());
  if (k < 1 || k > kmax) {
    throw Error(ErrorKind::InvalidInput,
                "svd rank " + std::to_string(k) + " outside [1, " + std::to_string(kmax) + "]");
  }
  require_finite(m, "svd input");
  Eigen::BDCSVD<Eigen::MatrixXd> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success || !dec.singularValues().allFinite()) {
    throw Error(ErrorKind::NumericalFailure, "svd did not converge");
  }
  SvdResult out;
  out.u = dec.matrixU().leftCols(k);
  out.s = dec.singularValues().head(k);
  out.v = dec.matrixV().leftCols(k);
  return out;
}

/**
 * Leading k singular values of the whole matrix, descending.
 *
 * Computed as square roots of the top eigenvalues of the smaller Gram matrix
 * (M Mᵀ or Mᵀ M). Leading values carry full relative accuracy this way and it
 * is several times cheaper than a full bidiagonalization, which matters when
 * it runs once per monitored frame. Tiny negative eigenvalues are clamped.
 */
inline Vector top_singular_values(const Matrix& m, long k) {
  const long kmax = std::min(m.rows(), m.cols());
  if (k < 1 || k > kmax) {
    throw Error(ErrorKind::InvalidInput,
                "singular value count " + std::to_string(k) + " outside [1, " + std::to_string(kmax) + "]");
  }
  require_finite(m, "singular value input");
  Eigen::MatrixXd gram;
  if (m.rows() <= m.cols()) {
    gram.noalias() = m * m.transpose();
  } else {
    gram.noalias() = m.transpose() * m;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::NumericalFailure, "eigen solver did not converge");
  const Eigen::VectorXd& ev = eig.eigenvalues();  // ascending
  Vector out(k);
  for (long i = 0; i < k; ++i) out(i) = std::sqrt(std::max(0.0, ev(ev.size() - 1 - i)));
  return out;
}

enum class JitterPolicy {
  ladder,  // retry with diagonal jitter 1e-12..1e-6 of mean diagonal
  none,    // fail on the first non-positive pivot
};

struct CholeskyFactor {
  Matrix lower;          // L with L Lᵀ = S + jitter·I
  double jitter = 0.0;   // diagonal loading that was applied
  double min_pivot = 0;  // smallest L(i,i)²
};

namespace detail {

struct PivotFailure {
  bool failed = false;
  double pivot = 0.0;
  long index = -1;
};

// Plain left-looking Cholesky; records the smallest pivot and the first failure.
inline PivotFailure cholesky_in_place(Matrix& a, double& min_pivot) {
  const long n = a.rows();
  min_pivot = std::numeric_limits<double>::infinity();
  for (long j = 0; j < n; ++j) {
    double d = a(j, j);
    for (long k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    min_pivot = std::min(min_pivot, d);
    if (!(d > 0.0) || !std::isfinite(d)) return {true, d, j};
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (long i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (long k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) a(i, j) = 0.0;
  return {};
}

}  // namespace detail

inline constexpr double kSymmetryTolerance = 1e-10;

/**
 * Lower Cholesky factor of a symmetric positive-definite matrix.
 *
 * Input is symmetrized as (S+Sᵀ)/2 after a symmetry check. With the ladder
 * policy a failed factorization is retried with diagonal jitter
 * 1e-12·tr(S)/p, escalating ×10 up to 1e-6·tr(S)/p.
 */
inline CholeskyFactor cholesky_spd(const Matrix& s, JitterPolicy policy = JitterPolicy::ladder) {
  if (s.rows() != s.cols() || s.rows() == 0) {
    throw Error(ErrorKind::InvalidInput, "cholesky needs a non-empty square matrix");
  }
  require_finite(s, "cholesky input");
  const double scale = 1.0 + s.cwiseAbs().maxCoeff();
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
    throw Error(ErrorKind::InvalidInput, "cholesky input is not symmetric");
  }
  const Matrix sym = 0.5 * (s + s.transpose());
  const long p = sym.rows();
  const double mean_diag = sym.trace() / static_cast<double>(p);

  std::vector<double> ladder{0.0};
  if (policy == JitterPolicy::ladder && mean_diag > 0.0) {
    for (double f = 1e-12; f <= 1e-6 * 1.0000001; f *= 10.0) ladder.push_back(f * mean_diag);
  }

  detail::PivotFailure last;
  for (double jitter : ladder) {
    CholeskyFactor out;
    out.lower = sym;
    out.lower.diagonal().array() += jitter;
    last = detail::cholesky_in_place(out.lower, out.min_pivot);
    if (!last.failed) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NotPositiveDefiniteError("matrix is not positive definite", last.pivot, last.index);
}

/// Solves S x = b given L from cholesky_spd.
inline Vector solve_spd(const Matrix& chol, const Vector& b) {
  if (chol.rows() != chol.cols() || chol.rows() != b.size()) {
    throw Error(ErrorKind::InvalidInput, "solve_spd dimension mismatch: factor " + std::to_string(chol.rows()) +
                                             "x" + std::to_string(chol.cols()) + ", rhs " +
                                             std::to_string(b.size()));
  }
  Vector y = chol.triangularView<Eigen::Lower>().solve(b);
  return chol.transpose().triangularView<Eigen::Upper>().solve(y);
}

/// L⁻¹ B for a lower-triangular L (columns of B solved independently).
inline Matrix lower_solve(const Matrix& chol, const Matrix& b) {
  if (chol.rows() != b.rows()) throw Error(ErrorKind::InvalidInput, "lower_solve dimension mismatch");
  return chol.triangularView<Eigen::Lower>().solve(b);
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// eˣ − 1 − x without cancellation near zero.
inline double expm1_minus_x(double x) {
  if (std::abs(x) < 0.25) {
    // Σ_{k≥2} x^k/k!; 20 terms is well past double precision for |x|<1/4.
    double term = x * x / 2.0;
    double sum = term;
    for (int k = 3; k < 24; ++k) {
      term *= x / k;
      sum += term;
    }
    return sum;
  }
  return std::expm1(x) - x;
}

}  // namespace dflim
