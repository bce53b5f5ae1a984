#pragma once

// Per-frame monitoring features: static projections onto the in-control mean's
// singular directions (beta), leading singular values of the residual (gamma),
// and the Mahalanobis-type increment built from both.

#include <string>

#include "dflim/linalg.hpp"

namespace dflim {

/// Top-r singular triplets of the in-control mean.
struct ProjectionBasis {
  Vector lambda;  // r, strictly positive, descending
  Matrix u;       // p1 x r
  Matrix v;       // p2 x r

  long rank() const { return lambda.size(); }
  long rows() const { return u.rows(); }
  long cols() const { return v.rows(); }
};

struct FeatureVector {
  Vector beta;   // r
  Vector gamma;  // r, nonnegative, descending

  long rank() const { return beta.size(); }

  /// y = [beta; gamma], length 2r.
  Vector stacked() const {
    Vector y(beta.size() + gamma.size());
    y << beta, gamma;
    return y;
  }
};

struct InControlModel {
  Matrix m0;
  ProjectionBasis basis;

  long rank() const { return basis.rank(); }
};

inline void require_frame_shape(const Matrix& x, const ProjectionBasis& basis) {
  if (x.rows() != basis.rows() || x.cols() != basis.cols()) {
    throw Error(ErrorKind::InvalidInput, "frame is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                             ", model expects " + std::to_string(basis.rows()) + "x" +
                                             std::to_string(basis.cols()));
  }
}

/// βᵢ = uᵢᵀ X vᵢ for i = 1..r.
inline Vector project_beta(const Matrix& x, const ProjectionBasis& basis) {
  require_frame_shape(x, basis);
  const Matrix xv = x * basis.v;  // p1 x r
  Vector beta(basis.rank());
  for (long i = 0; i < basis.rank(); ++i) beta(i) = basis.u.col(i).dot(xv.col(i));
  return beta;
}

inline Matrix residual(const Matrix& x, const Matrix& m0) {
  require_same_shape(x, m0, "residual");
  return x - m0;
}

/// Leading r singular values of the full residual matrix.
inline Vector project_gamma(const Matrix& resid, long r) { return top_singular_values(resid, r); }

inline FeatureVector feature_vector(const Matrix& x, const InControlModel& model) {
  FeatureVector y;
  y.beta = project_beta(x, model.basis);
  y.gamma = project_gamma(residual(x, model.m0), model.rank());
  return y;
}

/// (y − μ₀)ᵀ Cov₀⁻¹ (y − μ₀) as ‖L⁻¹(y − μ₀)‖² with L the Cholesky factor of Cov₀.
inline double t_statistic(const Vector& y, const Vector& mu0, const Matrix& cov0_chol) {
  if (y.size() != mu0.size() || cov0_chol.rows() != y.size() || cov0_chol.cols() != y.size()) {
    throw Error(ErrorKind::InvalidInput, "t_statistic dimension mismatch: y " + std::to_string(y.size()) +
                                             ", mu0 " + std::to_string(mu0.size()) + ", factor " +
                                             std::to_string(cov0_chol.rows()));
  }
  const Vector z = cov0_chol.triangularView<Eigen::Lower>().solve(y - mu0);
  return z.squaredNorm();
}

inline double t_statistic(const FeatureVector& y, const Vector& mu0, const Matrix& cov0_chol) {
  return t_statistic(y.stacked(), mu0, cov0_chol);
}

}  // namespace dflim
