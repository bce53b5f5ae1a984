#pragma once

// Closed-form run-length approximations and the block decomposition of the
// expected T² shift.

#include <cmath>
#include <limits>

#include "dflim/linalg.hpp"

namespace dflim {

struct ArlInputs {
  double h = 0.0;         // control limit
  double d_t = 0.0;       // E[T] − E₀[T] − cσ_T
  double omega_sq = 0.0;  // long-run variance of T
};

/// Brownian-motion approximation of the ARL for drift d_T; H²/Ω² when d_T ≈ 0.
inline double arl_approx(const ArlInputs& in) {
  if (!(in.h > 0.0) || !(in.omega_sq > 0.0) || !std::isfinite(in.d_t)) {
    throw Error(ErrorKind::InvalidInput, "arl_approx needs h > 0, omega_sq > 0 and finite d_T");
  }
  if (std::abs(in.d_t) < 1e-12 * in.omega_sq / in.h) return in.h * in.h / in.omega_sq;
  const double z = 2.0 * in.h * in.d_t / in.omega_sq;
  if (-z > 700.0) return std::numeric_limits<double>::infinity();
  // exp(−z) − 1 + z, evaluated stably near zero
  return in.omega_sq / (2.0 * in.d_t * in.d_t) * expm1_minus_x(-z);
}

/// Leading term 2H²/Ω₁² of the out-of-control ARL for large Ω₁².
inline double arl1_large_omega_approx(double h, double omega1_sq) {
  if (!(h > 0.0) || !(omega1_sq > 0.0)) throw Error(ErrorKind::InvalidInput, "need positive h and omega1_sq");
  return 2.0 * h * h / omega1_sq;
}

struct BlockCov {
  Matrix sigma_beta;         // r x r, shared by both phases
  Matrix p;                  // r x r in-control cross covariance Cov₀(β, γ)
  Matrix sigma_gamma;        // r x r
  Matrix p_tilde;            // r x r out-of-control cross covariance
  Matrix sigma_gamma_tilde;  // r x r
  Vector delta_beta;         // r
  Vector delta_gamma;        // r

  long rank() const { return sigma_beta.rows(); }

  Matrix sigma() const { return assemble(p, sigma_gamma); }
  Matrix sigma_tilde() const { return assemble(p_tilde, sigma_gamma_tilde); }
  Vector delta() const {
    Vector d(2 * rank());
    d << delta_beta, delta_gamma;
    return d;
  }

 private:
  Matrix assemble(const Matrix& cross, const Matrix& lower_right) const {
    const long r = rank();
    Matrix out(2 * r, 2 * r);
    out.topLeftCorner(r, r) = sigma_beta;
    out.topRightCorner(r, r) = cross;
    out.bottomLeftCorner(r, r) = cross.transpose();
    out.bottomRightCorner(r, r) = lower_right;
    return out;
  }
};

struct DeltaDecomposition {
  double delta1 = 0.0;  // covariance change in the γ block after conditioning on β
  double delta2 = 0.0;  // change in the β–γ cross covariance, ≥ 0
  double delta3 = 0.0;  // mean shift term, ≥ 0

  double total() const { return delta1 + delta2 + delta3; }
};

/**
 * Splits E₁[T] − E₀[T] = tr(Σ⁻¹Σ̃) + δᵀΣ⁻¹δ − 2r into three parts using the
 * Schur complement S = Σ_γ − PᵀΣ_β⁻¹P:
 *
 *   Δ₁ = tr(S⁻¹ S̃) − r
 *   Δ₂ = tr(S⁻¹ (P − P̃)ᵀ Σ_β⁻¹ (P − P̃))
 *   Δ₃ = δ_βᵀ Σ_β⁻¹ δ_β + (δ_γ − PᵀΣ_β⁻¹δ_β)ᵀ S⁻¹ (δ_γ − PᵀΣ_β⁻¹δ_β)
 *
 * All inverses are applied through Cholesky factors; no jitter is used so a
 * non-SPD block is reported rather than perturbed.
 */
inline DeltaDecomposition delta_decomposition(const BlockCov& bc) {
  const long r = bc.rank();
  auto check = [r](const Matrix& m, const char* name) {
    if (m.rows() != r || m.cols() != r) {
      throw Error(ErrorKind::InvalidInput, std::string("block ") + name + " must be " + std::to_string(r) + "x" +
                                               std::to_string(r));
    }
  };
  if (r < 1) throw Error(ErrorKind::InvalidInput, "empty block covariance");
  check(bc.sigma_beta, "sigma_beta");
  check(bc.p, "p");
  check(bc.sigma_gamma, "sigma_gamma");
  check(bc.p_tilde, "p_tilde");
  check(bc.sigma_gamma_tilde, "sigma_gamma_tilde");
  if (bc.delta_beta.size() != r || bc.delta_gamma.size() != r) {
    throw Error(ErrorKind::InvalidInput, "shift vectors must have length r");
  }

  const Matrix lb = cholesky_spd(bc.sigma_beta, JitterPolicy::none).lower;
  const Matrix wp = lower_solve(lb, bc.p);         // L_β⁻¹ P
  const Matrix wpt = lower_solve(lb, bc.p_tilde);  // L_β⁻¹ P̃
  Matrix schur = bc.sigma_gamma - wp.transpose() * wp;
  Matrix schur_tilde = bc.sigma_gamma_tilde - wpt.transpose() * wpt;
  schur = 0.5 * (schur + schur.transpose());
  schur_tilde = 0.5 * (schur_tilde + schur_tilde.transpose());
  const Matrix ls = cholesky_spd(schur, JitterPolicy::none).lower;
  cholesky_spd(schur_tilde, JitterPolicy::none);  // Σ̃/Σ_β must be SPD as well

  DeltaDecomposition out;
  // tr(S⁻¹ S̃) = tr(L_S⁻¹ S̃ L_S⁻ᵀ)
  const Matrix a = lower_solve(ls, schur_tilde);
  const Matrix b = lower_solve(ls, a.transpose());
  out.delta1 = b.trace() - static_cast<double>(r);

  const Matrix diff = wp - wpt;  // L_β⁻¹ (P − P̃)
  out.delta2 = lower_solve(ls, diff.transpose()).squaredNorm();

  const Vector zb = lower_solve(lb, bc.delta_beta);  // L_β⁻¹ δ_β
  const Vector cond = bc.delta_gamma - wp.transpose() * zb;
  out.delta3 = zb.squaredNorm() + lower_solve(ls, cond).squaredNorm();
  return out;
}

}  // namespace dflim
