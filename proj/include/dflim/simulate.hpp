#pragma once

// Synthetic matrix processes: low-rank backgrounds, separable spatial
// covariances, matrix-normal and exponential-transformed noise, moving-average
// temporal mixing and the four mean-shift patterns.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "dflim/linalg.hpp"
#include "dflim/rng.hpp"

namespace dflim {

enum class CovKind { tri_diagonal, exponential, identity };
enum class NoiseDist { normal, exp_transformed };
enum class Background { chessboard2, chessboard2_plus_rank3 };
enum class ShiftKind { none, sparse, ring, sine, chessboard };

struct CovSpec {
  CovKind kind = CovKind::tri_diagonal;
  long dim = 1;
  double rho = 0.3;
};

struct NoiseSpec {
  NoiseDist dist = NoiseDist::normal;
  CovSpec row_cov;  // p1 x p1
  CovSpec col_cov;  // p2 x p2
};

struct TemporalSpec {
  long lag = 5;
  double phi = 0.5;
};

struct ScenarioConfig {
  long p1 = 100;
  long p2 = 200;
  Background background = Background::chessboard2;
  ShiftKind shift = ShiftKind::none;
  double shift_scale = 1.0;  // multiplies the fixed shift amplitudes
  NoiseSpec noise;
  TemporalSpec temporal;
  long length = 800;
  std::uint64_t seed = 1;

  /// Convenience constructor with both covariances of the same kind.
  static ScenarioConfig make(long p1, long p2, NoiseDist dist, Background bg, long lag, CovKind cov,
                             ShiftKind shift = ShiftKind::none, std::uint64_t seed = 1) {
    ScenarioConfig c;
    c.p1 = p1;
    c.p2 = p2;
    c.background = bg;
    c.shift = shift;
    c.noise = {dist, {cov, p1, 0.3}, {cov, p2, 0.3}};
    c.temporal = {lag, 0.5};
    c.seed = seed;
    return c;
  }
};

// ---- names -----------------------------------------------------------------

inline std::string_view to_string(CovKind k) {
  switch (k) {
    case CovKind::tri_diagonal: return "tri_diagonal";
    case CovKind::exponential: return "exponential";
    case CovKind::identity: return "identity";
  }
  return "?";
}
inline std::string_view to_string(NoiseDist d) { return d == NoiseDist::normal ? "normal" : "exp_transformed"; }
inline std::string_view to_string(Background b) {
  return b == Background::chessboard2 ? "chessboard2" : "chessboard2_plus_rank3";
}
inline std::string_view to_string(ShiftKind s) {
  switch (s) {
    case ShiftKind::none: return "none";
    case ShiftKind::sparse: return "sparse";
    case ShiftKind::ring: return "ring";
    case ShiftKind::sine: return "sine";
    case ShiftKind::chessboard: return "chessboard";
  }
  return "?";
}

template <typename E>
E enum_from_string(std::string_view s);

#define DFLIM_ENUM_PARSE(Type, ...)                                                          \
  template <>                                                                                \
  inline Type enum_from_string<Type>(std::string_view s) {                                   \
    for (Type v : {__VA_ARGS__})                                                             \
      if (to_string(v) == s) return v;                                                       \
    throw Error(ErrorKind::InvalidInput, "unknown " #Type " '" + std::string(s) + "'");      \
  }
DFLIM_ENUM_PARSE(CovKind, CovKind::tri_diagonal, CovKind::exponential, CovKind::identity)
DFLIM_ENUM_PARSE(NoiseDist, NoiseDist::normal, NoiseDist::exp_transformed)
DFLIM_ENUM_PARSE(Background, Background::chessboard2, Background::chessboard2_plus_rank3)
DFLIM_ENUM_PARSE(ShiftKind, ShiftKind::none, ShiftKind::sparse, ShiftKind::ring, ShiftKind::sine,
                 ShiftKind::chessboard)
#undef DFLIM_ENUM_PARSE

// ---- fixed patterns ------------------------------------------------------------

/// Frame shapes the pattern formulas are defined for: full size and two reduced sizes.
inline bool supported_dims(long p1, long p2) {
  return (p1 == 100 && p2 == 200) || (p1 == 50 && p2 == 100) || (p1 == 40 && p2 == 80);
}

inline void require_supported_dims(long p1, long p2) {
  if (!supported_dims(p1, p2)) {
    throw Error(ErrorKind::InvalidInput, "pattern dims " + std::to_string(p1) + "x" + std::to_string(p2) +
                                             " unsupported; use 100x200, 50x100 or 40x80");
  }
}

/**
 * Rank-two ±0.1 chessboard. Rows alternate in bands of five; columns repeat
 * with period 40 in bands of ten. Indices below are 1-based as in the pattern
 * definition; the pattern tiles the whole frame.
 */
inline Matrix chessboard_mean(long p1, long p2) {
  require_supported_dims(p1, p2);
  Matrix m = Matrix::Zero(p1, p2);
  for (long j1 = 1; j1 <= p1; ++j1) {
    const bool top = (j1 - 1) % 10 < 5;
    for (long j2 = 1; j2 <= p2; ++j2) {
      const long band = ((j2 - 1) % 40) / 10;
      double v = 0.0;
      if (top && band == 1) v = 0.1;
      else if (!top && band == 2) v = 0.1;
      else if (top && band == 3) v = -0.1;
      else if (!top && band == 0) v = -0.1;
      m(j1 - 1, j2 - 1) = v;
    }
  }
  return m;
}

/**
 * Deterministic rank-k addon from smooth sine modes sin(πij/(p+1)), i = 1..k,
 * orthonormalized, with singular values 5·0.7^(i−1)·λ₁ of the chessboard.
 */
inline Matrix rank_k_addon(long p1, long p2, long k = 3) {
  if (p1 <= 0 || p2 <= 0 || k < 1 || k > std::min(p1, p2)) {
    throw Error(ErrorKind::InvalidInput, "rank_k_addon needs positive dims and 1 <= k <= min(p1, p2)");
  }
  auto modes = [k](long p) {
    Eigen::MatrixXd b(p, k);
    for (long i = 0; i < k; ++i)
      for (long j = 0; j < p; ++j)
        b(j, i) = std::sin(std::numbers::pi * static_cast<double>((i + 1) * (j + 1)) / static_cast<double>(p + 1));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(b);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(p, k);
    // Fix signs so each mode keeps the orientation of its sine.
    for (long i = 0; i < k; ++i)
      if (q.col(i).dot(b.col(i)) < 0) q.col(i) *= -1.0;
    return q;
  };
  double lambda1 = 1.0;
  if (supported_dims(p1, p2)) lambda1 = top_singular_values(chessboard_mean(p1, p2), 1)(0);
  const Eigen::MatrixXd u = modes(p1);
  const Eigen::MatrixXd v = modes(p2);
  Matrix out = Matrix::Zero(p1, p2);
  for (long i = 0; i < k; ++i) {
    const double weight = lambda1 * 5.0 * std::pow(0.7, static_cast<double>(i));
    out += weight * u.col(i) * v.col(i).transpose();
  }
  return out;
}

inline Matrix background_mean(Background bg, long p1, long p2) {
  Matrix m = chessboard_mean(p1, p2);
  if (bg == Background::chessboard2_plus_rank3) m += rank_k_addon(p1, p2, 3);
  return m;
}

inline Matrix make_cov(const CovSpec& spec) {
  if (spec.dim < 1) throw Error(ErrorKind::InvalidInput, "covariance dim must be positive");
  const long p = spec.dim;
  Matrix c = Matrix::Identity(p, p);
  switch (spec.kind) {
    case CovKind::identity:
      break;
    case CovKind::tri_diagonal:
      for (long i = 0; i + 1 < p; ++i) c(i, i + 1) = c(i + 1, i) = spec.rho;
      break;
    case CovKind::exponential:
      for (long i = 0; i < p; ++i)
        for (long j = 0; j < p; ++j) c(i, j) = std::pow(spec.rho, static_cast<double>(std::abs(i - j)));
      break;
  }
  return c;
}

namespace detail {

// sin(π·num/den) with exact zeros at integer multiples of π.
inline double sin_pi_ratio(long num, long den) {
  const long period = 2 * den;
  long n = num % period;
  if (n < 0) n += period;
  if (n % den == 0) return 0.0;
  return std::sin(std::numbers::pi * static_cast<double>(n) / static_cast<double>(den));
}

}  // namespace detail

/**
 * Mean-shift patterns (1-based pixel indices, amplitudes times `scale`):
 *  - sparse: 3 on rows 8..13, cols 18..23
 *  - ring: ±0.173 on concentric bands by ⌊distance to the centre⌋ mod 12
 *    (0..3 → +, 8..11 → −), centre at (p1/2, p2/2)
 *  - sine: 0.283·sin(j₂π/5)·sin(2j₁π/5)
 *  - chessboard: equal to chessboard_mean
 */
inline Matrix shift_matrix(ShiftKind kind, long p1, long p2, double scale = 1.0) {
  require_supported_dims(p1, p2);
  Matrix a = Matrix::Zero(p1, p2);
  switch (kind) {
    case ShiftKind::none:
      return a;
    case ShiftKind::sparse:
      for (long j1 = 8; j1 <= 13; ++j1)
        for (long j2 = 18; j2 <= 23; ++j2) a(j1 - 1, j2 - 1) = 3.0;
      break;
    case ShiftKind::ring: {
      const long c1 = p1 / 2;
      const long c2 = p2 / 2;
      for (long j1 = 1; j1 <= p1; ++j1) {
        for (long j2 = 1; j2 <= p2; ++j2) {
          const long d1 = j1 - c1;
          const long d2 = j2 - c2;
          // integer floor of the Euclidean radius, exact for these magnitudes
          long rad = static_cast<long>(std::sqrt(static_cast<double>(d1 * d1 + d2 * d2)));
          while (rad * rad > d1 * d1 + d2 * d2) --rad;
          while ((rad + 1) * (rad + 1) <= d1 * d1 + d2 * d2) ++rad;
          const long phase = rad % 12;
          if (phase <= 3) a(j1 - 1, j2 - 1) = 0.173;
          else if (phase >= 8) a(j1 - 1, j2 - 1) = -0.173;
        }
      }
      break;
    }
    case ShiftKind::sine:
      for (long j1 = 1; j1 <= p1; ++j1)
        for (long j2 = 1; j2 <= p2; ++j2)
          a(j1 - 1, j2 - 1) = 0.283 * detail::sin_pi_ratio(j2, 5) * detail::sin_pi_ratio(2 * j1, 5);
      break;
    case ShiftKind::chessboard:
      a = chessboard_mean(p1, p2);
      break;
  }
  if (scale != 1.0) a *= scale;
  return a;
}

// ---- noise -------------------------------------------------------------------------

/// ε = L_row · Z · L_colᵀ for a given standard-normal matrix Z.
inline Matrix matrix_normal_from(const Matrix& row_chol, const Matrix& col_chol, const Matrix& z) {
  if (row_chol.rows() != z.rows() || col_chol.rows() != z.cols()) {
    throw Error(ErrorKind::InvalidInput, "matrix normal factor dims do not match the draw");
  }
  Matrix tmp;
  tmp.noalias() = row_chol * z;
  Matrix out;
  out.noalias() = tmp * col_chol.transpose();
  return out;
}

/// Draws MN(0, Σ_row, Σ_col) given the lower Cholesky factors of both covariances.
template <typename Urbg>
Matrix sample_matrix_normal(const Matrix& row_chol, const Matrix& col_chol, Urbg& rng) {
  std::normal_distribution<double> normal;
  Matrix z(row_chol.rows(), col_chol.rows());
  double* data = z.data();
  for (long i = 0; i < z.size(); ++i) data[i] = normal(rng);
  return matrix_normal_from(row_chol, col_chol, z);
}

/**
 * Entrywise −log(1 − Φ(x)), mapping standard normals to Exp(1).
 *
 * The upper tail is taken from erfc directly; once it underflows (x ≳ 37.5)
 * it is clamped to the smallest normal double, capping outputs near 708.4.
 */
inline double exp_transform_value(double x) {
  double tail = 0.5 * std::erfc(x / std::numbers::sqrt2);
  if (tail < std::numeric_limits<double>::min()) tail = std::numeric_limits<double>::min();
  return -std::log(tail);
}

inline Matrix exp_transform(const Matrix& eps_tilde) {
  require_finite(eps_tilde, "exp_transform input");
  return eps_tilde.unaryExpr([](double x) { return exp_transform_value(x); });
}

// ---- sequences ---------------------------------------------------------------------

/// A scenario with every fixed matrix precomputed; shared read-only by generators.
struct Scenario {
  ScenarioConfig cfg;
  Matrix m0;
  Matrix shift;
  Matrix row_chol;
  Matrix col_chol;

  static std::shared_ptr<const Scenario> compile(const ScenarioConfig& cfg) {
    validate(cfg);
    auto sc = std::make_shared<Scenario>();
    sc->cfg = cfg;
    sc->m0 = background_mean(cfg.background, cfg.p1, cfg.p2);
    sc->shift = shift_matrix(cfg.shift, cfg.p1, cfg.p2, cfg.shift_scale);
    sc->row_chol = cholesky_spd(make_cov(cfg.noise.row_cov), JitterPolicy::none).lower;
    sc->col_chol = cholesky_spd(make_cov(cfg.noise.col_cov), JitterPolicy::none).lower;
    return sc;
  }

  static void validate(const ScenarioConfig& cfg) {
    require_supported_dims(cfg.p1, cfg.p2);
    if (cfg.noise.row_cov.dim != cfg.p1 || cfg.noise.col_cov.dim != cfg.p2) {
      throw Error(ErrorKind::InvalidInput, "noise covariance dims must equal (p1, p2)");
    }
    for (const CovSpec* c : {&cfg.noise.row_cov, &cfg.noise.col_cov}) {
      if (!(c->rho > 0.0 && c->rho < 1.0)) throw Error(ErrorKind::InvalidInput, "covariance rho must lie in (0, 1)");
    }
    if (cfg.temporal.lag < 0) throw Error(ErrorKind::InvalidInput, "MA lag must be nonnegative");
    if (!(cfg.temporal.phi > 0.0 && cfg.temporal.phi < 1.0)) {
      throw Error(ErrorKind::InvalidInput, "MA coefficient phi must lie in (0, 1)");
    }
    if (cfg.length < 1) throw Error(ErrorKind::InvalidInput, "sequence length must be positive");
    if (!std::isfinite(cfg.shift_scale)) throw Error(ErrorKind::InvalidInput, "shift scale must be finite");
  }
};

/**
 * Frames X_t = M₀ (+ A for t ≥ shift_at) + Σ_{j=0..ℓ} φʲ ε_{t−j}.
 *
 * Noise matrix k is drawn from its own stream keyed by (seed, replication, k);
 * indices 1−ℓ..0 are warm-up draws so frame 1 already has the full MA
 * structure. Exponential-transformed noise is centred (ε − 1) so the
 * in-control mean stays M₀.
 */
class SequenceGenerator {
 public:
  SequenceGenerator(std::shared_ptr<const Scenario> scenario, std::optional<long> shift_at = std::nullopt,
                    std::uint64_t replication = 0, std::optional<std::uint64_t> seed = std::nullopt)
      : sc_(std::move(scenario)),
        shift_at_(shift_at),
        replication_(replication),
        seed_(seed.value_or(sc_->cfg.seed)) {
    if (shift_at_ && *shift_at_ < 1) throw Error(ErrorKind::InvalidInput, "shift_at is a 1-based frame index");
    const long lag = sc_->cfg.temporal.lag;
    for (long k = 1 - lag; k <= 0; ++k) buffer_.push_front(draw_noise(k));
  }

  SequenceGenerator(const ScenarioConfig& cfg, std::optional<long> shift_at = std::nullopt,
                    std::uint64_t replication = 0)
      : SequenceGenerator(Scenario::compile(cfg), shift_at, replication) {}

  long produced() const { return t_; }
  const Scenario& scenario() const { return *sc_; }

  std::optional<Matrix> next() {
    if (t_ >= sc_->cfg.length) return std::nullopt;
    ++t_;
    buffer_.push_front(draw_noise(t_));
    if (static_cast<long>(buffer_.size()) > sc_->cfg.temporal.lag + 1) buffer_.pop_back();
    Matrix x = sc_->m0;
    if (shift_at_ && t_ >= *shift_at_) x += sc_->shift;
    double w = 1.0;
    for (const Matrix& eps : buffer_) {
      x += w * eps;
      w *= sc_->cfg.temporal.phi;
    }
    return x;
  }

 private:
  Matrix draw_noise(std::int64_t index) const {
    Engine rng = make_stream(seed_, replication_, index);
    Matrix eps = sample_matrix_normal(sc_->row_chol, sc_->col_chol, rng);
    if (sc_->cfg.noise.dist == NoiseDist::exp_transformed) {
      eps = eps.unaryExpr([](double x) { return exp_transform_value(x) - 1.0; });
    }
    return eps;
  }

  std::shared_ptr<const Scenario> sc_;
  std::optional<long> shift_at_;
  std::uint64_t replication_;
  std::uint64_t seed_;
  long t_ = 0;
  std::deque<Matrix> buffer_;  // most recent first
};

/// Materializes a whole sequence.
inline std::vector<Matrix> generate_sequence(const ScenarioConfig& cfg, std::optional<long> shift_at = std::nullopt,
                                             std::uint64_t replication = 0) {
  SequenceGenerator gen(cfg, shift_at, replication);
  std::vector<Matrix> frames;
  frames.reserve(static_cast<std::size_t>(cfg.length));
  while (auto x = gen.next()) frames.push_back(std::move(*x));
  return frames;
}

}  // namespace dflim
