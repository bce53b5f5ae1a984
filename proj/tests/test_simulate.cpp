#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dflim/simulate.hpp"

using namespace dflim;

TEST(Chessboard, SpotValuesAndRank) {
  const Matrix m = chessboard_mean(100, 200);
  // 1-based (row, col) spot checks
  EXPECT_EQ(m(0, 10), 0.1);
  EXPECT_EQ(m(5, 0), -0.1);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(0, 30), -0.1);
  EXPECT_EQ(m(5, 20), 0.1);
  EXPECT_EQ(m(99, 0), -0.1);  // row 100 is a bottom band
  EXPECT_EQ(m(99, 199), 0.0);
  long nonzero = 0;
  for (long i = 0; i < m.size(); ++i) nonzero += m.data()[i] != 0.0;
  EXPECT_EQ(nonzero, m.size() / 2);
  const Vector s = top_singular_values(m, 4);
  EXPECT_GT(s(1), 1e-8 * s(0));
  // the Gram route resolves zeros only to about sqrt(eps) of the top value
  EXPECT_LT(s(2), 1e-6 * s(0));
}

TEST(Chessboard, ReducedDimsKeepPixelPattern) {
  const Matrix big = chessboard_mean(100, 200);
  for (auto [p1, p2] : {std::pair{50L, 100L}, {40L, 80L}}) {
    const Matrix small = chessboard_mean(p1, p2);
    EXPECT_EQ(small, big.topLeftCorner(p1, p2));
  }
}

TEST(RankAddon, SingularValuesFollowTheGeometricWeights) {
  const Matrix add = rank_k_addon(100, 200, 3);
  const double lambda1 = top_singular_values(chessboard_mean(100, 200), 1)(0);
  const Vector s = top_singular_values(add, 4);
  EXPECT_NEAR(s(0), 5.0 * lambda1, 1e-9);
  EXPECT_NEAR(s(1), 3.5 * lambda1, 1e-9);
  EXPECT_NEAR(s(2), 2.45 * lambda1, 1e-9);
  EXPECT_LT(s(3), 1e-6 * s(0));
  const Vector combined = top_singular_values(background_mean(Background::chessboard2_plus_rank3, 100, 200), 6);
  EXPECT_GT(combined(4), 1e-2 * combined(0));
  EXPECT_LT(combined(5), 1e-6 * combined(0));
}

TEST(MakeCov, SmallDisplays) {
  const Matrix tri = make_cov({CovKind::tri_diagonal, 3, 0.3});
  EXPECT_EQ(tri, make_matrix(3, 3, {1, 0.3, 0, 0.3, 1, 0.3, 0, 0.3, 1}));
  const Matrix ex = make_cov({CovKind::exponential, 3, 0.3});
  EXPECT_DOUBLE_EQ(ex(0, 2), 0.09);
  EXPECT_DOUBLE_EQ(ex(2, 1), 0.3);
  EXPECT_TRUE(make_cov({CovKind::identity, 3, 0.3}).isIdentity(0.0));
  EXPECT_THROW(make_cov({CovKind::identity, 0, 0.3}), Error);
}

TEST(MakeCov, PositiveDefiniteAtFullSize) {
  for (CovKind k : {CovKind::tri_diagonal, CovKind::exponential})
    for (long p : {100L, 200L}) EXPECT_NO_THROW(cholesky_spd(make_cov({k, p, 0.3}), JitterPolicy::none));
}

TEST(MatrixNormal, SeparableCovariance) {
  const Matrix row = make_cov({CovKind::tri_diagonal, 3, 0.3});
  const Matrix col = make_cov({CovKind::exponential, 2, 0.6});
  const Matrix lr = cholesky_spd(row).lower, lc = cholesky_spd(col).lower;
  std::mt19937_64 rng(3);
  const int n = 40000;
  Matrix sum = Matrix::Zero(6, 6);
  Vector mean = Vector::Zero(6);
  for (int k = 0; k < n; ++k) {
    const Matrix e = sample_matrix_normal(lr, lc, rng);
    const Vector v = Eigen::Map<const Vector>(e.data(), 6);
    mean += v;
    sum += v * v.transpose();
  }
  mean /= n;
  const Matrix cov = sum / n;
  EXPECT_LE(mean.cwiseAbs().maxCoeff(), 0.03);
  // vec in storage order: index (i, j) → i·2 + j for row-major storage
  for (long a = 0; a < 6; ++a)
    for (long b = 0; b < 6; ++b) {
      const double expected = row(a / 2, b / 2) * col(a % 2, b % 2);
      EXPECT_NEAR(cov(a, b), expected, 0.04) << a << "," << b;
    }
}

TEST(MatrixNormal, FactorShapesChecked) {
  EXPECT_THROW(matrix_normal_from(Matrix::Identity(2, 2), Matrix::Identity(3, 3), Matrix::Zero(3, 3)), Error);
}

TEST(ExpTransform, MeanOneAndEdgeValues) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) s += exp_transform_value(nd(rng));
  EXPECT_NEAR(s / n, 1.0, 0.01);
  EXPECT_NEAR(exp_transform_value(0.0), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(exp_transform_value(60.0)));
  EXPECT_GT(exp_transform_value(60.0), 700.0);
  EXPECT_GE(exp_transform_value(-40.0), 0.0);
  Matrix bad = Matrix::Zero(1, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(exp_transform(bad), Error);
}

TEST(ExpTransform, KolmogorovSmirnovAgainstUnitExponential) {
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> x(2000);
    for (double& v : x) v = exp_transform_value(nd(rng));
    std::sort(x.begin(), x.end());
    double d = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f = 1.0 - std::exp(-x[i]);
      d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
    }
    passed += d < 1.358 / std::sqrt(n);
  }
  EXPECT_GE(passed, 18);
}

TEST(Shift, SparseBlock) {
  const Matrix a = shift_matrix(ShiftKind::sparse, 100, 200);
  long count = 0;
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0.0) {
        ++count;
        EXPECT_EQ(a(i, j), 3.0);
        EXPECT_TRUE(i >= 7 && i <= 12 && j >= 17 && j <= 22);
      }
  EXPECT_EQ(count, 36);
}

TEST(Shift, SineZeroColumnsAndRows) {
  const Matrix a = shift_matrix(ShiftKind::sine, 100, 200);
  for (long j = 5; j <= 200; j += 5) EXPECT_TRUE(a.col(j - 1).isZero(0.0)) << j;
  for (long i = 5; i <= 100; i += 5) EXPECT_TRUE(a.row(i - 1).isZero(0.0)) << i;
  EXPECT_NEAR(a(0, 0), 0.283 * std::sin(M_PI / 5) * std::sin(2 * M_PI / 5), 1e-15);
  EXPECT_NEAR(a.cwiseAbs().maxCoeff(), 0.283 * std::sin(2 * M_PI / 5) * std::sin(2 * M_PI / 5), 1e-12);
}

TEST(Shift, RingMatchesPerPixelFormula) {
  const Matrix a = shift_matrix(ShiftKind::ring, 100, 200);
  for (long j1 = 1; j1 <= 100; ++j1)
    for (long j2 = 1; j2 <= 200; ++j2) {
      const double dist = std::hypot(static_cast<double>(j1 - 50), static_cast<double>(j2 - 100));
      const long band = static_cast<long>(std::floor(dist + 1e-12)) % 12;
      const double expected = band <= 3 ? 0.173 : (band >= 8 ? -0.173 : 0.0);
      ASSERT_EQ(a(j1 - 1, j2 - 1), expected) << j1 << "," << j2;
    }
}

TEST(Shift, ScaleAndChessboard) {
  EXPECT_EQ(shift_matrix(ShiftKind::chessboard, 40, 80), chessboard_mean(40, 80));
  EXPECT_EQ(shift_matrix(ShiftKind::sparse, 40, 80, 0.5)(7, 17), 1.5);
  EXPECT_TRUE(shift_matrix(ShiftKind::none, 40, 80).isZero(0.0));
}

TEST(Dims, UnsupportedRejected) {
  EXPECT_FALSE(supported_dims(100, 100));
  try {
    chessboard_mean(30, 60);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
  ScenarioConfig cfg = ScenarioConfig::make(40, 80, NoiseDist::normal, Background::chessboard2, 5, CovKind::identity);
  cfg.noise.row_cov.dim = 41;
  EXPECT_THROW(Scenario::compile(cfg), Error);
}

TEST(Enums, RoundTrip) {
  for (ShiftKind k : {ShiftKind::none, ShiftKind::sparse, ShiftKind::ring, ShiftKind::sine, ShiftKind::chessboard})
    EXPECT_EQ(enum_from_string<ShiftKind>(to_string(k)), k);
  for (CovKind k : {CovKind::tri_diagonal, CovKind::exponential, CovKind::identity})
    EXPECT_EQ(enum_from_string<CovKind>(to_string(k)), k);
  EXPECT_THROW(enum_from_string<NoiseDist>("cauchy"), Error);
}

namespace {

ScenarioConfig white_noise(long lag) {
  ScenarioConfig cfg = ScenarioConfig::make(40, 80, NoiseDist::normal, Background::chessboard2, lag,
                                            CovKind::identity);
  cfg.length = 300;
  return cfg;
}

}  // namespace

TEST(Sequence, MovingAverageVarianceAndLagOneCovariance) {
  const ScenarioConfig cfg = white_noise(5);
  const auto frames = generate_sequence(cfg, std::nullopt, 0);
  const Matrix m0 = chessboard_mean(40, 80);
  double var = 0.0, cov1 = 0.0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    var += (frames[t] - m0).squaredNorm();
    if (t > 0) cov1 += (frames[t] - m0).cwiseProduct(frames[t - 1] - m0).sum();
  }
  var /= static_cast<double>(frames.size() * m0.size());
  cov1 /= static_cast<double>((frames.size() - 1) * m0.size());
  EXPECT_NEAR(var, 1.3330078125, 0.02);
  EXPECT_NEAR(cov1, 0.666015625, 0.02);
}

TEST(Sequence, FirstFrameAlreadyHasFullMovingAverage) {
  const ScenarioConfig cfg = white_noise(5);
  const Matrix m0 = chessboard_mean(40, 80);
  double var = 0.0;
  const int reps = 40;
  for (int rep = 0; rep < reps; ++rep) {
    SequenceGenerator gen(cfg, std::nullopt, static_cast<std::uint64_t>(rep));
    var += (*gen.next() - m0).squaredNorm();
  }
  EXPECT_NEAR(var / (reps * m0.size()), 1.3330078125, 0.03);
}

TEST(Sequence, DeterministicPerReplication) {
  ScenarioConfig cfg = white_noise(2);
  cfg.length = 10;
  const auto a = generate_sequence(cfg, std::nullopt, 4);
  const auto b = generate_sequence(cfg, std::nullopt, 4);
  const auto c = generate_sequence(cfg, std::nullopt, 5);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t], b[t]);
    EXPECT_NE(a[t], c[t]);
  }
  cfg.seed = 2;
  EXPECT_NE(generate_sequence(cfg, std::nullopt, 4)[0], a[0]);
}

TEST(Sequence, ShiftAddsThePatternFromItsFrameOn) {
  ScenarioConfig cfg = white_noise(3);
  cfg.shift = ShiftKind::sparse;
  cfg.length = 12;
  const auto plain = generate_sequence(cfg, std::nullopt, 1);
  const auto shifted = generate_sequence(cfg, 6, 1);
  const Matrix a = shift_matrix(ShiftKind::sparse, 40, 80);
  for (std::size_t t = 0; t < plain.size(); ++t) {
    const Matrix expected = t + 1 >= 6 ? a : Matrix::Zero(40, 80);
    EXPECT_LE((shifted[t] - plain[t] - expected).cwiseAbs().maxCoeff(), 1e-12) << t;
  }
  EXPECT_THROW(SequenceGenerator(cfg, 0, 0), Error);
}

TEST(Sequence, CentredExponentialNoise) {
  ScenarioConfig cfg = ScenarioConfig::make(40, 80, NoiseDist::exp_transformed, Background::chessboard2, 0,
                                            CovKind::tri_diagonal);
  cfg.length = 50;
  const auto frames = generate_sequence(cfg, std::nullopt, 0);
  const Matrix m0 = chessboard_mean(40, 80);
  double mean = 0.0, var = 0.0;
  for (const auto& f : frames) {
    mean += (f - m0).sum();
    var += (f - m0).squaredNorm();
  }
  const double n = static_cast<double>(frames.size() * m0.size());
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var / n - mean * mean, 1.0, 0.05);
}
