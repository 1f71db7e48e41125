#include "fedlrt/linalg.hpp"

#include <gtest/gtest.h>

#include "fedlrt/rng.hpp"

using namespace fedlrt;

namespace {

Matrix reconstruct_qr(const QrThinResult& qr) { return matmul(qr.q, qr.r); }

Matrix reconstruct_svd(const SvdResult& svd) {
  Matrix s(svd.sigma.size(), svd.sigma.size());
  for (std::size_t i = 0; i < svd.sigma.size(); ++i) s(i, i) = svd.sigma[i];
  return matmul(matmul(svd.p, s), transpose(svd.q));
}

}  // namespace

TEST(QrThin, AlreadyOrthonormalColumn) {
  Matrix a{{1.0}, {0.0}};
  QrThinResult qr = qr_thin(a);
  EXPECT_DOUBLE_EQ(qr.q(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(qr.q(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(qr.r(0, 0), 1.0);
}

TEST(QrThin, HandGramSchmidt2x2) {
  Matrix a{{1.0, 1.0}, {0.0, 1.0}};
  QrThinResult qr = qr_thin(a);
  EXPECT_NEAR(qr.q(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(qr.q(1, 1), 1.0, 1e-14);
  EXPECT_NEAR(qr.q(0, 1), 0.0, 1e-14);
  EXPECT_NEAR(qr.r(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(qr.r(0, 1), 1.0, 1e-14);
  EXPECT_NEAR(qr.r(1, 1), 1.0, 1e-14);
}

TEST(QrThin, NormalizesSingleColumn) {
  Matrix a{{3.0}, {4.0}};
  QrThinResult qr = qr_thin(a);
  EXPECT_NEAR(qr.q(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(qr.q(1, 0), 0.8, 1e-15);
  EXPECT_NEAR(qr.r(0, 0), 5.0, 1e-15);
}

TEST(QrThin, RejectsWideInput) {
  Matrix a(2, 3);
  EXPECT_THROW(qr_thin(a), std::invalid_argument);
}

TEST(QrThin, RandomReconstructionAndOrthonormality) {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.next_u64() % 63);
    const std::size_t k = 1 + static_cast<std::size_t>(rng.next_u64() % m);
    Matrix a = rng.gaussian_matrix(m, k);
    QrThinResult qr = qr_thin(a);
    EXPECT_LE(orthonormality_defect(qr.q), 1e-12);
    const double rel = frobenius_distance(reconstruct_qr(qr), a) / frobenius_norm(a);
    EXPECT_LE(rel, 1e-10);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_GE(qr.r(i, i), 0.0);
      for (std::size_t j = 0; j < i; ++j) EXPECT_DOUBLE_EQ(qr.r(i, j), 0.0);
    }
  }
}

TEST(QrThin, RankDeficientStillOrthonormal) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix col = rng.gaussian_matrix(8, 1);
    Matrix a(8, 3);
    for (std::size_t i = 0; i < 8; ++i) {
      a(i, 0) = col(i, 0);
      a(i, 1) = 2.0 * col(i, 0);
      a(i, 2) = -col(i, 0);
    }
    QrThinResult qr = qr_thin(a);
    EXPECT_LE(orthonormality_defect(qr.q), 1e-12);
    EXPECT_EQ(qr.deficient.size(), 2u);
    const double rel = frobenius_distance(reconstruct_qr(qr), a) / frobenius_norm(a);
    EXPECT_LE(rel, 1e-10);
  }
}

TEST(SvdSquare, DiagonalInput) {
  Matrix a{{3.0, 0.0}, {0.0, 1.0}};
  SvdResult svd = svd_square(a);
  EXPECT_NEAR(svd.sigma[0], 3.0, 1e-14);
  EXPECT_NEAR(svd.sigma[1], 1.0, 1e-14);
  EXPECT_NEAR(std::fabs(svd.p(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::fabs(svd.q(1, 1)), 1.0, 1e-14);
}

TEST(SvdSquare, AntiDiagonal) {
  Matrix a{{0.0, 2.0}, {1.0, 0.0}};
  SvdResult svd = svd_square(a);
  EXPECT_NEAR(svd.sigma[0], 2.0, 1e-14);
  EXPECT_NEAR(svd.sigma[1], 1.0, 1e-14);
  EXPECT_LE(frobenius_distance(reconstruct_svd(svd), a), 1e-12);
}

TEST(SvdSquare, ZeroMatrix) {
  Matrix a(2, 2);
  SvdResult svd = svd_square(a);
  EXPECT_DOUBLE_EQ(svd.sigma[0], 0.0);
  EXPECT_DOUBLE_EQ(svd.sigma[1], 0.0);
  EXPECT_LE(orthonormality_defect(svd.p), 1e-12);
  EXPECT_LE(orthonormality_defect(svd.q), 1e-12);
}

TEST(SvdSquare, RejectsNonSquare) {
  Matrix a(2, 3);
  EXPECT_THROW(svd_square(a), std::invalid_argument);
}

TEST(SvdSquare, RandomReconstructionAndEnergy) {
  Rng rng(777);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.next_u64() % 16);
    Matrix a = rng.gaussian_matrix(k, k);
    SvdResult svd = svd_square(a);
    EXPECT_LE(orthonormality_defect(svd.p), 1e-12);
    EXPECT_LE(orthonormality_defect(svd.q), 1e-12);
    const double rel = frobenius_distance(reconstruct_svd(svd), a) / frobenius_norm(a);
    EXPECT_LE(rel, 1e-10);
    for (std::size_t i = 0; i + 1 < k; ++i) EXPECT_GE(svd.sigma[i], svd.sigma[i + 1]);
    double energy = 0.0;
    for (double s : svd.sigma) energy += s * s;
    const double f2 = frobenius_norm(a) * frobenius_norm(a);
    EXPECT_NEAR(energy, f2, 1e-9 * f2);
  }
}

TEST(SpectralNorm, Identity) {
  auto id = [](const Matrix& x) { return x; };
  EXPECT_NEAR(spectral_norm(id, 3, 3, 100, 1), 1.0, 1e-8);
}

TEST(SpectralNorm, Scaling) {
  auto sc = [](const Matrix& x) { return x * 2.5; };
  EXPECT_NEAR(spectral_norm(sc, 3, 3, 100, 1), 2.5, 1e-8);
}

TEST(SpectralNorm, DiagonalMap) {
  Matrix d{{1.0, 0.0}, {0.0, 4.0}};
  auto apply = [&](const Matrix& x) { return matmul(d, x); };
  EXPECT_NEAR(spectral_norm(apply, 2, 2, 500, 3), 4.0, 1e-6);
}

TEST(SpectralNorm, DeterministicInSeed) {
  Matrix d{{0.5, 0.1}, {0.1, 2.0}};
  auto apply = [&](const Matrix& x) { return matmul(d, x); };
  const double a = spectral_norm(apply, 2, 2, 25, 42);
  const double b = spectral_norm(apply, 2, 2, 25, 42);
  EXPECT_DOUBLE_EQ(a, b);
}

TEST(SpectralNorm, MonotoneInIterations) {
  // PSD map: Rayleigh quotients grow towards the top eigenvalue.
  Rng rng(5);
  Matrix g = rng.gaussian_matrix(4, 4);
  Matrix spd = matmul_tn(g, g);
  auto apply = [&](const Matrix& x) { return matmul(spd, x); };
  double prev = 0.0;
  for (std::size_t iters = 1; iters <= 30; ++iters) {
    const double est = spectral_norm(apply, 4, 4, iters, 7);
    EXPECT_GE(est, prev - 1e-8);
    prev = est;
  }
}

TEST(SolveSpd, SolvesAndDetectsSingular) {
  Matrix a{{4.0, 1.0}, {1.0, 3.0}};
  std::vector<double> x = solve_spd(a, {1.0, 2.0});
  EXPECT_NEAR(4.0 * x[0] + x[1], 1.0, 1e-12);
  EXPECT_NEAR(x[0] + 3.0 * x[1], 2.0, 1e-12);

  Matrix s{{1.0, 1.0}, {1.0, 1.0}};
  try {
    solve_spd(s, {1.0, 1.0});
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_GT(e.condition_estimate(), 1e10);
  }
}

TEST(CompleteOrthonormal, FillsAgainstBasis) {
  Matrix base{{1.0}, {0.0}, {0.0}};
  Matrix fill = complete_orthonormal_columns(base, 2);
  Matrix full = hcat(base, fill);
  EXPECT_LE(orthonormality_defect(full), 1e-12);
}
