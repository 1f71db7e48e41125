#include "fedlrt/low_rank.hpp"

#include <gtest/gtest.h>

#include "fedlrt/rng.hpp"

using namespace fedlrt;

namespace {

LowRankFactors random_factors(Rng& rng, std::size_t n, std::size_t r) {
  LowRankFactors f;
  f.u = qr_thin(rng.gaussian_matrix(n, r)).q;
  f.v = qr_thin(rng.gaussian_matrix(n, r)).q;
  f.s = rng.gaussian_matrix(r, r);
  return f;
}

}  // namespace

TEST(InitFactors, OrthonormalAndDiagonal) {
  LowRankFactors f = init_factors(4, 4, 11);
  EXPECT_LE(orthonormality_defect(f.u), 1e-12);
  EXPECT_LE(orthonormality_defect(f.v), 1e-12);

  LowRankFactors g = init_factors(2, 1, 5);
  EXPECT_EQ(g.s.rows(), 1u);
  EXPECT_DOUBLE_EQ(g.s(0, 0), 1.0);

  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(f.s(i, i), 1.0 / static_cast<double>(i + 1));
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) EXPECT_DOUBLE_EQ(f.s(i, j), 0.0);
  }
}

TEST(InitFactors, DeterministicInSeed) {
  LowRankFactors a = init_factors(6, 3, 42);
  LowRankFactors b = init_factors(6, 3, 42);
  EXPECT_EQ(frobenius_distance(a.u, b.u), 0.0);
  EXPECT_EQ(frobenius_distance(a.v, b.v), 0.0);
  EXPECT_EQ(frobenius_distance(a.s, b.s), 0.0);
}

TEST(InitFactors, RejectsRankAboveDimension) {
  EXPECT_THROW(init_factors(3, 4, 1), std::invalid_argument);
}

TEST(BasisAugment, HandComputedResidual) {
  Matrix u{{1.0}, {0.0}};
  Matrix g{{1.0}, {1.0}};
  BasisAugmentation aug = basis_augment(u, g);
  EXPECT_NEAR(std::fabs(aug.new_block(1, 0)), 1.0, 1e-14);
  EXPECT_NEAR(aug.new_block(0, 0), 0.0, 1e-14);
  EXPECT_LE(orthonormality_defect(aug.augmented), 1e-12);
}

TEST(BasisAugment, GradientInsideSpanGetsDeterministicFill) {
  Rng rng(3);
  Matrix u = qr_thin(rng.gaussian_matrix(6, 2)).q;
  Matrix m = rng.gaussian_matrix(2, 2);
  Matrix g = matmul(u, m);  // entirely inside span(U)
  BasisAugmentation aug = basis_augment(u, g);
  EXPECT_LE(orthonormality_defect(aug.augmented), 1e-12);
  EXPECT_LE(max_abs(matmul_tn(u, aug.new_block)), 1e-12);

  BasisAugmentation again = basis_augment(u, g);
  EXPECT_EQ(frobenius_distance(aug.augmented, again.augmented), 0.0);
}

TEST(BasisAugment, SpanContainsGradient) {
  Matrix u{{1.0, 0.0}, {0.0, 1.0}, {0.0, 0.0}};
  Matrix g{{0.3, -0.2}, {0.1, 0.4}, {2.0, -1.0}};
  BasisAugmentation aug = basis_augment(u, g);
  Matrix both = hcat(u, g);
  Matrix proj = matmul(aug.augmented, matmul_tn(aug.augmented, both));
  EXPECT_LE(frobenius_distance(proj, both), 1e-10);
}

TEST(BasisAugment, FirstColumnsAreExactlyU) {
  Rng rng(21);
  Matrix u = qr_thin(rng.gaussian_matrix(10, 4)).q;
  Matrix g = rng.gaussian_matrix(10, 4);
  BasisAugmentation aug = basis_augment(u, g);
  EXPECT_EQ(frobenius_distance(left_columns(aug.augmented, 4), u), 0.0);
}

TEST(BasisAugment, RejectsNonOrthonormalBasis) {
  Matrix u{{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {0.0, 0.0}};
  Matrix g(4, 2);
  EXPECT_THROW(basis_augment(u, g), ContractViolation);
}

TEST(AssembleAugmented, BlockStructure) {
  Matrix s{{2.0}};
  Matrix a = assemble_augmented_coefficients(s);
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_DOUBLE_EQ(a(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(a(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(a(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(a(1, 1), 0.0);

  Matrix zero(3, 3);
  EXPECT_EQ(max_abs(assemble_augmented_coefficients(zero)), 0.0);
}

TEST(AssembleAugmented, MatchesProjectedCoefficients) {
  // 500 random instances: [[S,0],[0,0]] equals Uaug^T (U S V^T) Vaug, and the
  // augmented state represents the same matrix as the source factors.
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 6 + static_cast<std::size_t>(rng.next_u64() % 7);
    const std::size_t r = 1 + static_cast<std::size_t>(rng.next_u64() % (n / 2));
    LowRankFactors f = random_factors(rng, n, r);
    Matrix gu = rng.gaussian_matrix(n, r);
    Matrix gv = rng.gaussian_matrix(n, r);
    AugmentedState st = augment_state(f, gu, gv);

    Matrix w = reconstruct(f);
    Matrix projected = matmul_tn(st.u_aug, matmul(w, st.v_aug));
    EXPECT_LE(max_abs(projected - st.s_aug), 1e-10);

    LowRankFactors aug_f{st.u_aug, st.s_aug, st.v_aug};
    EXPECT_LE(frobenius_distance(reconstruct(aug_f), w), 1e-10);
  }
}

TEST(AggregateMean, ExamplesAndErrors) {
  Matrix a{{1.0}};
  Matrix b{{3.0}};
  EXPECT_DOUBLE_EQ(aggregate_mean({a, b})(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(aggregate_mean({a})(0, 0), 1.0);

  Matrix c{{2.0, -1.0}, {0.5, 3.0}};
  Matrix d = c * -1.0;
  EXPECT_EQ(max_abs(aggregate_mean({c, d})), 0.0);

  EXPECT_THROW(aggregate_mean({}), std::invalid_argument);
  EXPECT_THROW(aggregate_mean({a, Matrix(2, 2)}), std::invalid_argument);
}

namespace {

AugmentedState state_with_spectrum(Rng& rng, std::size_t n, std::size_t r,
                                   const std::vector<double>& sigma) {
  LowRankFactors f = random_factors(rng, n, r);
  f.s = Matrix(r, r);
  for (std::size_t i = 0; i < r; ++i) f.s(i, i) = 1.0;
  AugmentedState st = augment_state(f, rng.gaussian_matrix(n, r), rng.gaussian_matrix(n, r));
  st.s_aug = Matrix(2 * r, 2 * r);
  for (std::size_t i = 0; i < sigma.size(); ++i) st.s_aug(i, i) = sigma[i];
  return st;
}

}  // namespace

TEST(Truncate, KeepsHeadAboveThreshold) {
  Rng rng(5);
  AugmentedState st = state_with_spectrum(rng, 8, 2, {3.0, 2.0, 1e-9, 1e-9});
  const double total = std::sqrt(9.0 + 4.0 + 2e-18);
  TruncationConfig cfg{1e-6 / total, 1, 0};  // realised threshold = 1e-6
  TruncationResult tr = truncate(st, cfg);
  EXPECT_EQ(tr.factors.rank(), 2u);
  EXPECT_NEAR(tr.factors.s(0, 0), 3.0, 1e-12);
  EXPECT_NEAR(tr.factors.s(1, 1), 2.0, 1e-12);
  EXPECT_NEAR(tr.threshold, 1e-6, 1e-18);
}

TEST(Truncate, TauZeroKeepsNonzeroSpectrum) {
  Rng rng(6);
  AugmentedState st = state_with_spectrum(rng, 8, 2, {1.5, 0.5, 0.25, 0.0});
  TruncationResult tr = truncate(st, TruncationConfig{0.0, 1, 0});
  EXPECT_EQ(tr.factors.rank(), 3u);
}

TEST(Truncate, BlockDiagonalRecoversFactors) {
  Rng rng(7);
  LowRankFactors f = random_factors(rng, 10, 3);
  f.s = Matrix(3, 3);
  f.s(0, 0) = 2.0;
  f.s(1, 1) = 1.0;
  f.s(2, 2) = 0.5;
  AugmentedState st = augment_state(f, rng.gaussian_matrix(10, 3), rng.gaussian_matrix(10, 3));
  TruncationResult tr = truncate(st, TruncationConfig{0.05, 1, 0});
  EXPECT_EQ(tr.factors.rank(), 3u);
  EXPECT_LE(frobenius_distance(reconstruct(tr.factors), reconstruct(f)), 1e-10);
}

TEST(Truncate, DegenerateZeroSpectrum) {
  Rng rng(8);
  AugmentedState st = state_with_spectrum(rng, 8, 2, {0.0, 0.0, 0.0, 0.0});
  TruncationResult tr = truncate(st, TruncationConfig{0.1, 1, 0});
  EXPECT_TRUE(tr.degenerate);
  EXPECT_EQ(tr.factors.rank(), 1u);
  EXPECT_DOUBLE_EQ(tr.factors.s(0, 0), 1e-12);
}

TEST(Truncate, ReconstructionErrorBoundedByThreshold) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 8 + static_cast<std::size_t>(rng.next_u64() % 5);
    const std::size_t r = 1 + static_cast<std::size_t>(rng.next_u64() % (n / 2));
    LowRankFactors f = random_factors(rng, n, r);
    AugmentedState st = augment_state(f, rng.gaussian_matrix(n, r), rng.gaussian_matrix(n, r));
    st.s_aug = rng.gaussian_matrix(2 * r, 2 * r);  // arbitrary aggregated coefficients
    const double tau = 0.3 * rng.uniform();
    TruncationResult tr = truncate(st, TruncationConfig{tau, 1, 0});

    LowRankFactors agg{st.u_aug, st.s_aug, st.v_aug};
    const double err = frobenius_distance(reconstruct(agg), reconstruct(tr.factors));
    EXPECT_LE(err, tr.threshold + 1e-10);
    EXPECT_LE(tr.factors.rank(), 2 * r);
    EXPECT_GE(tr.factors.rank(), 1u);
  }
}

TEST(Truncate, RespectsRankBounds) {
  Rng rng(10);
  AugmentedState st = state_with_spectrum(rng, 12, 3, {4.0, 3.0, 2.0, 1.0, 0.5, 0.25});
  TruncationResult lo = truncate(st, TruncationConfig{0.0, 2, 2});
  EXPECT_EQ(lo.factors.rank(), 2u);
  TruncationResult hi = truncate(st, TruncationConfig{0.9, 4, 0});
  EXPECT_GE(hi.factors.rank(), 4u);
}

TEST(Reconstruct, Examples) {
  LowRankFactors f;
  f.u = Matrix{{1.0}, {0.0}};
  f.v = Matrix{{1.0}, {0.0}};
  f.s = Matrix{{5.0}};
  Matrix w = reconstruct(f);
  EXPECT_DOUBLE_EQ(w(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(w(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(w(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(w(1, 1), 0.0);

  f.s = Matrix(1, 1);
  EXPECT_EQ(max_abs(reconstruct(f)), 0.0);
}

TEST(Reconstruct, FrobeniusNormMatchesCoefficients) {
  Rng rng(33);
  LowRankFactors f = random_factors(rng, 7, 3);
  EXPECT_NEAR(frobenius_norm(reconstruct(f)), frobenius_norm(f.s), 1e-10);
}
