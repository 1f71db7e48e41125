#include <gtest/gtest.h>

#include <cmath>

#include "fedlrt/least_squares.hpp"
#include "fedlrt/linalg.hpp"
#include "fedlrt/rng.hpp"

using namespace fedlrt;

namespace {

constexpr double kFdStep = 1e-6;
constexpr double kFdRelTol = 1e-5;

/// Central finite differences of a scalar function over a matrix argument.
template <typename F>
Matrix finite_difference(const F& f, const Matrix& at, double step = kFdStep) {
  Matrix g(at.rows(), at.cols());
  Matrix probe = at;
  for (std::size_t i = 0; i < at.rows(); ++i) {
    for (std::size_t j = 0; j < at.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + step;
      const double up = f(probe);
      probe(i, j) = orig - step;
      const double down = f(probe);
      probe(i, j) = orig;
      g(i, j) = (up - down) / (2.0 * step);
    }
  }
  return g;
}

double rel_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max(frobenius_norm(a), frobenius_norm(b));
  if (denom == 0.0) return 0.0;
  return frobenius_distance(a, b) / denom;
}

std::shared_ptr<const FeatureTable> random_table(Rng& rng, std::size_t n, std::size_t count,
                                                 FeatureScaling scaling) {
  std::vector<double> xs(count), ys(count);
  for (std::size_t i = 0; i < count; ++i) {
    xs[i] = rng.uniform(-1.0, 1.0);
    ys[i] = rng.uniform(-1.0, 1.0);
  }
  return std::make_shared<const FeatureTable>(n, xs, ys, scaling);
}

LegendreLeastSquares random_model(Rng& rng, std::size_t n, std::size_t count) {
  auto table = random_table(rng, n, count, FeatureScaling::UnitMeanSquare);
  std::vector<double> targets(count);
  for (double& t : targets) t = rng.gaussian();
  return LegendreLeastSquares(table, targets);
}

LowRankFactors random_factors(Rng& rng, std::size_t n, std::size_t r) {
  LowRankFactors f;
  f.u = qr_thin(rng.gaussian_matrix(n, r)).q;
  f.v = qr_thin(rng.gaussian_matrix(n, r)).q;
  f.s = rng.gaussian_matrix(r, r);
  return f;
}

/// Linear loss with a constant gradient M (L(W) = <M, W>).
class ConstantGradientModel final : public LossModel {
 public:
  explicit ConstantGradientModel(Matrix m) : m_(std::move(m)) {}
  std::size_t dimension() const override { return m_.rows(); }
  double loss(const Matrix& w) const override { return dot(m_, w); }
  Matrix weight_gradient(const Matrix&) const override { return m_; }

 private:
  Matrix m_;
};

}  // namespace

TEST(LegendreFeatures, StandardValues) {
  EXPECT_DOUBLE_EQ(legendre_features(0.7, 1)[0], 1.0);
  const auto p2 = legendre_features(0.5, 2);
  EXPECT_DOUBLE_EQ(p2[0], 1.0);
  EXPECT_DOUBLE_EQ(p2[1], 0.5);
  const auto p3 = legendre_features(0.5, 3);
  EXPECT_DOUBLE_EQ(p3[2], -0.125);
  EXPECT_THROW(legendre_features(1.5, 3), std::invalid_argument);
}

TEST(LegendreFeatures, UnitScalingHasUnitMeanSquare) {
  // Monte Carlo check of E[f_k(x)^2] = 1 under x ~ U[-1, 1].
  Rng rng(20);
  const std::size_t n = 6;
  std::vector<double> acc(n, 0.0);
  const int trials = 200000;
  for (int t = 0; t < trials; ++t) {
    const auto f = legendre_features_unit(rng.uniform(-1.0, 1.0), n);
    for (std::size_t k = 0; k < n; ++k) acc[k] += f[k] * f[k];
  }
  for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(acc[k] / trials, 1.0, 0.05);
}

TEST(LlsLoss, Examples) {
  Rng rng(31);
  const std::size_t n = 5;
  auto table = random_table(rng, n, 40, FeatureScaling::UnitMeanSquare);
  Matrix w_target = rng.gaussian_matrix(n, n);
  std::vector<double> targets = table->evaluate_bilinear(w_target);
  LegendreLeastSquares model(table, targets, w_target);

  EXPECT_DOUBLE_EQ(model.loss(w_target), 0.0);

  // single sample with residual 2 -> loss 2
  auto single = std::make_shared<const FeatureTable>(
      n, std::vector<double>{0.3}, std::vector<double>{-0.4}, FeatureScaling::UnitMeanSquare);
  const double f0 = single->evaluate_bilinear(w_target)[0];
  LegendreLeastSquares m1(single, {f0 - 2.0});
  EXPECT_NEAR(m1.loss(w_target), 2.0, 1e-12);

  // doubling all residuals quadruples the loss
  Matrix w2 = w_target;
  Matrix dir = rng.gaussian_matrix(n, n);
  Matrix w_plus = w_target + dir;
  Matrix w_plus2 = w_target + dir * 2.0;
  EXPECT_NEAR(model.loss(w_plus2), 4.0 * model.loss(w_plus), 1e-9 * model.loss(w_plus2));
  (void)w2;

  EXPECT_GE(model.loss(w_plus), 0.0);
}

TEST(LlsLoss, EmptySampleSetRejected) {
  EXPECT_THROW(FeatureTable(3, {}, {}, FeatureScaling::Standard), std::invalid_argument);
}

TEST(LlsWeightGradient, Examples) {
  Rng rng(32);
  const std::size_t n = 4;
  auto table = random_table(rng, n, 30, FeatureScaling::UnitMeanSquare);
  Matrix w_target = rng.gaussian_matrix(n, n);
  LegendreLeastSquares model(table, table->evaluate_bilinear(w_target), w_target);
  EXPECT_EQ(max_abs(model.weight_gradient(w_target)), 0.0);

  // single sample with residual 1 -> p q^T
  auto single = std::make_shared<const FeatureTable>(
      n, std::vector<double>{0.2}, std::vector<double>{0.9}, FeatureScaling::UnitMeanSquare);
  LegendreLeastSquares m1(single, {single->evaluate_bilinear(w_target)[0] - 1.0});
  Matrix g = m1.weight_gradient(w_target);
  const auto p = legendre_features_unit(0.2, n);
  const auto q = legendre_features_unit(0.9, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(g(i, j), p[i] * q[j], 1e-12);
}

TEST(GradientOracle, WeightGradientMatchesFiniteDifferences) {
  Rng rng(100);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(rng.next_u64() % 4);
    LegendreLeastSquares model = random_model(rng, n, 25);
    Matrix w = rng.gaussian_matrix(n, n);
    Matrix fd = finite_difference([&](const Matrix& x) { return model.loss(x); }, w);
    EXPECT_LE(rel_error(model.weight_gradient(w), fd), kFdRelTol);
  }
}

TEST(GradientOracle, FactorGradientsMatchFiniteDifferences) {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + static_cast<std::size_t>(rng.next_u64() % 3);
    const std::size_t r = 1 + static_cast<std::size_t>(rng.next_u64() % 2);
    LegendreLeastSquares model = random_model(rng, n, 25);
    LowRankFactors f = random_factors(rng, n, r);
    FactorGradients g = factor_gradients(f, model);

    Matrix fd_u = finite_difference(
        [&](const Matrix& u) {
          return model.loss(matmul(matmul(u, f.s), transpose(f.v)));
        },
        f.u);
    Matrix fd_v = finite_difference(
        [&](const Matrix& v) {
          return model.loss(matmul(matmul(f.u, f.s), transpose(v)));
        },
        f.v);
    Matrix fd_s = finite_difference(
        [&](const Matrix& s) {
          return model.loss(matmul(matmul(f.u, s), transpose(f.v)));
        },
        f.s);
    EXPECT_LE(rel_error(g.g_u, fd_u), kFdRelTol);
    EXPECT_LE(rel_error(g.g_v, fd_v), kFdRelTol);
    EXPECT_LE(rel_error(g.g_s, fd_s), kFdRelTol);
  }
}

TEST(GradientOracle, CoefficientGradientMatchesFiniteDifferences) {
  Rng rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 6;
    const std::size_t r = 1 + static_cast<std::size_t>(rng.next_u64() % 2);
    LegendreLeastSquares model = random_model(rng, n, 20);
    LowRankFactors f = random_factors(rng, n, r);
    AugmentedState st = augment_state(f, rng.gaussian_matrix(n, r), rng.gaussian_matrix(n, r));
    Matrix s_tilde = rng.gaussian_matrix(st.s_aug.rows(), st.s_aug.cols());
    Matrix analytic = coefficient_gradient(st.u_aug, s_tilde, st.v_aug, model);
    Matrix fd = finite_difference(
        [&](const Matrix& s) {
          return model.loss(matmul(matmul(st.u_aug, s), transpose(st.v_aug)));
        },
        s_tilde);
    EXPECT_LE(rel_error(analytic, fd), kFdRelTol);
  }
}

TEST(CoefficientGradient, ConstantGradientModelProjects) {
  Rng rng(103);
  const std::size_t n = 6, r = 2;
  Matrix m = rng.gaussian_matrix(n, n);
  ConstantGradientModel model(m);
  LowRankFactors f = random_factors(rng, n, r);
  AugmentedState st = augment_state(f, rng.gaussian_matrix(n, r), rng.gaussian_matrix(n, r));
  Matrix g = coefficient_gradient(st.u_aug, st.s_aug, st.v_aug, model);
  Matrix expect = matmul_tn(st.u_aug, matmul(m, st.v_aug));
  EXPECT_LE(frobenius_distance(g, expect), 1e-12);
}

TEST(FactorGradients, ZeroCoefficientsKillBasisGradients) {
  Rng rng(104);
  const std::size_t n = 6, r = 2;
  LegendreLeastSquares model = random_model(rng, n, 20);
  LowRankFactors f = random_factors(rng, n, r);
  f.s = Matrix(r, r);
  FactorGradients g = factor_gradients(f, model);
  EXPECT_EQ(max_abs(g.g_u), 0.0);
  EXPECT_EQ(max_abs(g.g_v), 0.0);
  EXPECT_GT(max_abs(g.g_s), 0.0);
}

TEST(FactorGradients, FastPathMatchesGenericPath) {
  Rng rng(105);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8;
    const std::size_t r = 1 + static_cast<std::size_t>(rng.next_u64() % 3);
    LegendreLeastSquares model = random_model(rng, n, 50);
    LowRankFactors f = random_factors(rng, n, r);
    FactorGradients fast = model.factor_gradients(f);
    FactorGradients generic = model.LossModel::factor_gradients(f);
    EXPECT_LE(rel_error(fast.g_u, generic.g_u), 1e-10);
    EXPECT_LE(rel_error(fast.g_v, generic.g_v), 1e-10);
    EXPECT_LE(rel_error(fast.g_s, generic.g_s), 1e-10);
  }
}

TEST(CoefficientEvaluator, RoutesAgree) {
  Rng rng(106);
  const std::size_t n = 6, r = 2;
  LegendreLeastSquares model = random_model(rng, n, 300);
  LowRankFactors f = random_factors(rng, n, r);
  AugmentedState st = augment_state(f, rng.gaussian_matrix(n, r), rng.gaussian_matrix(n, r));
  Matrix s = rng.gaussian_matrix(st.s_aug.rows(), st.s_aug.cols());

  auto direct = model.coefficient_evaluator(st.u_aug, st.v_aug, 1);       // feature route
  auto gram = model.coefficient_evaluator(st.u_aug, st.v_aug, 100000);    // gram route
  auto generic = model.LossModel::coefficient_evaluator(st.u_aug, st.v_aug, 1);
  Matrix g1 = direct->gradient(s);
  Matrix g2 = gram->gradient(s);
  Matrix g3 = generic->gradient(s);
  EXPECT_LE(rel_error(g1, g2), 1e-10);
  EXPECT_LE(rel_error(g1, g3), 1e-10);
}

TEST(WeightEvaluator, RoutesAgree) {
  Rng rng(107);
  const std::size_t n = 5;
  LegendreLeastSquares model = random_model(rng, n, 400);
  Matrix w = rng.gaussian_matrix(n, n);
  auto direct = model.LossModel::weight_evaluator(1);
  auto fast = model.weight_evaluator(100000);
  EXPECT_LE(rel_error(direct->gradient(w), fast->gradient(w)), 1e-10);
}

TEST(EstimateSmoothness, UnitRankOneSample) {
  // One sample whose feature vectors are unit norm: the Hessian is a rank-1
  // projector with eigenvalue 1. P_0 = 1 at x = 0 gives ||p|| = 1 for n = 1.
  auto table = std::make_shared<const FeatureTable>(1, std::vector<double>{0.0},
                                                    std::vector<double>{0.0},
                                                    FeatureScaling::Standard);
  LegendreLeastSquares model(table, {0.5});
  EXPECT_NEAR(estimate_smoothness(model, 200, 3), 1.0, 1e-8);
}

TEST(EstimateSmoothness, QuarticUnderFeatureScaling) {
  // Scaling every feature vector by c scales the Hessian map by c^4. With
  // zero targets the weight gradient is the pure Hessian action, so the
  // scaled map is c^2 * H[c^2 x].
  Rng rng(108);
  const std::size_t n = 4;
  auto table = random_table(rng, n, 60, FeatureScaling::Standard);
  LegendreLeastSquares base(table, std::vector<double>(60, 0.0));
  const double c = 1.7;
  const double l_base = estimate_smoothness(base, 300, 5);
  auto scaled_apply = [&](const Matrix& x) {
    return base.weight_gradient(x * (c * c)) * (c * c);
  };
  const double l_scaled = spectral_norm(scaled_apply, n, n, 300, 5);
  EXPECT_NEAR(l_scaled, c * c * c * c * l_base, 1e-6 * l_scaled);
  EXPECT_GE(l_base, 0.0);
}

TEST(EstimateSmoothness, PermutationInvariant) {
  Rng rng(109);
  const std::size_t n = 4;
  std::vector<double> xs(50), ys(50);
  for (std::size_t i = 0; i < 50; ++i) {
    xs[i] = rng.uniform(-1.0, 1.0);
    ys[i] = rng.uniform(-1.0, 1.0);
  }
  auto t1 = std::make_shared<const FeatureTable>(n, xs, ys, FeatureScaling::UnitMeanSquare);
  std::reverse(xs.begin(), xs.end());
  std::reverse(ys.begin(), ys.end());
  auto t2 = std::make_shared<const FeatureTable>(n, xs, ys, FeatureScaling::UnitMeanSquare);
  LegendreLeastSquares m1(t1, std::vector<double>(50, 0.0));
  LegendreLeastSquares m2(t2, std::vector<double>(50, 0.0));
  const double a = estimate_smoothness(m1, 300, 7);
  const double b = estimate_smoothness(m2, 300, 7);
  EXPECT_NEAR(a, b, 1e-6 * std::max(a, b));
}

TEST(Oracle, HomogeneousIsRealizableTarget) {
  FederatedProblem prob = make_homogeneous_problem(8, 2, 500, 2, 99);
  EXPECT_NEAR(prob.oracle_loss, 0.0, 1e-22);
  EXPECT_NEAR(prob.global->loss(prob.oracle), 0.0, 1e-22);
}

TEST(Oracle, HeterogeneousSharedTargetDegenerate) {
  // all clients share one target -> oracle equals it
  Rng rng(110);
  const std::size_t n = 5;
  auto table = random_table(rng, n, 600, FeatureScaling::UnitMeanSquare);
  Matrix u = rng.gaussian_matrix(n, 1), v = rng.gaussian_matrix(n, 1);
  Matrix w = matmul_nt(u, v);
  w *= 1.0 / frobenius_norm(w);
  std::vector<double> f = table->evaluate_bilinear(w);
  LegendreLeastSquares c1(table, f, w), c2(table, f, w);
  Matrix oracle = oracle_minimizer({&c1, &c2});
  EXPECT_LE(frobenius_distance(oracle, w), 1e-8);
}

TEST(Oracle, HeterogeneousTwoClientsIsAverage) {
  Rng rng(111);
  const std::size_t n = 5;
  auto table = random_table(rng, n, 2000, FeatureScaling::UnitMeanSquare);
  std::vector<Matrix> targets;
  std::vector<const LegendreLeastSquares*> raw;
  std::vector<std::unique_ptr<LegendreLeastSquares>> models;
  for (int c = 0; c < 2; ++c) {
    Matrix u = rng.gaussian_matrix(n, 1), v = rng.gaussian_matrix(n, 1);
    Matrix w = matmul_nt(u, v);
    w *= 1.0 / frobenius_norm(w);
    models.push_back(
        std::make_unique<LegendreLeastSquares>(table, table->evaluate_bilinear(w), w));
    raw.push_back(models.back().get());
    targets.push_back(std::move(w));
  }
  Matrix oracle = oracle_minimizer(raw);
  Matrix mean = (targets[0] + targets[1]) * 0.5;
  EXPECT_LE(frobenius_distance(oracle, mean), 1e-8);
}

TEST(Oracle, RealizableRequirement) {
  Rng rng(112);
  LegendreLeastSquares model = random_model(rng, 4, 20);
  EXPECT_THROW(oracle_minimizer(model), std::invalid_argument);
}

TEST(ShardStructure, ClientMeanGradientEqualsGlobal) {
  FederatedProblem prob = make_homogeneous_problem(6, 2, 1000, 4, 7);
  Rng rng(113);
  Matrix w = rng.gaussian_matrix(6, 6);
  Matrix mean(6, 6);
  for (const auto& c : prob.clients) mean += c->weight_gradient(w);
  mean *= 0.25;
  EXPECT_LE(max_abs(mean - prob.global->weight_gradient(w)), 1e-12);
}

TEST(ShardStructure, ShardsPartitionSamples) {
  FederatedProblem prob = make_homogeneous_problem(6, 2, 103, 4, 8);
  std::size_t total = 0;
  for (const auto& c : prob.clients) {
    const auto* lls = dynamic_cast<const LegendreLeastSquares*>(c.get());
    ASSERT_NE(lls, nullptr);
    total += lls->data().count();
  }
  EXPECT_EQ(total, 103u);
}

TEST(Losses, LossNonNegativeOnRandomProbes) {
  Rng rng(114);
  LegendreLeastSquares model = random_model(rng, 5, 50);
  for (int i = 0; i < 200; ++i) {
    EXPECT_GE(model.loss(rng.gaussian_matrix(5, 5)), 0.0);
  }
}
