#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "fedlrt/legendre.hpp"
#include "fedlrt/loss_model.hpp"
#include "fedlrt/matrix.hpp"

namespace fedlrt {

/// Immutable sample table for one regression dataset: raw points plus the
/// evaluated feature rows p(x_i), p(y_i). Shared between models that differ
/// only in targets (the heterogeneous setup). The n^2 x n^2 Gram operator of
/// the quadratic objective is materialised lazily.
class FeatureTable {
 public:
  FeatureTable(std::size_t n, std::vector<double> xs, std::vector<double> ys,
               FeatureScaling scaling);

  std::size_t n() const { return n_; }
  std::size_t count() const { return xs_.size(); }
  const Matrix& px() const { return px_; }
  const Matrix& py() const { return py_; }
  const std::vector<double>& xs() const { return xs_; }
  const std::vector<double>& ys() const { return ys_; }
  FeatureScaling scaling() const { return scaling_; }

  /// (1/|X|) sum_i vec(p_i q_i^T) vec(p_i q_i^T)^T, row-major vec convention.
  const Matrix& gram() const;

  /// Targets f_i = p(x_i)^T W p(y_i) for a given coefficient matrix.
  std::vector<double> evaluate_bilinear(const Matrix& w) const;

 private:
  std::size_t n_;
  std::vector<double> xs_, ys_;
  FeatureScaling scaling_;
  Matrix px_, py_;  // count x n

  mutable std::once_flag gram_once_;
  mutable Matrix gram_;
};

/// Spec-level operations on raw sample tables (direct summation semantics).
double lls_loss(const Matrix& w, const FeatureTable& data, const std::vector<double>& targets);
Matrix lls_weight_gradient(const Matrix& w, const FeatureTable& data,
                           const std::vector<double>& targets);

/// Least-squares regression loss over a Legendre feature table:
///   L(W) = 1/(2|X|) sum_i (p(x_i)^T W p(y_i) - f_i)^2.
class LegendreLeastSquares final : public LossModel {
 public:
  LegendreLeastSquares(std::shared_ptr<const FeatureTable> data, std::vector<double> targets,
                       std::optional<Matrix> realizable_target = std::nullopt);

  std::size_t dimension() const override { return data_->n(); }
  double loss(const Matrix& w) const override;
  Matrix weight_gradient(const Matrix& w) const override;
  FactorGradients factor_gradients(const LowRankFactors& f) const override;
  std::unique_ptr<CoefficientEvaluator> coefficient_evaluator(
      const Matrix& u_basis, const Matrix& v_basis, std::size_t steps_hint) const override;
  std::unique_ptr<WeightEvaluator> weight_evaluator(std::size_t steps_hint) const override;

  const FeatureTable& data() const { return *data_; }
  std::shared_ptr<const FeatureTable> data_ptr() const { return data_; }
  const std::vector<double>& targets() const { return targets_; }

  /// The exact minimizer when the data was generated from a known W.
  const std::optional<Matrix>& realizable_target() const { return realizable_target_; }

 private:
  std::shared_ptr<const FeatureTable> data_;
  std::vector<double> targets_;
  std::optional<Matrix> realizable_target_;
};

/// Exact minimizer of the loss of a realizable model (returns the generating
/// coefficient matrix).
Matrix oracle_minimizer(const LegendreLeastSquares& model);

/// Brute-force minimizer of the uniform average of the client losses: solves
/// the vectorized normal equations assembled directly from the raw samples
/// with a dense factorization. Throws SingularMatrixError (with a condition
/// estimate) if the averaged Gram operator is numerically singular.
Matrix oracle_minimizer(const std::vector<const LegendreLeastSquares*>& clients);

/// One federated regression instance: per-client models, the global model
/// (uniform average), the oracle minimizer and its raw loss.
struct FederatedProblem {
  std::vector<std::shared_ptr<const LossModel>> clients;
  std::shared_ptr<const LossModel> global;
  Matrix oracle;
  double oracle_loss = 0.0;
  std::size_t n = 0;
};

/// Homogeneous setup: one rank-r target, samples drawn uniformly on [-1,1]^2,
/// shuffled and split into equal contiguous shards.
FederatedProblem make_homogeneous_problem(std::size_t n, std::size_t target_rank,
                                          std::size_t sample_count, std::size_t clients,
                                          std::uint64_t seed,
                                          FeatureScaling scaling = FeatureScaling::UnitMeanSquare);

/// Heterogeneous setup: every client sees the same sample set but its own
/// rank-1 target (unit Frobenius norm).
FederatedProblem make_heterogeneous_problem(std::size_t n, std::size_t sample_count,
                                            std::size_t clients, std::uint64_t seed,
                                            FeatureScaling scaling = FeatureScaling::UnitMeanSquare);

}  // namespace fedlrt
