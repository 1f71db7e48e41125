#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedlrt/low_rank.hpp"
#include "fedlrt/matrix.hpp"

namespace fedlrt {

struct FactorGradients {
  Matrix g_u;  // n x r
  Matrix g_v;  // n x r
  Matrix g_s;  // r x r
};

/// Per-round workspace bound to a fixed pair of bases: evaluates
/// S -> grad_S L(U S V^T) cheaply for repeated coefficient iterations.
class CoefficientEvaluator {
 public:
  virtual ~CoefficientEvaluator() = default;
  virtual Matrix gradient(const Matrix& s) const = 0;
};

/// Repeated full-weight gradient evaluations (FedAvg/FedLin inner loops).
class WeightEvaluator {
 public:
  virtual ~WeightEvaluator() = default;
  virtual Matrix gradient(const Matrix& w) const = 0;
};

/// A client's differentiable objective over n x n weight matrices.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual std::size_t dimension() const = 0;
  virtual double loss(const Matrix& w) const = 0;
  virtual Matrix weight_gradient(const Matrix& w) const = 0;

  /// Chain-rule gradients of U -> L(USV^T) etc.:
  ///   g_u = dL/dW * V * S^T,  g_v = (dL/dW)^T * U * S,  g_s = U^T dL/dW V.
  virtual FactorGradients factor_gradients(const LowRankFactors& f) const;

  /// steps_hint lets implementations pick an evaluation strategy for the
  /// expected number of gradient calls; the result is identical either way.
  virtual std::unique_ptr<CoefficientEvaluator> coefficient_evaluator(
      const Matrix& u_basis, const Matrix& v_basis, std::size_t steps_hint) const;

  virtual std::unique_ptr<WeightEvaluator> weight_evaluator(std::size_t steps_hint) const;
};

/// grad_S L(U S V^T) = U^T * dL/dW(U S V^T) * V for arbitrary bases
/// (one-shot; use coefficient_evaluator for loops).
Matrix coefficient_gradient(const Matrix& u_basis, const Matrix& s, const Matrix& v_basis,
                            const LossModel& model);

FactorGradients factor_gradients(const LowRankFactors& f, const LossModel& model);

/// Power-iteration estimate of the largest eigenvalue of the loss Hessian
/// (exact operator for quadratic losses). Deterministic for a given seed.
double estimate_smoothness(const LossModel& model, std::size_t iters, std::uint64_t seed);

/// Uniform average of member losses, folded in member order.
class CompositeLossModel final : public LossModel {
 public:
  explicit CompositeLossModel(std::vector<std::shared_ptr<const LossModel>> members);

  std::size_t dimension() const override { return dim_; }
  double loss(const Matrix& w) const override;
  Matrix weight_gradient(const Matrix& w) const override;
  FactorGradients factor_gradients(const LowRankFactors& f) const override;
  std::unique_ptr<CoefficientEvaluator> coefficient_evaluator(
      const Matrix& u_basis, const Matrix& v_basis, std::size_t steps_hint) const override;
  std::unique_ptr<WeightEvaluator> weight_evaluator(std::size_t steps_hint) const override;

 private:
  std::vector<std::shared_ptr<const LossModel>> members_;
  std::size_t dim_ = 0;
};

}  // namespace fedlrt
