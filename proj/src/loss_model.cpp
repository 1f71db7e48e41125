#include "fedlrt/loss_model.hpp"

#include "fedlrt/linalg.hpp"

namespace fedlrt {

namespace {

class GenericCoefficientEvaluator final : public CoefficientEvaluator {
 public:
  GenericCoefficientEvaluator(const LossModel& model, Matrix u, Matrix v)
      : model_(model), u_(std::move(u)), v_(std::move(v)) {}

  Matrix gradient(const Matrix& s) const override {
    Matrix w = matmul(matmul(u_, s), transpose(v_));
    Matrix gw = model_.weight_gradient(w);
    return matmul_tn(u_, matmul(gw, v_));
  }

 private:
  const LossModel& model_;
  Matrix u_, v_;
};

class GenericWeightEvaluator final : public WeightEvaluator {
 public:
  explicit GenericWeightEvaluator(const LossModel& model) : model_(model) {}
  Matrix gradient(const Matrix& w) const override { return model_.weight_gradient(w); }

 private:
  const LossModel& model_;
};

}  // namespace

FactorGradients LossModel::factor_gradients(const LowRankFactors& f) const {
  Matrix gw = weight_gradient(reconstruct(f));
  FactorGradients out;
  out.g_u = matmul(gw, matmul(f.v, transpose(f.s)));
  out.g_v = matmul_tn(gw, matmul(f.u, f.s));
  out.g_s = matmul_tn(f.u, matmul(gw, f.v));
  return out;
}

std::unique_ptr<CoefficientEvaluator> LossModel::coefficient_evaluator(
    const Matrix& u_basis, const Matrix& v_basis, std::size_t /*steps_hint*/) const {
  return std::make_unique<GenericCoefficientEvaluator>(*this, u_basis, v_basis);
}

std::unique_ptr<WeightEvaluator> LossModel::weight_evaluator(std::size_t /*steps_hint*/) const {
  return std::make_unique<GenericWeightEvaluator>(*this);
}

Matrix coefficient_gradient(const Matrix& u_basis, const Matrix& s, const Matrix& v_basis,
                            const LossModel& model) {
  return model.coefficient_evaluator(u_basis, v_basis, 1)->gradient(s);
}

FactorGradients factor_gradients(const LowRankFactors& f, const LossModel& model) {
  return model.factor_gradients(f);
}

double estimate_smoothness(const LossModel& model, std::size_t iters, std::uint64_t seed) {
  const std::size_t n = model.dimension();
  const Matrix g0 = model.weight_gradient(Matrix(n, n));
  auto hessian = [&](const Matrix& x) {
    Matrix g = model.weight_gradient(x);
    g -= g0;
    return g;
  };
  return spectral_norm(hessian, n, n, iters, seed);
}

CompositeLossModel::CompositeLossModel(std::vector<std::shared_ptr<const LossModel>> members)
    : members_(std::move(members)) {
  if (members_.empty())
    throw std::invalid_argument("CompositeLossModel: needs at least one member");
  dim_ = members_.front()->dimension();
  for (const auto& m : members_)
    if (m->dimension() != dim_)
      throw std::invalid_argument("CompositeLossModel: mixed dimensions");
}

double CompositeLossModel::loss(const Matrix& w) const {
  double acc = 0.0;
  for (const auto& m : members_) acc += m->loss(w);
  return acc / static_cast<double>(members_.size());
}

Matrix CompositeLossModel::weight_gradient(const Matrix& w) const {
  Matrix acc = members_.front()->weight_gradient(w);
  for (std::size_t i = 1; i < members_.size(); ++i) acc += members_[i]->weight_gradient(w);
  acc *= 1.0 / static_cast<double>(members_.size());
  return acc;
}

FactorGradients CompositeLossModel::factor_gradients(const LowRankFactors& f) const {
  FactorGradients acc = members_.front()->factor_gradients(f);
  for (std::size_t i = 1; i < members_.size(); ++i) {
    FactorGradients g = members_[i]->factor_gradients(f);
    acc.g_u += g.g_u;
    acc.g_v += g.g_v;
    acc.g_s += g.g_s;
  }
  const double inv = 1.0 / static_cast<double>(members_.size());
  acc.g_u *= inv;
  acc.g_v *= inv;
  acc.g_s *= inv;
  return acc;
}

namespace {
class CompositeCoefficientEvaluator final : public CoefficientEvaluator {
 public:
  CompositeCoefficientEvaluator(std::vector<std::unique_ptr<CoefficientEvaluator>> parts)
      : parts_(std::move(parts)) {}
  Matrix gradient(const Matrix& s) const override {
    Matrix acc = parts_.front()->gradient(s);
    for (std::size_t i = 1; i < parts_.size(); ++i) acc += parts_[i]->gradient(s);
    acc *= 1.0 / static_cast<double>(parts_.size());
    return acc;
  }

 private:
  std::vector<std::unique_ptr<CoefficientEvaluator>> parts_;
};

class CompositeWeightEvaluator final : public WeightEvaluator {
 public:
  CompositeWeightEvaluator(std::vector<std::unique_ptr<WeightEvaluator>> parts)
      : parts_(std::move(parts)) {}
  Matrix gradient(const Matrix& w) const override {
    Matrix acc = parts_.front()->gradient(w);
    for (std::size_t i = 1; i < parts_.size(); ++i) acc += parts_[i]->gradient(w);
    acc *= 1.0 / static_cast<double>(parts_.size());
    return acc;
  }

 private:
  std::vector<std::unique_ptr<WeightEvaluator>> parts_;
};
}  // namespace

std::unique_ptr<CoefficientEvaluator> CompositeLossModel::coefficient_evaluator(
    const Matrix& u_basis, const Matrix& v_basis, std::size_t steps_hint) const {
  std::vector<std::unique_ptr<CoefficientEvaluator>> parts;
  parts.reserve(members_.size());
  for (const auto& m : members_)
    parts.push_back(m->coefficient_evaluator(u_basis, v_basis, steps_hint));
  return std::make_unique<CompositeCoefficientEvaluator>(std::move(parts));
}

std::unique_ptr<WeightEvaluator> CompositeLossModel::weight_evaluator(
    std::size_t steps_hint) const {
  std::vector<std::unique_ptr<WeightEvaluator>> parts;
  parts.reserve(members_.size());
  for (const auto& m : members_) parts.push_back(m->weight_evaluator(steps_hint));
  return std::make_unique<CompositeWeightEvaluator>(std::move(parts));
}

}  // namespace fedlrt
