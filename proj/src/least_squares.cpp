#include "fedlrt/least_squares.hpp"

#include <algorithm>
#include <cmath>

#include "fedlrt/linalg.hpp"
#include "fedlrt/rng.hpp"

namespace fedlrt {

FeatureTable::FeatureTable(std::size_t n, std::vector<double> xs, std::vector<double> ys,
                           FeatureScaling scaling)
    : n_(n), xs_(std::move(xs)), ys_(std::move(ys)), scaling_(scaling) {
  if (n_ == 0) throw std::invalid_argument("FeatureTable: n must be >= 1");
  if (xs_.empty() || xs_.size() != ys_.size())
    throw std::invalid_argument("FeatureTable: empty or mismatched sample vectors");
  px_ = Matrix(xs_.size(), n_);
  py_ = Matrix(xs_.size(), n_);
  for (std::size_t i = 0; i < xs_.size(); ++i) {
    const std::vector<double> fx = legendre_features(xs_[i], n_, scaling_);
    const std::vector<double> fy = legendre_features(ys_[i], n_, scaling_);
    std::copy(fx.begin(), fx.end(), px_.row(i));
    std::copy(fy.begin(), fy.end(), py_.row(i));
  }
}

const Matrix& FeatureTable::gram() const {
  std::call_once(gram_once_, [this] {
    const std::size_t n2 = n_ * n_;
    Matrix g(n2, n2);
    std::vector<double> v(n2);
    for (std::size_t i = 0; i < count(); ++i) {
      const double* p = px_.row(i);
      const double* q = py_.row(i);
      for (std::size_t a = 0; a < n_; ++a)
        for (std::size_t b = 0; b < n_; ++b) v[a * n_ + b] = p[a] * q[b];
      for (std::size_t a = 0; a < n2; ++a) {
        const double va = v[a];
        if (va == 0.0) continue;
        double* row = g.row(a);
        for (std::size_t b = a; b < n2; ++b) row[b] += va * v[b];
      }
    }
    const double inv = 1.0 / static_cast<double>(count());
    for (std::size_t a = 0; a < n2; ++a)
      for (std::size_t b = a; b < n2; ++b) {
        g(a, b) *= inv;
        g(b, a) = g(a, b);
      }
    gram_ = std::move(g);
  });
  return gram_;
}

std::vector<double> FeatureTable::evaluate_bilinear(const Matrix& w) const {
  if (w.rows() != n_ || w.cols() != n_)
    throw std::invalid_argument("evaluate_bilinear: shape mismatch");
  // g_i = p_i^T W q_i, computed as rowwise dot of (PX W) with PY.
  Matrix pw = matmul(px_, w);
  std::vector<double> out(count());
  for (std::size_t i = 0; i < count(); ++i) {
    const double* a = pw.row(i);
    const double* b = py_.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < n_; ++j) s += a[j] * b[j];
    out[i] = s;
  }
  return out;
}

double lls_loss(const Matrix& w, const FeatureTable& data, const std::vector<double>& targets) {
  if (targets.size() != data.count())
    throw std::invalid_argument("lls_loss: target count mismatch");
  if (data.count() == 0) throw std::invalid_argument("lls_loss: empty sample set");
  const std::vector<double> g = data.evaluate_bilinear(w);
  double acc = 0.0;
  double comp = 0.0;  // Neumaier compensation
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double r = g[i] - targets[i];
    const double term = r * r;
    const double t = acc + term;
    comp += (std::fabs(acc) >= std::fabs(term)) ? (acc - t) + term : (term - t) + acc;
    acc = t;
  }
  return 0.5 * (acc + comp) / static_cast<double>(g.size());
}

Matrix lls_weight_gradient(const Matrix& w, const FeatureTable& data,
                           const std::vector<double>& targets) {
  if (targets.size() != data.count())
    throw std::invalid_argument("lls_weight_gradient: target count mismatch");
  if (data.count() == 0) throw std::invalid_argument("lls_weight_gradient: empty sample set");
  const std::size_t n = data.n();
  const std::vector<double> g = data.evaluate_bilinear(w);
  Matrix grad(n, n);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double r = g[i] - targets[i];
    if (r == 0.0) continue;
    const double* p = data.px().row(i);
    const double* q = data.py().row(i);
    for (std::size_t a = 0; a < n; ++a) {
      const double rp = r * p[a];
      double* row = grad.row(a);
      for (std::size_t b = 0; b < n; ++b) row[b] += rp * q[b];
    }
  }
  grad *= 1.0 / static_cast<double>(g.size());
  return grad;
}

LegendreLeastSquares::LegendreLeastSquares(std::shared_ptr<const FeatureTable> data,
                                           std::vector<double> targets,
                                           std::optional<Matrix> realizable_target)
    : data_(std::move(data)),
      targets_(std::move(targets)),
      realizable_target_(std::move(realizable_target)) {
  if (!data_) throw std::invalid_argument("LegendreLeastSquares: null data");
  if (targets_.size() != data_->count())
    throw std::invalid_argument("LegendreLeastSquares: target count mismatch");
}

double LegendreLeastSquares::loss(const Matrix& w) const { return lls_loss(w, *data_, targets_); }

Matrix LegendreLeastSquares::weight_gradient(const Matrix& w) const {
  return lls_weight_gradient(w, *data_, targets_);
}

FactorGradients LegendreLeastSquares::factor_gradients(const LowRankFactors& f) const {
  // Feature-space form of the chain rule: with a_i = U^T p_i, b_i = V^T q_i
  // and residual r_i = a_i^T S b_i - f_i,
  //   g_u = (1/|X|) sum r_i p_i (S b_i)^T,  g_v = (1/|X|) sum r_i q_i (S^T a_i)^T,
  //   g_s = (1/|X|) sum r_i a_i b_i^T.
  const std::size_t n = data_->n();
  const std::size_t r = f.rank();
  if (f.n() != n) throw std::invalid_argument("factor_gradients: dimension mismatch");
  const Matrix ax = matmul(data_->px(), f.u);  // count x r
  const Matrix by = matmul(data_->py(), f.v);
  const std::size_t m = data_->count();

  FactorGradients out;
  out.g_u = Matrix(n, r);
  out.g_v = Matrix(n, r);
  out.g_s = Matrix(r, r);
  std::vector<double> sb(r), sta(r);
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = ax.row(i);
    const double* b = by.row(i);
    // S b_i and S^T a_i
    for (std::size_t p = 0; p < r; ++p) {
      double s1 = 0.0, s2 = 0.0;
      const double* srow = f.s.row(p);
      for (std::size_t q = 0; q < r; ++q) {
        s1 += srow[q] * b[q];
        s2 += f.s(q, p) * a[q];
      }
      sb[p] = s1;
      sta[p] = s2;
    }
    double res = -targets_[i];
    for (std::size_t p = 0; p < r; ++p) res += a[p] * sb[p];
    if (res == 0.0) continue;
    const double* px = data_->px().row(i);
    const double* qy = data_->py().row(i);
    for (std::size_t row = 0; row < n; ++row) {
      const double rp = res * px[row];
      const double rq = res * qy[row];
      double* gu = out.g_u.row(row);
      double* gv = out.g_v.row(row);
      for (std::size_t c = 0; c < r; ++c) {
        gu[c] += rp * sb[c];
        gv[c] += rq * sta[c];
      }
    }
    for (std::size_t p = 0; p < r; ++p) {
      const double ra = res * a[p];
      double* gs = out.g_s.row(p);
      for (std::size_t q = 0; q < r; ++q) gs[q] += ra * b[q];
    }
  }
  const double inv = 1.0 / static_cast<double>(m);
  out.g_u *= inv;
  out.g_v *= inv;
  out.g_s *= inv;
  return out;
}

namespace {

/// Direct per-sample iteration on projected features.
class FeatureCoefficientEvaluator final : public CoefficientEvaluator {
 public:
  FeatureCoefficientEvaluator(Matrix ax, Matrix by, const std::vector<double>& targets)
      : ax_(std::move(ax)), by_(std::move(by)), targets_(targets) {}

  Matrix gradient(const Matrix& s) const override {
    const std::size_t k = ax_.cols();
    const std::size_t m = ax_.rows();
    Matrix grad(k, k);
    std::vector<double> sb(k);
    for (std::size_t i = 0; i < m; ++i) {
      const double* a = ax_.row(i);
      const double* b = by_.row(i);
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* srow = s.row(p);
        for (std::size_t q = 0; q < k; ++q) acc += srow[q] * b[q];
        sb[p] = acc;
      }
      double res = -targets_[i];
      for (std::size_t p = 0; p < k; ++p) res += a[p] * sb[p];
      if (res == 0.0) continue;
      for (std::size_t p = 0; p < k; ++p) {
        const double ra = res * a[p];
        double* row = grad.row(p);
        for (std::size_t q = 0; q < k; ++q) row[q] += ra * b[q];
      }
    }
    grad *= 1.0 / static_cast<double>(m);
    return grad;
  }

 private:
  Matrix ax_, by_;
  const std::vector<double>& targets_;
};

/// Projected quadratic form: grad(S) = unvec(Hhat vec S) - bhat with
/// Hhat = K^T A K, K = kron(U, V) in the row-major vec convention.
class ProjectedGramCoefficientEvaluator final : public CoefficientEvaluator {
 public:
  ProjectedGramCoefficientEvaluator(Matrix hhat, Matrix bhat)
      : hhat_(std::move(hhat)), bhat_(std::move(bhat)) {}

  Matrix gradient(const Matrix& s) const override {
    const std::size_t k = bhat_.rows();
    Matrix grad(k, k);
    const double* sv = s.data();
    for (std::size_t a = 0; a < k * k; ++a) {
      const double* row = hhat_.row(a);
      double acc = 0.0;
      for (std::size_t b = 0; b < k * k; ++b) acc += row[b] * sv[b];
      grad.data()[a] = acc;
    }
    grad -= bhat_;
    return grad;
  }

 private:
  Matrix hhat_;  // k^2 x k^2
  Matrix bhat_;  // k x k
};

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t p = 0; p < b.rows(); ++p) {
      double* row = k.row(i * b.rows() + p);
      for (std::size_t j = 0; j < a.cols(); ++j) {
        const double aij = a(i, j);
        if (aij == 0.0) continue;
        for (std::size_t q = 0; q < b.cols(); ++q) row[j * b.cols() + q] = aij * b(p, q);
      }
    }
  return k;
}

class QuadraticWeightEvaluator final : public WeightEvaluator {
 public:
  QuadraticWeightEvaluator(const Matrix& gram, Matrix linear)
      : gram_(gram), linear_(std::move(linear)) {}

  Matrix gradient(const Matrix& w) const override {
    const std::size_t n = linear_.rows();
    Matrix g(n, n);
    const double* wv = w.data();
    for (std::size_t a = 0; a < n * n; ++a) {
      const double* row = gram_.row(a);
      double acc = 0.0;
      for (std::size_t b = 0; b < n * n; ++b) acc += row[b] * wv[b];
      g.data()[a] = acc;
    }
    g -= linear_;
    return g;
  }

 private:
  const Matrix& gram_;
  Matrix linear_;
};

}  // namespace

std::unique_ptr<CoefficientEvaluator> LegendreLeastSquares::coefficient_evaluator(
    const Matrix& u_basis, const Matrix& v_basis, std::size_t steps_hint) const {
  const std::size_t n = data_->n();
  const std::size_t k = u_basis.cols();
  if (u_basis.rows() != n || v_basis.rows() != n || v_basis.cols() != k)
    throw std::invalid_argument("coefficient_evaluator: basis shape mismatch");
  const double m = static_cast<double>(data_->count());
  const double k2 = static_cast<double>(k) * static_cast<double>(k);
  const double n2 = static_cast<double>(n) * static_cast<double>(n);

  // Recurring cost per round: direct iteration touches every sample per step;
  // the projected-Gram route pays A*K + K^T(AK) once, then k^2 x k^2 matvecs.
  // (The n^2 x n^2 Gram itself is a shared one-time table investment.)
  const double direct_flops = static_cast<double>(steps_hint) * m * 2.0 * k2;
  const double gram_flops = 2.0 * n2 * k2 * (n2 + k2) +
                            static_cast<double>(steps_hint) * 2.0 * k2 * k2;

  if (direct_flops <= gram_flops) {
    return std::make_unique<FeatureCoefficientEvaluator>(matmul(data_->px(), u_basis),
                                                         matmul(data_->py(), v_basis), targets_);
  }

  const Matrix& a = data_->gram();
  Matrix kf = kron(u_basis, v_basis);           // n^2 x k^2
  Matrix ak = matmul(a, kf);                    // n^2 x k^2
  Matrix hhat = matmul_tn(kf, ak);              // k^2 x k^2
  Matrix bw = lls_weight_gradient(Matrix(n, n), *data_, targets_);  // -B
  Matrix bhat = matmul_tn(u_basis, matmul(bw, v_basis));
  bhat *= -1.0;
  return std::make_unique<ProjectedGramCoefficientEvaluator>(std::move(hhat), std::move(bhat));
}

std::unique_ptr<WeightEvaluator> LegendreLeastSquares::weight_evaluator(
    std::size_t steps_hint) const {
  const std::size_t n = data_->n();
  const double m = static_cast<double>(data_->count());
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  const double direct_flops = static_cast<double>(steps_hint) * m * 2.0 * n2;
  const double gram_flops = static_cast<double>(steps_hint) * 2.0 * n2 * n2;
  if (direct_flops <= gram_flops) return LossModel::weight_evaluator(steps_hint);

  Matrix bw = lls_weight_gradient(Matrix(n, n), *data_, targets_);
  bw *= -1.0;
  return std::make_unique<QuadraticWeightEvaluator>(data_->gram(), std::move(bw));
}

Matrix oracle_minimizer(const LegendreLeastSquares& model) {
  if (!model.realizable_target())
    throw std::invalid_argument("oracle_minimizer: model has no realizable target");
  return *model.realizable_target();
}

Matrix oracle_minimizer(const std::vector<const LegendreLeastSquares*>& clients) {
  if (clients.empty()) throw std::invalid_argument("oracle_minimizer: no clients");
  const std::size_t n = clients.front()->dimension();
  const std::size_t n2 = n * n;

  // Averaged normal equations, assembled independently of the model code:
  // features recomputed from the raw sample points.
  Matrix a(n2, n2);
  std::vector<double> rhs(n2, 0.0);
  std::vector<double> v(n2);
  for (const LegendreLeastSquares* c : clients) {
    if (c->dimension() != n) throw std::invalid_argument("oracle_minimizer: mixed dimensions");
    const FeatureTable& d = c->data();
    const double w = 1.0 / (static_cast<double>(clients.size()) * static_cast<double>(d.count()));
    for (std::size_t i = 0; i < d.count(); ++i) {
      const std::vector<double> p = legendre_features(d.xs()[i], n, d.scaling());
      const std::vector<double> q = legendre_features(d.ys()[i], n, d.scaling());
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t s = 0; s < n; ++s) v[r * n + s] = p[r] * q[s];
      const double wf = w * c->targets()[i];
      for (std::size_t r2 = 0; r2 < n2; ++r2) {
        const double vr = v[r2];
        rhs[r2] += wf * vr;
        if (vr == 0.0) continue;
        const double wv = w * vr;
        double* row = a.row(r2);
        for (std::size_t s2 = r2; s2 < n2; ++s2) row[s2] += wv * v[s2];
      }
    }
  }
  for (std::size_t r2 = 0; r2 < n2; ++r2)
    for (std::size_t s2 = r2 + 1; s2 < n2; ++s2) a(s2, r2) = a(r2, s2);

  std::vector<double> sol = solve_spd(a, rhs);
  Matrix w(n, n, std::move(sol));
  return w;
}

FederatedProblem make_homogeneous_problem(std::size_t n, std::size_t target_rank,
                                          std::size_t sample_count, std::size_t clients,
                                          std::uint64_t seed, FeatureScaling scaling) {
  if (clients == 0) throw std::invalid_argument("make_homogeneous_problem: clients must be >= 1");
  if (target_rank == 0 || target_rank > n)
    throw std::invalid_argument("make_homogeneous_problem: bad target rank");
  if (sample_count < clients)
    throw std::invalid_argument("make_homogeneous_problem: too few samples");

  Rng root(seed);
  Rng target_rng = root.fork(1);
  Rng sample_rng = root.fork(2);
  Rng shuffle_rng = root.fork(3);

  Matrix g1 = target_rng.gaussian_matrix(n, target_rank);
  Matrix g2 = target_rng.gaussian_matrix(n, target_rank);
  Matrix w_target = matmul_nt(g1, g2);
  w_target *= 1.0 / frobenius_norm(w_target);

  std::vector<double> xs(sample_count), ys(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) {
    xs[i] = sample_rng.uniform(-1.0, 1.0);
    ys[i] = sample_rng.uniform(-1.0, 1.0);
  }

  auto full = std::make_shared<const FeatureTable>(n, xs, ys, scaling);
  std::vector<double> targets = full->evaluate_bilinear(w_target);

  const std::vector<std::size_t> perm = shuffle_rng.permutation(sample_count);

  FederatedProblem prob;
  prob.n = n;
  prob.oracle = w_target;
  const std::size_t base = sample_count / clients;
  std::size_t extra = sample_count % clients;
  std::size_t at = 0;
  for (std::size_t c = 0; c < clients; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    std::vector<double> cx(len), cy(len), cf(len);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t src = perm[at + i];
      cx[i] = xs[src];
      cy[i] = ys[src];
      cf[i] = targets[src];
    }
    at += len;
    auto table = std::make_shared<const FeatureTable>(n, std::move(cx), std::move(cy), scaling);
    prob.clients.push_back(std::make_shared<const LegendreLeastSquares>(
        std::move(table), std::move(cf), w_target));
  }
  auto global = std::make_shared<const LegendreLeastSquares>(full, targets, w_target);
  prob.oracle_loss = global->loss(w_target);
  prob.global = std::move(global);
  return prob;
}

FederatedProblem make_heterogeneous_problem(std::size_t n, std::size_t sample_count,
                                            std::size_t clients, std::uint64_t seed,
                                            FeatureScaling scaling) {
  if (clients == 0)
    throw std::invalid_argument("make_heterogeneous_problem: clients must be >= 1");
  if (sample_count == 0) throw std::invalid_argument("make_heterogeneous_problem: no samples");

  Rng root(seed);
  Rng target_rng = root.fork(1);
  Rng sample_rng = root.fork(2);

  std::vector<double> xs(sample_count), ys(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) {
    xs[i] = sample_rng.uniform(-1.0, 1.0);
    ys[i] = sample_rng.uniform(-1.0, 1.0);
  }
  auto table = std::make_shared<const FeatureTable>(n, std::move(xs), std::move(ys), scaling);

  FederatedProblem prob;
  prob.n = n;
  std::vector<std::shared_ptr<const LossModel>> members;
  std::vector<const LegendreLeastSquares*> raw;
  for (std::size_t c = 0; c < clients; ++c) {
    Matrix u = target_rng.gaussian_matrix(n, 1);
    Matrix v = target_rng.gaussian_matrix(n, 1);
    Matrix w_c = matmul_nt(u, v);
    w_c *= 1.0 / frobenius_norm(w_c);
    auto model = std::make_shared<const LegendreLeastSquares>(
        table, table->evaluate_bilinear(w_c), w_c);
    raw.push_back(model.get());
    prob.clients.push_back(model);
    members.push_back(std::move(model));
  }
  prob.global = std::make_shared<const CompositeLossModel>(members);
  prob.oracle = oracle_minimizer(raw);
  prob.oracle_loss = prob.global->loss(prob.oracle);
  return prob;
}

}  // namespace fedlrt
