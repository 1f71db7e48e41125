#include "fedlrt/linalg.hpp"

#include <algorithm>
#include <numeric>

#include "fedlrt/rng.hpp"

namespace fedlrt {

namespace {
constexpr double kPivotTol = 1e-12;

double column_norm_below(const Matrix& a, std::size_t col, std::size_t from) {
  double s = 0.0;
  for (std::size_t i = from; i < a.rows(); ++i) s += a(i, col) * a(i, col);
  return std::sqrt(s);
}
}  // namespace

QrThinResult qr_thin(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  if (m < k) throw std::invalid_argument("qr_thin: requires rows >= cols");
  if (k == 0) throw std::invalid_argument("qr_thin: empty matrix");
  require_finite(a, "qr_thin");

  const double scale = frobenius_norm(a);

  // Householder vectors are stored in-place below the diagonal of the work
  // copy; R accumulates on and above it.
  Matrix work = a;
  std::vector<std::vector<double>> reflectors;
  reflectors.reserve(k);

  for (std::size_t j = 0; j < k; ++j) {
    const double norm_x = column_norm_below(work, j, j);
    std::vector<double> v(m - j, 0.0);
    if (norm_x > 0.0) {
      for (std::size_t i = j; i < m; ++i) v[i - j] = work(i, j);
      const double sign = v[0] >= 0.0 ? 1.0 : -1.0;
      v[0] += sign * norm_x;
      double vn = 0.0;
      for (double x : v) vn += x * x;
      vn = std::sqrt(vn);
      if (vn > 0.0) {
        for (double& x : v) x /= vn;
        for (std::size_t col = j; col < k; ++col) {
          double d = 0.0;
          for (std::size_t i = j; i < m; ++i) d += v[i - j] * work(i, col);
          d *= 2.0;
          for (std::size_t i = j; i < m; ++i) work(i, col) -= d * v[i - j];
        }
      }
    }
    reflectors.push_back(std::move(v));
  }

  QrThinResult out;
  out.r = Matrix(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) out.r(i, j) = work(i, j);

  // Q = H_1 ... H_k [e_1 .. e_k]
  out.q = Matrix(m, k);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(m, 0.0);
    col[j] = 1.0;
    for (std::size_t h = k; h-- > 0;) {
      const auto& v = reflectors[h];
      double d = 0.0;
      for (std::size_t i = h; i < m; ++i) d += v[i - h] * col[i];
      d *= 2.0;
      for (std::size_t i = h; i < m; ++i) col[i] -= d * v[i - h];
    }
    for (std::size_t i = 0; i < m; ++i) out.q(i, j) = col[i];
  }

  // Fix signs so diag(R) >= 0.
  for (std::size_t j = 0; j < k; ++j) {
    if (out.r(j, j) < 0.0) {
      for (std::size_t c = j; c < k; ++c) out.r(j, c) = -out.r(j, c);
      for (std::size_t i = 0; i < m; ++i) out.q(i, j) = -out.q(i, j);
    }
  }

  for (std::size_t j = 0; j < k; ++j)
    if (std::fabs(out.r(j, j)) < kPivotTol * scale) out.deficient.push_back(j);

  return out;
}

SvdResult svd_square(const Matrix& a) {
  const std::size_t k = a.rows();
  if (k == 0 || a.cols() != k) throw std::invalid_argument("svd_square: requires square input");
  require_finite(a, "svd_square");

  // One-sided Jacobi: rotate column pairs of W = A V until mutually
  // orthogonal; then W = P diag(sigma).
  Matrix w = a;
  Matrix v = Matrix::identity(k);
  const double eps = 1e-15;
  const int max_sweeps = 60;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          alpha += w(t, i) * w(t, i);
          beta += w(t, j) * w(t, j);
          gamma += w(t, i) * w(t, j);
        }
        if (std::fabs(gamma) <= eps * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t_ = (zeta >= 0.0 ? 1.0 : -1.0) /
                          (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t_ * t_);
        const double s = c * t_;
        for (std::size_t t = 0; t < k; ++t) {
          const double wi = w(t, i), wj = w(t, j);
          w(t, i) = c * wi - s * wj;
          w(t, j) = s * wi + c * wj;
          const double vi = v(t, i), vj = v(t, j);
          v(t, i) = c * vi - s * vj;
          v(t, j) = s * vi + c * vj;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(k);
  for (std::size_t j = 0; j < k; ++j) sigma[j] = column_norm_below(w, j, 0);

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out;
  out.p = Matrix(k, k);
  out.q = Matrix(k, k);
  out.sigma.resize(k);
  const double scale = frobenius_norm(a);
  std::vector<std::size_t> null_cols;
  for (std::size_t jj = 0; jj < k; ++jj) {
    const std::size_t src = order[jj];
    out.sigma[jj] = sigma[src];
    for (std::size_t i = 0; i < k; ++i) out.q(i, jj) = v(i, src);
    if (sigma[src] > kPivotTol * scale && sigma[src] > 0.0) {
      for (std::size_t i = 0; i < k; ++i) out.p(i, jj) = w(i, src) / sigma[src];
    } else {
      null_cols.push_back(jj);
    }
  }
  if (!null_cols.empty()) {
    // Left vectors for (near) zero singular values carry no constraint from A
    // beyond orthonormality; fill deterministically.
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < k; ++j)
      if (!std::binary_search(null_cols.begin(), null_cols.end(), j)) keep.push_back(j);
    Matrix base(k, keep.size());
    for (std::size_t c = 0; c < keep.size(); ++c)
      for (std::size_t i = 0; i < k; ++i) base(i, c) = out.p(i, keep[c]);
    Matrix fill = complete_orthonormal_columns(base, null_cols.size());
    for (std::size_t c = 0; c < null_cols.size(); ++c)
      for (std::size_t i = 0; i < k; ++i) out.p(i, null_cols[c]) = fill(i, c);
  }

  // Deterministic column signs: the largest-magnitude entry of each left
  // vector is made positive.
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (std::fabs(out.p(i, j)) > best) {
        best = std::fabs(out.p(i, j));
        arg = i;
      }
    }
    if (out.p(arg, j) < 0.0) {
      for (std::size_t i = 0; i < k; ++i) {
        out.p(i, j) = -out.p(i, j);
        out.q(i, j) = -out.q(i, j);
      }
    }
  }
  return out;
}

double spectral_norm(const std::function<Matrix(const Matrix&)>& apply,
                     std::size_t probe_rows, std::size_t probe_cols,
                     std::size_t iters, std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("spectral_norm: iters must be >= 1");
  Rng rng(seed);
  Matrix x = rng.gaussian_matrix(probe_rows, probe_cols);
  double nx = frobenius_norm(x);
  if (nx == 0.0) {
    x(0, 0) = 1.0;
    nx = 1.0;
  }
  x *= 1.0 / nx;

  double estimate = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Matrix y = apply(x);
    const double rayleigh = std::fabs(dot(x, y));
    const double ny = frobenius_norm(y);
    if (ny == 0.0) return 0.0;
    x = y * (1.0 / ny);
    if (it > 0 && std::fabs(rayleigh - estimate) <= 1e-8 * std::max(1.0, rayleigh)) {
      return rayleigh;
    }
    estimate = rayleigh;
  }
  return estimate;
}

std::vector<double> solve_spd(const Matrix& a, const std::vector<double>& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw std::invalid_argument("solve_spd: shape mismatch");
  Matrix l(n, n);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::fabs(a(i, i)));
  double min_pivot = max_diag;

  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || d < 1e-14 * max_diag) {
      const double cond = max_diag / std::max(d, 1e-300);
      throw SingularMatrixError("solve_spd: matrix not positive definite", cond);
    }
    min_pivot = std::min(min_pivot, d);
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

Matrix complete_orthonormal_columns(const Matrix& basis, std::size_t count) {
  const std::size_t n = basis.rows();
  if (basis.cols() + count > n)
    throw std::invalid_argument("complete_orthonormal_columns: too many columns requested");

  Matrix out(n, count);
  std::size_t produced = 0;
  std::vector<double> cand(n);
  for (std::size_t e = 0; e < n && produced < count; ++e) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[e] = 1.0;
    // Two orthogonalisation passes against the basis and the accepted fill.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < basis.cols(); ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += basis(i, c) * cand[i];
        for (std::size_t i = 0; i < n; ++i) cand[i] -= d * basis(i, c);
      }
      for (std::size_t c = 0; c < produced; ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += out(i, c) * cand[i];
        for (std::size_t i = 0; i < n; ++i) cand[i] -= d * out(i, c);
      }
    }
    double nn = 0.0;
    for (double xv : cand) nn += xv * xv;
    nn = std::sqrt(nn);
    if (nn < 1e-8) continue;  // e_j (numerically) inside the span
    for (std::size_t i = 0; i < n; ++i) out(i, produced) = cand[i] / nn;
    ++produced;
  }
  if (produced < count)
    throw std::runtime_error("complete_orthonormal_columns: span exhausted the space");
  return out;
}

}  // namespace fedlrt
