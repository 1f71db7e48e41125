#include "fedlrt/low_rank.hpp"

#include <algorithm>
#include <cmath>

#include "fedlrt/rng.hpp"

namespace fedlrt {

LowRankFactors init_factors(std::size_t n, std::size_t r0, std::uint64_t seed, double scale) {
  if (r0 < 1 || r0 > n) throw std::invalid_argument("init_factors: requires 1 <= r0 <= n");
  if (!(scale > 0.0)) throw std::invalid_argument("init_factors: scale must be positive");
  Rng rng(seed);
  Matrix gu = rng.gaussian_matrix(n, r0);
  Matrix gv = rng.gaussian_matrix(n, r0);
  LowRankFactors f;
  f.u = qr_thin(gu).q;
  f.v = qr_thin(gv).q;
  f.s = Matrix(r0, r0);
  for (std::size_t i = 0; i < r0; ++i) f.s(i, i) = scale / static_cast<double>(i + 1);
  return f;
}

BasisAugmentation basis_augment(const Matrix& u, const Matrix& g) {
  const std::size_t n = u.rows();
  const std::size_t r = u.cols();
  if (g.rows() != n || g.cols() != r)
    throw std::invalid_argument("basis_augment: gradient shape mismatch");
  if (r > n) throw std::invalid_argument("basis_augment: rank exceeds dimension");
  if (orthonormality_defect(u) > 1e-8)
    throw ContractViolation("basis_augment: basis is not orthonormal");
  require_finite(g, "basis_augment");

  const std::size_t width = std::min(r, n - r);
  if (width == 0) {
    BasisAugmentation out;
    out.new_block = Matrix(n, 0);
    out.augmented = u;
    return out;
  }

  // Orthonormalising [U | G] never touches the leading orthonormal block, so
  // only the residual of G outside span(U) is factorised. Two projection
  // passes keep U^T U_bar at roundoff level.
  Matrix resid = g;
  for (int pass = 0; pass < 2; ++pass) {
    Matrix coef = matmul_tn(u, resid);
    resid -= matmul(u, coef);
  }

  QrThinResult qr = qr_thin(resid);

  // Keep the informative directions (good pivots) in column order; pad up to
  // `width` with a deterministic completion orthogonal to everything kept.
  std::vector<bool> bad(r, false);
  for (std::size_t j : qr.deficient) bad[j] = true;
  Matrix new_block(n, width);
  std::size_t taken = 0;
  for (std::size_t j = 0; j < r && taken < width; ++j) {
    if (bad[j]) continue;
    for (std::size_t i = 0; i < n; ++i) new_block(i, taken) = qr.q(i, j);
    ++taken;
  }
  if (taken < width) {
    Matrix base(n, r + taken);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < r; ++c) base(i, c) = u(i, c);
      for (std::size_t c = 0; c < taken; ++c) base(i, r + c) = new_block(i, c);
    }
    Matrix fill = complete_orthonormal_columns(base, width - taken);
    for (std::size_t c = taken; c < width; ++c)
      for (std::size_t i = 0; i < n; ++i) new_block(i, c) = fill(i, c - taken);
  }

  BasisAugmentation out;
  out.new_block = new_block;
  out.augmented = hcat(u, new_block);
  return out;
}

Matrix assemble_augmented_coefficients(const Matrix& s) {
  const std::size_t r = s.rows();
  if (s.cols() != r) throw std::invalid_argument("assemble_augmented_coefficients: S not square");
  Matrix out(2 * r, 2 * r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) out(i, j) = s(i, j);
  return out;
}

Matrix aggregate_mean(const std::vector<Matrix>& matrices) {
  if (matrices.empty()) throw std::invalid_argument("aggregate_mean: empty client list");
  Matrix acc = matrices.front();
  for (std::size_t c = 1; c < matrices.size(); ++c) {
    if (!matrices[c].same_shape(acc))
      throw std::invalid_argument("aggregate_mean: shape mismatch between clients");
    acc += matrices[c];
  }
  acc *= 1.0 / static_cast<double>(matrices.size());
  return acc;
}

TruncationResult truncate(const AugmentedState& state, const TruncationConfig& cfg) {
  if (cfg.tau < 0.0 || cfg.tau >= 1.0) throw std::invalid_argument("truncate: requires 0 <= tau < 1");
  if (cfg.r_min < 1) throw std::invalid_argument("truncate: requires r_min >= 1");
  const std::size_t k = state.s_aug.rows();

  SvdResult svd = svd_square(state.s_aug);

  std::vector<double> tail(k + 1, 0.0);
  for (std::size_t i = k; i-- > 0;)
    tail[i] = tail[i + 1] + svd.sigma[i] * svd.sigma[i];
  const double total = std::sqrt(tail[0]);
  const double threshold = cfg.tau * total;

  TruncationResult out;
  out.threshold = threshold;
  out.spectrum = svd.sigma;

  std::size_t r1 = k;
  for (std::size_t rp = 0; rp <= k; ++rp) {
    const double tn = std::sqrt(tail[rp]);
    if (tn < threshold || tn == 0.0) {
      r1 = rp;
      break;
    }
  }

  std::size_t cap = k;
  if (cfg.r_max > 0) cap = std::min(cap, cfg.r_max);
  r1 = std::max(cfg.r_min, std::min(r1, cap));

  out.degenerate = (total == 0.0);

  out.factors.u = matmul(state.u_aug, left_columns(svd.p, r1));
  out.factors.v = matmul(state.v_aug, left_columns(svd.q, r1));
  out.factors.s = Matrix(r1, r1);
  for (std::size_t i = 0; i < r1; ++i)
    out.factors.s(i, i) = out.degenerate ? 1e-12 : svd.sigma[i];
  return out;
}

Matrix reconstruct(const LowRankFactors& f) {
  return matmul(matmul(f.u, f.s), transpose(f.v));
}

AugmentedState augment_state(const LowRankFactors& f, const Matrix& g_u, const Matrix& g_v) {
  AugmentedState st;
  st.r = f.rank();
  st.u_aug = basis_augment(f.u, g_u).augmented;
  st.v_aug = basis_augment(f.v, g_v).augmented;
  const std::size_t k = st.u_aug.cols();
  if (k == 2 * st.r) {
    st.s_aug = assemble_augmented_coefficients(f.s);
  } else {
    st.s_aug = Matrix(k, k);
    for (std::size_t i = 0; i < st.r; ++i)
      for (std::size_t j = 0; j < st.r; ++j) st.s_aug(i, j) = f.s(i, j);
  }
  return st;
}

}  // namespace fedlrt
