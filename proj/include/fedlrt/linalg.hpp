#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedlrt/matrix.hpp"

namespace fedlrt {

struct QrResult {
  Matrix q;  // m x k, orthonormal columns
  Matrix r;  // k x k, upper triangular, diag(R) >= 0
};

/// Thin Householder QR of an m x k matrix, m >= k. Sign convention: the
/// diagonal of R is non-negative. Columns whose pivot |R_jj| falls below
/// 1e-12 * ||A||_F are reported in `deficient`; the corresponding Q columns
/// are still orthonormal (implicit Householder completion) but carry no
/// information about A.
struct QrThinResult {
  Matrix q;
  Matrix r;
  std::vector<std::size_t> deficient;
};
QrThinResult qr_thin(const Matrix& a);

struct SvdResult {
  Matrix p;                   // k x k, orthonormal
  std::vector<double> sigma;  // descending, >= 0
  Matrix q;                   // k x k, orthonormal
};

/// Full SVD of a square k x k matrix via one-sided Jacobi:
/// A = P diag(sigma) Q^T. Column signs are fixed deterministically.
SvdResult svd_square(const Matrix& a);

/// Power-iteration estimate of the largest singular value of a self-adjoint
/// linear map on matrices of the given shape. Deterministic for a given seed;
/// stops early once successive Rayleigh quotients agree to 1e-8 (relative).
double spectral_norm(const std::function<Matrix(const Matrix&)>& apply,
                     std::size_t probe_rows, std::size_t probe_cols,
                     std::size_t iters, std::uint64_t seed);

/// Error for linear solves on (numerically) singular systems.
class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& what, double condition_estimate)
      : std::runtime_error(what + " (condition estimate " +
                           std::to_string(condition_estimate) + ")"),
        condition_estimate_(condition_estimate) {}
  double condition_estimate() const { return condition_estimate_; }

 private:
  double condition_estimate_;
};

/// Solves A x = b for symmetric positive definite A (dense Cholesky).
std::vector<double> solve_spd(const Matrix& a, const std::vector<double>& b);

/// Appends `count` orthonormal columns to `basis` (n x p, orthonormal),
/// chosen deterministically by re-orthonormalising canonical basis vectors.
Matrix complete_orthonormal_columns(const Matrix& basis, std::size_t count);

}  // namespace fedlrt
