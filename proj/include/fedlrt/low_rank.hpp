#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedlrt/linalg.hpp"
#include "fedlrt/matrix.hpp"

namespace fedlrt {

/// Thrown when a precondition on factor state (e.g. orthonormality) fails.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Rank-r factorization W = U S V^T with orthonormal U, V (n x r).
struct LowRankFactors {
  Matrix u;
  Matrix s;
  Matrix v;

  std::size_t n() const { return u.rows(); }
  std::size_t rank() const { return u.cols(); }
};

/// Shared augmented state for one aggregation round: bases [U | Ubar],
/// [V | Vbar] and the block coefficient matrix.
struct AugmentedState {
  Matrix u_aug;  // n x k, first r columns are the source U
  Matrix v_aug;  // n x k
  Matrix s_aug;  // k x k, [[S, 0], [0, 0]] at assembly time
  std::size_t r = 0;  // pre-augmentation rank
};

struct TruncationConfig {
  double tau = 0.1;
  std::size_t r_min = 1;
  std::size_t r_max = 0;  // 0 = no cap beyond the matrix dimension
};

struct TruncationResult {
  LowRankFactors factors;
  double threshold = 0.0;        // the realised cut level (tau * ||sigma||_2)
  bool degenerate = false;       // all singular values were zero
  std::vector<double> spectrum;  // full sigma of the aggregated coefficients
};

/// Seeded random factors: U, V are Q-factors of Gaussian matrices and
/// S = scale * diag(1, 1/2, ..., 1/r0).
LowRankFactors init_factors(std::size_t n, std::size_t r0, std::uint64_t seed,
                            double scale = 1.0);

/// Extends orthonormal U (n x r) with the orthonormalised component of G
/// outside span(U). Returns the full augmented basis [U | U_bar] together
/// with the new block U_bar. Rank-deficient residual columns are completed
/// deterministically. The new block has min(r, n - r) columns, so the
/// augmented basis is n x 2r whenever 2r <= n and fills the whole space
/// otherwise.
struct BasisAugmentation {
  Matrix augmented;  // n x (r + w), w = min(r, n - r)
  Matrix new_block;  // n x w
};
BasisAugmentation basis_augment(const Matrix& u, const Matrix& g);

/// [[S, 0], [0, 0]] of size 2r x 2r.
Matrix assemble_augmented_coefficients(const Matrix& s);

/// Entrywise mean, folded in ascending client order.
Matrix aggregate_mean(const std::vector<Matrix>& matrices);

/// Rank truncation of the aggregated augmented coefficients: SVD of s_aug,
/// threshold tau * ||sigma||_2, discard the smallest tail whose norm stays
/// below it, clamp the new rank to [r_min, min(r_max, k)].
TruncationResult truncate(const AugmentedState& state, const TruncationConfig& cfg);

/// U S V^T as a dense matrix (metrics and tests only).
Matrix reconstruct(const LowRankFactors& f);

/// Convenience: builds the AugmentedState for given factors and basis
/// gradients (augment both sides + assemble coefficients).
AugmentedState augment_state(const LowRankFactors& f, const Matrix& g_u, const Matrix& g_v);

}  // namespace fedlrt
