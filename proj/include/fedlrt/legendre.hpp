#pragma once

#include <cstddef>
#include <vector>

namespace fedlrt {

/// Legendre polynomial features (P_0(x), ..., P_{n-1}(x)) in the standard
/// normalization P_k(1) = 1, via the three-term recurrence
/// (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}. Requires |x| <= 1.
std::vector<double> legendre_features(double x, std::size_t n);

/// Legendre features scaled to unit mean square under the uniform measure on
/// [-1, 1]: sqrt(2k+1) * P_k(x). With these features the sampled Gram
/// operator of the regression problems is close to the identity, which keeps
/// gradient descent well conditioned independently of n.
std::vector<double> legendre_features_unit(double x, std::size_t n);

enum class FeatureScaling { Standard, UnitMeanSquare };

std::vector<double> legendre_features(double x, std::size_t n, FeatureScaling scaling);

}  // namespace fedlrt
