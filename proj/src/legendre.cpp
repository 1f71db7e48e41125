#include "fedlrt/legendre.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlrt {

std::vector<double> legendre_features(double x, std::size_t n) {
  if (n == 0) throw std::invalid_argument("legendre_features: n must be >= 1");
  if (std::fabs(x) > 1.0) throw std::invalid_argument("legendre_features: |x| must be <= 1");
  std::vector<double> p(n);
  p[0] = 1.0;
  if (n > 1) p[1] = x;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double kk = static_cast<double>(k);
    p[k + 1] = ((2.0 * kk + 1.0) * x * p[k] - kk * p[k - 1]) / (kk + 1.0);
  }
  return p;
}

std::vector<double> legendre_features_unit(double x, std::size_t n) {
  std::vector<double> p = legendre_features(x, n);
  for (std::size_t k = 0; k < n; ++k) p[k] *= std::sqrt(2.0 * static_cast<double>(k) + 1.0);
  return p;
}

std::vector<double> legendre_features(double x, std::size_t n, FeatureScaling scaling) {
  return scaling == FeatureScaling::Standard ? legendre_features(x, n)
                                             : legendre_features_unit(x, n);
}

}  // namespace fedlrt
