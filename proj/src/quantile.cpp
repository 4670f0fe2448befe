#include <cmath>
#include <numbers>

#include "atriamap/error.hpp"
#include "atriamap/vae.hpp"

namespace atriamap {

namespace {

// Acklam's rational approximation for the lower half, relative error
// about 1.15e-9 before refinement.
double acklam_lower(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidSpec, "quantile", "p must lie in (0, 1)");
  if (p > 0.5) return -normal_quantile(1.0 - p);
  if (p == 0.5) return 0.0;
  double x = acklam_lower(p);
  // Halley step on Phi(x) - p.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

std::vector<std::vector<double>> latent_grid(std::size_t d, std::size_t k, double a, double b, std::size_t budget) {
  constexpr const char* stage = "latent-grid";
  if (d == 0) throw Error(ErrorKind::InvalidSpec, stage, "d must be >= 1");
  if (k < 2) throw Error(ErrorKind::InvalidSpec, stage, "k must be >= 2");
  if (!(a > 0.0 && a < b && b < 1.0)) throw Error(ErrorKind::InvalidSpec, stage, "bounds must satisfy 0 < a < b < 1");
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) {
    if (total > budget / k) throw Error(ErrorKind::BudgetExceeded, stage, "k^d exceeds the sample budget");
    total *= k;
  }
  std::vector<double> axis(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double u = (a * static_cast<double>(k - 1 - i) + b * static_cast<double>(i)) / static_cast<double>(k - 1);
    axis[i] = normal_quantile(u);
  }
  std::vector<std::vector<double>> out(total, std::vector<double>(d));
  for (std::size_t s = 0; s < total; ++s) {
    std::size_t rest = s;
    for (std::size_t j = d; j-- > 0;) {
      out[s][j] = axis[rest % k];
      rest /= k;
    }
  }
  return out;
}

}  // namespace atriamap
