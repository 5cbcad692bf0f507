#include "iofhmm/special.hpp"

#include <cmath>
#include <limits>

namespace iofhmm {

namespace {
constexpr double kInvSqrtPi = 0.5641895835477562869;
constexpr double kSqrt2OverPi = 0.7978845608028653559;
constexpr double kInvSqrt2 = 0.7071067811865475244;
}  // namespace

double erfcx(double x) {
  if (x < 0.0) {
    if (x < -26.0) return std::numeric_limits<double>::infinity();
    return 2.0 * std::exp(x * x) - erfcx(-x);
  }
  if (x < 5.0) return std::exp(x * x) * std::erfc(x);
  // Continued fraction for the upper tail, evaluated bottom-up.
  double t = x;
  for (int k = 80; k >= 1; --k) t = x + 0.5 * k / t;
  return kInvSqrtPi / t;
}

double log_half_erfcx(double x) { return std::log(0.5 * erfcx(x)); }

double log_normal_cdf(double x) {
  if (x < 0.0) return log_half_erfcx(-x * kInvSqrt2) - 0.5 * x * x;
  return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
}

double normal_hazard_ratio(double x) {
  if (x > 30.0) return kSqrt2OverPi * 0.5 * std::exp(-0.5 * x * x);
  return kSqrt2OverPi / erfcx(-x * kInvSqrt2);
}

}  // namespace iofhmm
