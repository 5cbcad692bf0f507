#include "iofhmm/quadrature.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace iofhmm {

GaussHermite::GaussHermite(int n) {
  if (n < 1) throw std::invalid_argument("Gauss-Hermite rule needs at least one node");
  constexpr double kEps = 1e-15;
  constexpr double kPiToMinusQuarter = 0.7511255444649425;
  const auto un = static_cast<std::size_t>(n);
  std::vector<double> x(un), w(un);
  const int half = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = kPiToMinusQuarter;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double previous = z;
      z = previous - p1 / pp;
      if (std::abs(z - previous) <= kEps * std::max(1.0, std::abs(z))) break;
    }
    const auto a = static_cast<std::size_t>(i);
    x[a] = z;
    x[un - 1 - a] = -z;
    w[a] = 2.0 / (pp * pp);
    w[un - 1 - a] = w[a];
  }
  // Physicists' rule for exp(-x^2) -> standard normal: node * sqrt(2), weight / sqrt(pi).
  const double inv_sqrt_pi = 0.5641895835477562869;
  nodes_.resize(un);
  weights_.resize(un);
  log_weights_.resize(un);
  for (std::size_t k = 0; k < un; ++k) {
    nodes_[k] = x[un - 1 - k] * std::sqrt(2.0);
    weights_[k] = w[un - 1 - k] * inv_sqrt_pi;
    log_weights_[k] = std::log(weights_[k]);
  }
}

const GaussHermite& gauss_hermite_rule(int n) {
  static std::mutex guard;
  static std::map<int, std::unique_ptr<GaussHermite>> cache;
  std::lock_guard lock(guard);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussHermite>(n);
  return *slot;
}

}  // namespace iofhmm
