#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "iofhmm/model.hpp"

namespace test {

using iofhmm::Index;
using iofhmm::MatrixXd;
using iofhmm::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Adaptive Gauss-Kronrod over (a, b), optionally split at interior points.
template <class F>
double integrate(F f, double a, double b, std::vector<double> splits = {}) {
  double total = 0.0;
  double lo = a;
  splits.push_back(b);
  for (double hi : splits) {
    double err = 0.0;
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 20, 1e-13, &err);
    lo = hi;
  }
  return total;
}

inline double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

struct Moments {
  double z, mean, var;
};

// Zeroth, first and second central moments of f(u) N(u; m, v) by adaptive quadrature.
template <class F>
Moments tilted_oracle(F f, double m, double v, std::vector<double> splits = {}) {
  const double sd = std::sqrt(v);
  const double lo = m - 40 * sd, hi = m + 40 * sd;
  std::vector<double> inside;
  for (double s : splits)
    if (s > lo && s < hi) inside.push_back(s);
  auto g = [&](double u) { return f(u) * normal_pdf(u, m, v); };
  const double z = integrate(g, lo, hi, inside);
  const double mean = integrate([&](double u) { return u * g(u); }, lo, hi, inside) / z;
  const double var = integrate([&](double u) { return (u - mean) * (u - mean) * g(u); }, lo, hi, inside) / z;
  return {z, mean, var};
}

inline MatrixXd random_spd(std::mt19937_64& rng, Index n, double ridge = 0.5) {
  std::normal_distribution<double> g;
  MatrixXd a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = g(rng);
  return a * a.transpose() / static_cast<double>(n) + ridge * MatrixXd::Identity(n, n);
}

inline VectorXd random_vector(std::mt19937_64& rng, Index n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace test
