#pragma once

#include <cmath>
#include <vector>

namespace iofhmm {

// Gauss-Hermite rule rescaled for expectations under a standard normal:
// E[f(Z)] ~= sum_k weight[k] * f(node[k]).
class GaussHermite {
 public:
  explicit GaussHermite(int n);

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& log_weights() const { return log_weights_; }

  template <class F>
  double expect(F&& f, double mean, double variance) const {
    const double sd = std::sqrt(variance);
    double acc = 0.0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) acc += weights_[k] * f(mean + sd * nodes_[k]);
    return acc;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
};

// Shared, lazily built rule of the requested size.
const GaussHermite& gauss_hermite_rule(int n);

}  // namespace iofhmm
