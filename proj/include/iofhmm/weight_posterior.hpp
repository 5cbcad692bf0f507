#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iofhmm/chain_posterior.hpp"
#include "iofhmm/ep.hpp"
#include "iofhmm/model.hpp"

namespace iofhmm {

// eps[i][t](a, b) = q(s_t = a, s_{t+1} = b) for chain i (state index 0 = -1, 1 = +1).
using ExpectedTransitionCounts = std::vector<std::vector<Eigen::Matrix2d>>;

ExpectedTransitionCounts expected_counts(const ChainPosterior& q_s);

// Gaussian posterior over (w, b) of one sig direction, in that coordinate order.
struct GaussianWeights {
  VectorXd mean;
  MatrixXd cov;
  double entropy_surrogate = 0.0;
  bool converged = true;
  std::string diagnostics;
  std::vector<std::pair<double, double>> site_state;
};

struct ChainWeightPosterior {
  bool gaussian = false;  // true for sig (EP), false for point estimates
  ChainWeights point;
  GaussianWeights plus;
  GaussianWeights minus;

  // Posterior mean (sig) or the estimate itself.
  ChainWeights mean_weights() const;
};

struct WeightPosterior {
  std::vector<ChainWeightPosterior> chains;

  static WeightPosterior initial(const ModelSpec& spec);
  WeightCollection means() const;
};

std::pair<GaussianWeights, GaussianWeights> infer_weights_sig(const std::vector<Eigen::Matrix2d>& eps,
                                                              const Dataset& data, const Hyperparameters& hyper,
                                                              const EPConfig& cfg,
                                                              const ChainWeightPosterior* previous = nullptr);

// Penalised log-likelihood of one chain's weights given expected transition counts.
// Parameters: tp-scaled -> log(w+), log(w-); tp-exp -> w+, w-, b+, b-.
class TpObjective {
 public:
  TpObjective(TransitionFamily family, const std::vector<Eigen::Matrix2d>& eps, const MatrixXd& X,
              const VectorXd& delta, const Hyperparameters& hyper);

  Index dim() const;
  // Full objective including the prior (the L1 part for tp-exp included).
  double value(const VectorXd& params) const;
  // Smooth part and its gradient (tp-exp: excludes the L1 weight penalty).
  double smooth_value_and_gradient(const VectorXd& params, VectorXd* grad) const;
  // Gradient of value() where it is differentiable.
  VectorXd gradient(const VectorXd& params) const;

  ChainWeights to_weights(const VectorXd& params) const;
  VectorXd from_weights(const ChainWeights& w) const;
  TransitionFamily family() const { return family_; }
  double l1_rate() const { return hyper_.w_prior.rate; }

 private:
  TransitionFamily family_;
  std::vector<Eigen::Matrix2d> eps_;
  MatrixXd X_;
  VectorXd delta_;
  Hyperparameters hyper_;
  Index n_x_;
};

struct OptimizerConfig {
  double grad_tol = 1e-6;
  int max_iter = 500;
  int max_restarts = 5;
  std::uint64_t seed = 0;
};

struct OptimizerReport {
  double value = 0.0;
  int iterations = 0;
  int restarts = 0;
  bool converged = false;
};

ChainWeights estimate_weights_tp(const std::vector<Eigen::Matrix2d>& eps, const Dataset& data, TransitionFamily family,
                                 const Hyperparameters& hyper, const ChainWeights& start, const OptimizerConfig& cfg,
                                 OptimizerReport* report = nullptr);

// <log p(s_{t+1} | s_t)> tables for one chain under its weight posterior.
EdgePotentials expected_log_transitions(const ChainWeightPosterior& w, const Dataset& data, TransitionFamily family,
                                        double b0, const EPConfig& cfg);

}  // namespace iofhmm
