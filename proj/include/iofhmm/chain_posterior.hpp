#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "iofhmm/model.hpp"

namespace iofhmm {

// Row 0 holds the log potential of state -1, row 1 of state +1; one column per time.
using NodePotentials = Eigen::Matrix<double, 2, Eigen::Dynamic>;
// Per step, entry (a, b) is the log potential of moving from state a to state b (0 = -1, 1 = +1).
using EdgePotentials = std::vector<Eigen::Matrix2d>;

struct ChainMarginals {
  VectorXd mu;                         // E[s_t]
  std::vector<Eigen::Matrix2d> pair;   // q(s_t, s_{t+1})
  double log_z = 0.0;
};

// Exact marginals of the chain distribution proportional to prod exp(node) prod exp(edge).
ChainMarginals forward_backward(const NodePotentials& node, const EdgePotentials& edge, bool clamp_start);

// Entropy of a chain distribution from its singleton and pairwise marginals.
double chain_entropy(const ChainMarginals& m);

struct ChainPosterior {
  MatrixXd mu;                                      // n_s x n_t
  std::vector<std::vector<Eigen::Matrix2d>> pair;   // [chain][step]
  VectorXd log_z;

  Index n_s() const { return mu.rows(); }
  Index n_t() const { return mu.cols(); }
  ChainMarginals chain(Index i) const;
  void set_chain(Index i, ChainMarginals m);
  double entropy() const;

  // Uninformative start: mu = 0 with mu_1 = -1 when clamped; independent pairs.
  static ChainPosterior initial(Index n_s, Index n_t, bool clamp_start, double jitter, std::uint64_t seed);
  // Point mass on a known path.
  static ChainPosterior from_states(const StateMatrix& S);
};

// First and second moments of C needed by the chain updates.
struct EmissionMoments {
  MatrixXd gram;  // <C'C>, n_s x n_s
  MatrixXd cty;   // <C>' Y, n_s x n_t
};

NodePotentials build_node_potentials(const EmissionMoments& moments, double v_mean, const MatrixXd& mu, Index chain);

struct ChainSweepConfig {
  double tol = 1e-6;
  int max_sweeps = 50;
  bool clamp_start = true;
  bool randomize_order = false;
  std::uint64_t seed = 0;
};

struct ChainSweepReport {
  int sweeps = 0;
  double max_change = 0.0;
  bool converged = false;
};

// Gauss-Seidel structured mean field over the chains; edge potentials stay fixed.
ChainSweepReport sweep_chains(ChainPosterior& q_s, const EmissionMoments& moments, double v_mean,
                              const std::vector<EdgePotentials>& edges, const ChainSweepConfig& cfg);

}  // namespace iofhmm
