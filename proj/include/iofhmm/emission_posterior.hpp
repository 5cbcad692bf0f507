#pragma once

#include <vector>

#include "iofhmm/chain_posterior.hpp"
#include "iofhmm/ep.hpp"
#include "iofhmm/model.hpp"

namespace iofhmm {

struct RowProblem {
  Index row = 0;
  std::vector<Index> support;  // non-zero columns of this row of C
  VectorXd h;
  MatrixXd Q;
};

RowProblem assemble_row_problem(Index row, const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s,
                                double v_mean);

struct RowPosterior {
  std::vector<Index> support;
  VectorXd mean;
  MatrixXd cov;
  double log_evidence = 0.0;      // log Z_c of the row (exact for gaussian priors)
  double entropy_surrogate = 0.0; // EP stand-in for -E[log p0(c)] - H(q_c) of the row
  bool converged = true;
  int sweeps = 0;
  std::string diagnostics;
  std::vector<std::pair<double, double>> site_state;  // warm start for the next solve
};

RowPosterior solve_row(const RowProblem& problem, const CPrior& prior, const EPConfig& cfg,
                       const std::vector<std::pair<double, double>>* warm_start = nullptr);

struct EmissionPosterior {
  std::vector<RowPosterior> rows;

  // Prior moments for every row (used before any data has been seen).
  static EmissionPosterior from_prior(const ModelSpec& spec);

  SparseMatrix mean_matrix(const SparsePattern& pattern) const;
  SparseMatrix variance_matrix(const SparsePattern& pattern) const;
  EmissionMoments moments(const ModelSpec& spec, const Dataset& data) const;
  bool all_converged() const;
};

// Solves all n_y row problems (optionally in parallel) for the given q_s and <v>.
EmissionPosterior update_emission(const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s, double v_mean,
                                  const EPConfig& cfg, const EmissionPosterior* previous, int threads);

// Sum over t and rows of E[(y - c (1 + s) / 2)^2] under q_c q_s.
double expected_residual(const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s,
                         const EmissionPosterior& q_c);

GammaParams update_noise(const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s,
                         const EmissionPosterior& q_c, const GammaParams& prior);

// Posterior mode of one row under a double-exponential prior, by coordinate-wise soft thresholding
// of the Gaussian-plus-Laplace objective h'c - c'Qc/2 - rate |c|.
VectorXd laplace_row_mode(const RowProblem& problem, double rate, double tol = 1e-8, int max_iter = 10000);

}  // namespace iofhmm
