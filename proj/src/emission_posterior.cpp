#include "iofhmm/emission_posterior.hpp"

#include <cmath>

#include "iofhmm/parallel.hpp"

namespace iofhmm {

RowProblem assemble_row_problem(Index row, const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s,
                                double v_mean) {
  RowProblem p;
  p.row = row;
  const auto support = spec.c_structure.row_support(row);
  p.support.assign(support.begin(), support.end());
  const Index k = static_cast<Index>(p.support.size());
  p.h = VectorXd::Zero(k);
  p.Q = MatrixXd::Zero(k, k);
  VectorXd on(k);
  for (Index t = 0; t < spec.n_t; ++t) {
    for (Index a = 0; a < k; ++a) on[a] = 0.5 * (1.0 + q_s.mu(p.support[static_cast<std::size_t>(a)], t));
    const double y = data.Y(row, t);
    p.h.noalias() += y * on;
    p.Q.noalias() += on * on.transpose();
    p.Q.diagonal().array() += on.array() * (1.0 - on.array());
  }
  p.h *= v_mean;
  p.Q *= v_mean;
  return p;
}

RowPosterior solve_row(const RowProblem& problem, const CPrior& prior, const EPConfig& cfg,
                       const std::vector<std::pair<double, double>>* warm_start) {
  const Index k = static_cast<Index>(problem.support.size());
  RowPosterior out;
  out.support = problem.support;
  GaussianSiteModel model{problem.h, problem.Q, {}};
  model.sites.reserve(static_cast<std::size_t>(k));
  for (Index a = 0; a < k; ++a) {
    VectorXd e = VectorXd::Unit(k, a);
    if (prior.is_gaussian())
      model.sites.push_back(Site::gaussian(std::move(e), prior.effective_mean(), prior.effective_variance()));
    else
      model.sites.push_back(Site::laplace(std::move(e), prior.rate));
  }
  const EPResult r = ep_solve(model, cfg, warm_start);
  out.mean = r.mean;
  out.cov = r.covariance;
  out.log_evidence = r.log_evidence;
  out.entropy_surrogate = r.entropy_surrogate();
  out.converged = r.converged;
  out.sweeps = r.sweeps;
  out.diagnostics = r.diagnostics;
  if (!prior.is_gaussian())
    for (const auto& s : r.sites) out.site_state.emplace_back(s.site_h, s.site_q);
  return out;
}

EmissionPosterior EmissionPosterior::from_prior(const ModelSpec& spec) {
  EmissionPosterior q;
  q.rows.resize(static_cast<std::size_t>(spec.n_y));
  const CPrior& prior = spec.hyper.c_prior;
  const double mean = prior.is_gaussian() ? prior.effective_mean() : 0.0;
  const double var = prior.is_gaussian() ? prior.effective_variance() : 2.0 / (prior.rate * prior.rate);
  for (Index r = 0; r < spec.n_y; ++r) {
    auto& row = q.rows[static_cast<std::size_t>(r)];
    const auto support = spec.c_structure.row_support(r);
    row.support.assign(support.begin(), support.end());
    const Index k = static_cast<Index>(row.support.size());
    row.mean = VectorXd::Constant(k, mean);
    row.cov = var * MatrixXd::Identity(k, k);
  }
  return q;
}

SparseMatrix EmissionPosterior::mean_matrix(const SparsePattern& pattern) const {
  SparseMatrix m = SparseMatrix::zeros(pattern);
  for (Index r = 0; r < pattern.rows(); ++r)
    m.values.segment(pattern.row_begin(r), pattern.row_nnz(r)) = rows[static_cast<std::size_t>(r)].mean;
  return m;
}

SparseMatrix EmissionPosterior::variance_matrix(const SparsePattern& pattern) const {
  SparseMatrix m = SparseMatrix::zeros(pattern);
  for (Index r = 0; r < pattern.rows(); ++r)
    m.values.segment(pattern.row_begin(r), pattern.row_nnz(r)) = rows[static_cast<std::size_t>(r)].cov.diagonal();
  return m;
}

EmissionMoments EmissionPosterior::moments(const ModelSpec& spec, const Dataset& data) const {
  EmissionMoments out{MatrixXd::Zero(spec.n_s, spec.n_s), MatrixXd::Zero(spec.n_s, spec.n_t)};
  for (Index r = 0; r < spec.n_y; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    const Index k = static_cast<Index>(row.support.size());
    const MatrixXd second = row.mean * row.mean.transpose() + row.cov;
    for (Index a = 0; a < k; ++a) {
      const Index ja = row.support[static_cast<std::size_t>(a)];
      for (Index b = 0; b < k; ++b) out.gram(ja, row.support[static_cast<std::size_t>(b)]) += second(a, b);
      out.cty.row(ja).noalias() += row.mean[a] * data.Y.row(r);
    }
  }
  return out;
}

bool EmissionPosterior::all_converged() const {
  for (const auto& r : rows)
    if (!r.converged) return false;
  return true;
}

EmissionPosterior update_emission(const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s, double v_mean,
                                  const EPConfig& cfg, const EmissionPosterior* previous, int threads) {
  EmissionPosterior out;
  out.rows.resize(static_cast<std::size_t>(spec.n_y));
  parallel_for(static_cast<std::size_t>(spec.n_y), threads, [&](std::size_t r) {
    const RowProblem problem = assemble_row_problem(static_cast<Index>(r), spec, data, q_s, v_mean);
    const std::vector<std::pair<double, double>>* warm = nullptr;
    if (previous && r < previous->rows.size() && !previous->rows[r].site_state.empty()) warm = &previous->rows[r].site_state;
    out.rows[r] = solve_row(problem, spec.hyper.c_prior, cfg, warm);
  });
  return out;
}

double expected_residual(const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s,
                         const EmissionPosterior& q_c) {
  double total = 0.0;
  for (Index r = 0; r < spec.n_y; ++r) {
    const auto& row = q_c.rows[static_cast<std::size_t>(r)];
    const Index k = static_cast<Index>(row.support.size());
    VectorXd on(k);
    const VectorXd second_diag = row.mean.array().square().matrix() + row.cov.diagonal();
    for (Index t = 0; t < spec.n_t; ++t) {
      for (Index a = 0; a < k; ++a) on[a] = 0.5 * (1.0 + q_s.mu(row.support[static_cast<std::size_t>(a)], t));
      const double y = data.Y(r, t);
      const double fit = row.mean.dot(on);
      const double bern = (second_diag.array() * on.array() * (1.0 - on.array())).sum();
      total += (y - fit) * (y - fit) + on.dot(row.cov * on) + bern;
    }
  }
  return total;
}

GammaParams update_noise(const ModelSpec& spec, const Dataset& data, const ChainPosterior& q_s,
                         const EmissionPosterior& q_c, const GammaParams& prior) {
  const double residual = expected_residual(spec, data, q_s, q_c);
  if (!(residual >= 0.0)) throw ConvergenceError("expected residual is negative or not finite");
  return {prior.shape + 0.5 * static_cast<double>(spec.n_y * spec.n_t), prior.rate + 0.5 * residual};
}

VectorXd laplace_row_mode(const RowProblem& problem, double rate, double tol, int max_iter) {
  const Index k = static_cast<Index>(problem.support.size());
  VectorXd c = VectorXd::Zero(k);
  for (int it = 0; it < max_iter; ++it) {
    double change = 0.0;
    for (Index j = 0; j < k; ++j) {
      const double qjj = problem.Q(j, j);
      double next = 0.0;
      if (qjj > 0.0) {
        const double partial = problem.h[j] - problem.Q.row(j).dot(c) + qjj * c[j];
        const double shrunk = std::max(0.0, std::abs(partial) - rate);
        next = std::copysign(shrunk, partial) / qjj;
      }
      change = std::max(change, std::abs(next - c[j]));
      c[j] = next;
    }
    if (change < tol) break;
  }
  return c;
}

}  // namespace iofhmm
