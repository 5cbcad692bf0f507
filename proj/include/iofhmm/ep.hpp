#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iofhmm/model.hpp"
#include "iofhmm/quadrature.hpp"

namespace iofhmm {

enum class SiteKind { gaussian_prior, laplace_prior, exponential_prior, soft_logistic };

// One non-Gaussian (or Gaussian) factor acting on the scalar projection u = a . z.
struct Site {
  VectorXd projection;
  SiteKind kind = SiteKind::gaussian_prior;
  double mean = 0.0;      // gaussian_prior
  double variance = 1.0;  // gaussian_prior
  double rate = 1.0;      // laplace_prior, exponential_prior
  double eps_one = 0.0;   // soft_logistic: exponent of sigma(u)
  double eps_zero = 0.0;  // soft_logistic: exponent of 1 - sigma(u)
  // Natural parameters of the Gaussian site approximation exp(site_h u - site_q u^2 / 2).
  double site_h = 0.0;
  double site_q = 0.0;

  static Site gaussian(VectorXd a, double mean, double variance);
  static Site laplace(VectorXd a, double rate);
  static Site exponential(VectorXd a, double rate);
  static Site soft_logistic(VectorXd a, double eps_one, double eps_zero);

  // log of the true site function at u.
  double log_value(double u) const;
};

// exp(base_h . z - z' base_Q z / 2) times the product of the sites.
struct GaussianSiteModel {
  VectorXd base_h;
  MatrixXd base_Q;
  std::vector<Site> sites;

  Index dim() const { return base_h.size(); }
  void validate() const;
};

struct EPConfig {
  double damping = 0.8;  // step size on site naturals; 1 = undamped
  double fraction = 1.0; // power-EP exponent
  int max_sweeps = 200;
  double tol = 1e-8;
  int quadrature_nodes = 61;
  bool sequential = false;

  void validate() const;
};

struct TiltedMoments {
  double log_z;
  double mean;
  double var;
};

// Moments of site(u)^fraction * N(u; cavity_mean, cavity_var).
TiltedMoments tilted_moments(const Site& site, double cavity_mean, double cavity_var, double fraction,
                             const GaussHermite& rule);
TiltedMoments tilted_moments(const Site& site, double cavity_mean, double cavity_var, const EPConfig& cfg);

struct SiteSummary {
  double site_h = 0.0;
  double site_q = 0.0;
  double cavity_mean = 0.0;
  double cavity_var = 0.0;
  double log_z = 0.0;
  double marginal_mean = 0.0;
  double marginal_var = 0.0;
  bool skipped = false;
  bool exact = false;  // gaussian prior site absorbed exactly
};

struct EPResult {
  VectorXd mean;
  MatrixXd covariance;
  std::vector<SiteSummary> sites;
  double log_evidence = 0.0;
  bool converged = false;
  int sweeps = 0;
  double fraction_used = 1.0;
  double damping_used = 1.0;
  double ridge = 0.0;
  std::string diagnostics;

  // Sum over sites of E[log cavity] - log Zhat + H(marginal), minus the entropy of the
  // global Gaussian: the EP (expectation-constrained) stand-in for -E[log sites] - H.
  double entropy_surrogate() const;
};

// Parallel (or sequential) EP to a fixed point. `warm_start` optionally provides
// initial site naturals (h, q) for the non-Gaussian sites, in site order.
EPResult ep_solve(const GaussianSiteModel& model, const EPConfig& cfg,
                  const std::vector<std::pair<double, double>>* warm_start = nullptr);

std::pair<double, double> posterior_marginal(const EPResult& result, Index index);

}  // namespace iofhmm
