#include "iofhmm/ep.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "iofhmm/special.hpp"
#include "iofhmm/transitions.hpp"

namespace iofhmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kMinTiltedVar = 1e-14;
constexpr double kInitialRidge = 1e-8;

// One side of a two-sided exponential tilt: mass and moments of
// N(u; m, s) exp(-rate * u) restricted to u >= 0.
struct TruncatedPart {
  double log_mass;
  double mean;
  double var;
};

TruncatedPart positive_tilt(double m, double s, double rate) {
  const double sd = std::sqrt(s);
  const double shifted = m - rate * s;
  const double a = shifted / sd;
  const double log_mass = a < 0.0 ? -0.5 * m * m / s + log_half_erfcx(-a / std::sqrt(2.0))
                                  : -rate * m + 0.5 * rate * rate * s + log_normal_cdf(a);
  const double ratio = normal_hazard_ratio(a);
  return {log_mass, shifted + sd * ratio, s * std::max(0.0, 1.0 - ratio * (ratio + a))};
}

TiltedMoments combine(const TruncatedPart& pos, const TruncatedPart& neg, double log_const) {
  const double top = std::max(pos.log_mass, neg.log_mass);
  const double wp = std::exp(pos.log_mass - top);
  const double wn = std::exp(neg.log_mass - top);
  const double total = wp + wn;
  const double pp = wp / total;
  const double pn = wn / total;
  const double mean = pp * pos.mean + pn * neg.mean;
  const double gap = pos.mean - neg.mean;
  const double var = pp * pos.var + pn * neg.var + pp * pn * gap * gap;
  return {log_const + top + std::log(total), mean, var};
}

TiltedMoments laplace_moments(double m, double s, double rate, double log_const) {
  const TruncatedPart pos = positive_tilt(m, s, rate);
  // Mirror: u -> -u turns the negative half into a positive tilt of N(-m, s).
  TruncatedPart neg = positive_tilt(-m, s, rate);
  neg.mean = -neg.mean;
  return combine(pos, neg, log_const);
}

double phi_natural(double mean, double var) { return 0.5 * mean * mean / var + 0.5 * (kLog2Pi + std::log(var)); }

struct Posterior {
  Eigen::LLT<MatrixXd> llt;
  MatrixXd precision;
  VectorXd shift;
  MatrixXd cov;
  VectorXd mean;
  bool ok = false;
};

Posterior make_posterior(const GaussianSiteModel& model, const std::vector<Site>& sites, double ridge) {
  Posterior p;
  const Index d = model.dim();
  p.precision = model.base_Q;
  p.precision.diagonal().array() += ridge;
  p.shift = model.base_h;
  for (const Site& site : sites) {
    p.precision.noalias() += site.site_q * site.projection * site.projection.transpose();
    p.shift.noalias() += site.site_h * site.projection;
  }
  p.llt.compute(p.precision);
  if (p.llt.info() != Eigen::Success) return p;
  // LLT succeeds on some indefinite inputs with tiny pivots; check the diagonal.
  const auto diag = p.llt.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any() || !diag.allFinite()) return p;
  p.cov = p.llt.solve(MatrixXd::Identity(d, d));
  p.mean = p.cov * p.shift;
  p.ok = p.cov.allFinite() && p.mean.allFinite();
  return p;
}

double log_det_from_llt(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

bool is_gaussian(const Site& s) { return s.kind == SiteKind::gaussian_prior; }

void init_site(Site& s) {
  switch (s.kind) {
    case SiteKind::gaussian_prior:
      s.site_q = 1.0 / s.variance;
      s.site_h = s.mean / s.variance;
      break;
    case SiteKind::laplace_prior:
      s.site_q = 0.5 * s.rate * s.rate;
      s.site_h = 0.0;
      break;
    case SiteKind::exponential_prior:
      s.site_q = s.rate * s.rate;
      s.site_h = s.rate;
      break;
    case SiteKind::soft_logistic:
      s.site_q = 0.0;
      s.site_h = 0.0;
      break;
  }
}

enum class AttemptStatus { ok, cavity_failure, precision_failure };

struct Attempt {
  AttemptStatus status = AttemptStatus::ok;
  bool converged = false;
  int sweeps = 0;
  double damping = 1.0;
  std::vector<bool> skipped;
  std::string note;
};

}  // namespace

Site Site::gaussian(VectorXd a, double mean, double variance) {
  Site s;
  s.projection = std::move(a);
  s.kind = SiteKind::gaussian_prior;
  s.mean = mean;
  s.variance = variance;
  return s;
}

Site Site::laplace(VectorXd a, double rate) {
  Site s;
  s.projection = std::move(a);
  s.kind = SiteKind::laplace_prior;
  s.rate = rate;
  return s;
}

Site Site::exponential(VectorXd a, double rate) {
  Site s;
  s.projection = std::move(a);
  s.kind = SiteKind::exponential_prior;
  s.rate = rate;
  return s;
}

Site Site::soft_logistic(VectorXd a, double eps_one, double eps_zero) {
  Site s;
  s.projection = std::move(a);
  s.kind = SiteKind::soft_logistic;
  s.eps_one = eps_one;
  s.eps_zero = eps_zero;
  return s;
}

double Site::log_value(double u) const {
  switch (kind) {
    case SiteKind::gaussian_prior:
      return -0.5 * (kLog2Pi + std::log(variance) + (u - mean) * (u - mean) / variance);
    case SiteKind::laplace_prior:
      return std::log(0.5 * rate) - rate * std::abs(u);
    case SiteKind::exponential_prior:
      return u < 0.0 ? -std::numeric_limits<double>::infinity() : std::log(rate) - rate * u;
    case SiteKind::soft_logistic:
      return eps_one * log_sigmoid(u) + eps_zero * log_sigmoid(-u);
  }
  return 0.0;
}

void GaussianSiteModel::validate() const {
  const Index d = dim();
  if (base_Q.rows() != d || base_Q.cols() != d) throw DataError("base precision must be dim x dim");
  if (!base_Q.allFinite() || !base_h.allFinite()) throw DataError("base Gaussian has non-finite entries");
  if ((base_Q - base_Q.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, base_Q.cwiseAbs().maxCoeff()))
    throw DataError("base precision must be symmetric");
  for (const Site& s : sites) {
    if (s.projection.size() != d) throw DataError("site projection does not match latent dimension");
    switch (s.kind) {
      case SiteKind::gaussian_prior:
        if (!(s.variance > 0.0)) throw DataError("gaussian site variance must be > 0");
        break;
      case SiteKind::laplace_prior:
      case SiteKind::exponential_prior:
        if (!(s.rate > 0.0)) throw DataError("prior site rate must be > 0");
        break;
      case SiteKind::soft_logistic:
        if (s.eps_one < 0.0 || s.eps_zero < 0.0) throw DataError("soft-logistic counts must be >= 0");
        break;
    }
  }
}

void EPConfig::validate() const {
  if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("EP damping must lie in (0, 1]");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("EP fraction must lie in (0, 1]");
  if (max_sweeps < 1) throw ConfigError("EP max_sweeps must be >= 1");
  if (!(tol > 0.0)) throw ConfigError("EP tol must be > 0");
  if (quadrature_nodes < 2) throw ConfigError("EP quadrature_nodes must be >= 2");
}

TiltedMoments tilted_moments(const Site& site, double m, double v, double fraction, const GaussHermite& rule) {
  if (!(v > 0.0) || !std::isfinite(v) || !std::isfinite(m)) throw ConvergenceError("tilted moments need a proper cavity");
  TiltedMoments out{};
  switch (site.kind) {
    case SiteKind::gaussian_prior: {
      const double tau = 1.0 / v + fraction / site.variance;
      const double var = 1.0 / tau;
      const double mean = var * (m / v + fraction * site.mean / site.variance);
      const double scaled_var = site.variance / fraction;
      const double gap = m - site.mean;
      const double log_z = -fraction * 0.5 * (kLog2Pi + std::log(site.variance)) +
                           0.5 * (kLog2Pi + std::log(scaled_var)) -
                           0.5 * (kLog2Pi + std::log(v + scaled_var) + gap * gap / (v + scaled_var));
      out = {log_z, mean, var};
      break;
    }
    case SiteKind::laplace_prior:
      out = laplace_moments(m, v, fraction * site.rate, fraction * std::log(0.5 * site.rate));
      break;
    case SiteKind::exponential_prior: {
      const TruncatedPart pos = positive_tilt(m, v, fraction * site.rate);
      out = {fraction * std::log(site.rate) + pos.log_mass, pos.mean, pos.var};
      break;
    }
    case SiteKind::soft_logistic: {
      const double e1 = fraction * site.eps_one;
      const double e0 = fraction * site.eps_zero;
      if (e1 == 0.0 && e0 == 0.0) return {0.0, m, v};
      const double sd = std::sqrt(v);
      const auto& nodes = rule.nodes();
      const auto& logw = rule.log_weights();
      const std::size_t n = nodes.size();
      std::vector<double> logs(n);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        const double u = m + sd * nodes[k];
        logs[k] = logw[k] + e1 * log_sigmoid(u) + e0 * log_sigmoid(-u);
        top = std::max(top, logs[k]);
      }
      double total = 0.0;
      double first = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        logs[k] = std::exp(logs[k] - top);
        total += logs[k];
        first += logs[k] * nodes[k];
      }
      const double z_mean = first / total;
      double second = 0.0;
      for (std::size_t k = 0; k < n; ++k) second += logs[k] * (nodes[k] - z_mean) * (nodes[k] - z_mean);
      out = {top + std::log(total), m + sd * z_mean, v * second / total};
      break;
    }
  }
  if (!(out.var >= kMinTiltedVar) || !std::isfinite(out.mean) || !std::isfinite(out.log_z))
    throw ConvergenceError("tilted distribution collapsed (variance below 1e-14)");
  return out;
}

TiltedMoments tilted_moments(const Site& site, double cavity_mean, double cavity_var, const EPConfig& cfg) {
  return tilted_moments(site, cavity_mean, cavity_var, cfg.fraction, gauss_hermite_rule(cfg.quadrature_nodes));
}

double EPResult::entropy_surrogate() const {
  const Index d = mean.size();
  double total = 0.0;
  if (d > 0) {
    Eigen::LLT<MatrixXd> llt(covariance);
    total -= 0.5 * (static_cast<double>(d) * (kLog2Pi + 1.0) + log_det_from_llt(llt));
  }
  for (const SiteSummary& s : sites) {
    if (s.exact) {
      // -E[log p0] under the marginal; cavity fields hold the prior.
      const double g = s.marginal_mean - s.cavity_mean;
      total += 0.5 * (kLog2Pi + std::log(s.cavity_var)) + (g * g + s.marginal_var) / (2.0 * s.cavity_var);
      continue;
    }
    if (s.skipped) continue;
    const double gap = s.marginal_mean - s.cavity_mean;
    const double expected_log_cavity =
        -0.5 * (kLog2Pi + std::log(s.cavity_var)) - (gap * gap + s.marginal_var) / (2.0 * s.cavity_var);
    total += expected_log_cavity - s.log_z + 0.5 * (kLog2Pi + 1.0 + std::log(s.marginal_var));
  }
  return total;
}

EPResult ep_solve(const GaussianSiteModel& model, const EPConfig& cfg,
                  const std::vector<std::pair<double, double>>* warm_start) {
  model.validate();
  cfg.validate();
  const Index d = model.dim();
  const GaussHermite& rule = gauss_hermite_rule(cfg.quadrature_nodes);

  std::vector<Site> sites = model.sites;
  std::vector<std::size_t> active;  // non-Gaussian sites
  for (std::size_t j = 0; j < sites.size(); ++j) {
    init_site(sites[j]);
    if (!is_gaussian(sites[j])) active.push_back(j);
  }
  if (warm_start && warm_start->size() == active.size()) {
    for (std::size_t k = 0; k < active.size(); ++k) {
      sites[active[k]].site_h = (*warm_start)[k].first;
      sites[active[k]].site_q = (*warm_start)[k].second;
    }
  }
  const std::vector<Site> initial_sites = sites;

  EPResult result;
  std::ostringstream diag;

  double ridge = 0.0;
  if (d > 0) {
    while (!make_posterior(model, sites, ridge).ok) {
      ridge = ridge == 0.0 ? kInitialRidge : ridge * 10.0;
      if (ridge > 1e-2) {
        result.diagnostics = "initial precision is not positive definite even with ridge 1e-2";
        result.mean = VectorXd::Zero(d);
        result.covariance = MatrixXd::Identity(d, d);
        return result;
      }
    }
    if (ridge > 0.0) diag << "added ridge " << ridge << " to singular base precision; ";
  }

  auto run = [&](double fraction, bool allow_skip) {
    Attempt at;
    at.damping = cfg.damping;
    at.skipped.assign(sites.size(), false);
    if (active.empty()) {
      at.converged = true;
      return at;
    }
    int halvings = 0;
    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
      at.sweeps = sweep;
      const std::vector<Site> before = sites;
      double max_change = 0.0;
      Posterior post = make_posterior(model, sites, ridge);
      if (!post.ok) {
        at.status = AttemptStatus::precision_failure;
        return at;
      }
      for (std::size_t j : active) {
        Site& s = sites[j];
        const VectorXd sa = post.cov * s.projection;
        const double mu = s.projection.dot(post.mean);
        const double var = s.projection.dot(sa);
        const double tau_cav = 1.0 / var - fraction * s.site_q;
        const double nu_cav = mu / var - fraction * s.site_h;
        if (!(tau_cav > 0.0)) {
          if (!allow_skip) {
            at.status = AttemptStatus::cavity_failure;
            return at;
          }
          at.skipped[j] = true;
          continue;
        }
        TiltedMoments tm{};
        try {
          tm = tilted_moments(s, nu_cav / tau_cav, 1.0 / tau_cav, fraction, rule);
        } catch (const ConvergenceError&) {
          if (!allow_skip) {
            at.status = AttemptStatus::cavity_failure;
            return at;
          }
          at.skipped[j] = true;
          continue;
        }
        const double q_new = (1.0 / tm.var - tau_cav) / fraction;
        const double h_new = (tm.mean / tm.var - nu_cav) / fraction;
        const double dq = at.damping * (q_new - s.site_q);
        const double dh = at.damping * (h_new - s.site_h);
        if (cfg.sequential) {
          // Sherman-Morrison update of the posterior for this site alone.
          const double denom = 1.0 + dq * var;
          if (!(denom > 0.0)) {
            at.skipped[j] = true;
            continue;
          }
          post.cov.noalias() -= (dq / denom) * sa * sa.transpose();
          post.shift.noalias() += dh * s.projection;
          post.mean.noalias() = post.cov * post.shift;
        }
        s.site_q += dq;
        s.site_h += dh;
        max_change = std::max({max_change, std::abs(dq), std::abs(dh)});
      }
      if (!make_posterior(model, sites, ridge).ok) {
        sites = before;
        at.damping *= 0.5;
        if (++halvings > 20) {
          at.status = AttemptStatus::precision_failure;
          return at;
        }
        --sweep;
        continue;
      }
      if (max_change < cfg.tol) {
        at.converged = true;
        return at;
      }
    }
    return at;
  };

  double fraction = cfg.fraction;
  Attempt at = run(fraction, false);
  if (at.status == AttemptStatus::cavity_failure) {
    diag << "improper cavity at fraction " << fraction << "; ";
    sites = initial_sites;
    fraction = std::min(fraction, 0.5);
    at = run(fraction, false);
    if (at.status == AttemptStatus::cavity_failure) {
      diag << "improper cavity at fraction " << fraction << ", skipping offending sites; ";
      sites = initial_sites;
      at = run(fraction, true);
    }
  }
  if (at.status == AttemptStatus::precision_failure) diag << "posterior precision lost definiteness; ";
  if (!at.converged) diag << "no fixed point after " << at.sweeps << " sweeps; ";

  result.converged = at.converged && at.status == AttemptStatus::ok;
  result.sweeps = at.sweeps;
  result.fraction_used = fraction;
  result.damping_used = at.damping;
  result.ridge = ridge;

  if (d == 0) {
    result.mean = VectorXd(0);
    result.covariance = MatrixXd(0, 0);
    result.diagnostics = diag.str();
    return result;
  }

  Posterior post = make_posterior(model, sites, ridge);
  if (!post.ok) {
    // Fall back to the last state that was definite.
    sites = initial_sites;
    post = make_posterior(model, sites, ridge);
    result.converged = false;
    diag << "returned initial site state; ";
  }
  result.mean = post.mean;
  result.covariance = post.cov;

  double log_z = 0.5 * post.shift.dot(post.mean) - 0.5 * log_det_from_llt(post.llt) +
                 0.5 * static_cast<double>(d) * kLog2Pi;
  result.sites.resize(sites.size());
  for (std::size_t j = 0; j < sites.size(); ++j) {
    const Site& s = sites[j];
    SiteSummary& out = result.sites[j];
    out.site_h = s.site_h;
    out.site_q = s.site_q;
    out.marginal_mean = s.projection.dot(post.mean);
    out.marginal_var = s.projection.dot(post.cov * s.projection);
    if (is_gaussian(s)) {
      // Exact site: cavity fields carry the prior itself.
      out.exact = true;
      out.cavity_mean = s.mean;
      out.cavity_var = s.variance;
      out.log_z = 0.0;
      log_z += -0.5 * s.mean * s.mean / s.variance - 0.5 * (kLog2Pi + std::log(s.variance));
      continue;
    }
    const double tau_cav = 1.0 / out.marginal_var - fraction * s.site_q;
    const double nu_cav = out.marginal_mean / out.marginal_var - fraction * s.site_h;
    if (!(tau_cav > 0.0)) {
      out.skipped = true;
      out.cavity_mean = out.marginal_mean;
      out.cavity_var = out.marginal_var;
      continue;
    }
    out.cavity_mean = nu_cav / tau_cav;
    out.cavity_var = 1.0 / tau_cav;
    try {
      out.log_z = tilted_moments(s, out.cavity_mean, out.cavity_var, fraction, rule).log_z;
    } catch (const ConvergenceError&) {
      out.skipped = true;
      continue;
    }
    log_z += (out.log_z + phi_natural(out.cavity_mean, out.cavity_var) -
              phi_natural(out.marginal_mean, out.marginal_var)) / fraction;
  }
  result.log_evidence = log_z;
  result.diagnostics = diag.str();
  return result;
}

std::pair<double, double> posterior_marginal(const EPResult& result, Index index) {
  if (index < 0 || index >= result.mean.size()) throw std::out_of_range("posterior_marginal index out of range");
  return {result.mean[index], result.covariance(index, index)};
}

}  // namespace iofhmm
