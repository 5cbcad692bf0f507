#include "iofhmm/weight_posterior.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "iofhmm/quadrature.hpp"
#include "iofhmm/transitions.hpp"

namespace iofhmm {

namespace {

constexpr double kInitialWeight = 0.1;

VectorXd augmented_input(const Dataset& data, Index t) {
  const Index n_x = data.X.rows();
  VectorXd a(n_x + 1);
  a.head(n_x) = data.X.col(t);
  a[n_x] = 1.0;
  return a;
}

GaussianWeights prior_weights(const Hyperparameters& hyper, Index n_x) {
  GaussianWeights g;
  g.mean = VectorXd::Zero(n_x + 1);
  g.cov = MatrixXd::Zero(n_x + 1, n_x + 1);
  const double rate = hyper.w_prior.rate;
  const bool expo = hyper.w_prior.kind == WPriorKind::exponential;
  for (Index j = 0; j < n_x; ++j) {
    g.mean[j] = expo ? 1.0 / rate : 0.0;
    g.cov(j, j) = expo ? 1.0 / (rate * rate) : 2.0 / (rate * rate);
  }
  g.mean[n_x] = hyper.bias_prior.mean;
  g.cov(n_x, n_x) = hyper.bias_prior.variance;
  return g;
}

GaussianWeights solve_direction(const Dataset& data, const Hyperparameters& hyper, const EPConfig& cfg,
                                const std::vector<Eigen::Matrix2d>& eps, int from, const GaussianWeights* previous) {
  const Index n_x = data.X.rows();
  const Index n_t = data.X.cols();
  const Index dim = n_x + 1;
  GaussianSiteModel model{VectorXd::Zero(dim), MatrixXd::Zero(dim, dim), {}};
  for (Index j = 0; j < n_x; ++j) {
    VectorXd e = VectorXd::Unit(dim, j);
    if (hyper.w_prior.kind == WPriorKind::exponential)
      model.sites.push_back(Site::exponential(std::move(e), hyper.w_prior.rate));
    else
      model.sites.push_back(Site::laplace(std::move(e), hyper.w_prior.rate));
  }
  model.sites.push_back(Site::gaussian(VectorXd::Unit(dim, n_x), hyper.bias_prior.mean, hyper.bias_prior.variance));
  // Switching away from `from` is sigma(u); staying is 1 - sigma(u).
  const int leave = 1 - from;
  for (Index t = 0; t + 1 < n_t; ++t) {
    const auto& e = eps[static_cast<std::size_t>(t)];
    model.sites.push_back(Site::soft_logistic(augmented_input(data, t), e(from, leave), e(from, from)));
  }
  const auto* warm = previous && !previous->site_state.empty() ? &previous->site_state : nullptr;
  const EPResult r = ep_solve(model, cfg, warm);
  GaussianWeights g;
  g.mean = r.mean;
  g.cov = r.covariance;
  g.entropy_surrogate = r.entropy_surrogate();
  g.converged = r.converged;
  g.diagnostics = r.diagnostics;
  for (std::size_t j = 0; j < r.sites.size(); ++j)
    if (model.sites[j].kind != SiteKind::gaussian_prior) g.site_state.emplace_back(r.sites[j].site_h, r.sites[j].site_q);
  return g;
}

}  // namespace

ExpectedTransitionCounts expected_counts(const ChainPosterior& q_s) { return q_s.pair; }

ChainWeights ChainWeightPosterior::mean_weights() const {
  if (!gaussian) return point;
  const Index n_x = plus.mean.size() - 1;
  return {plus.mean.head(n_x), minus.mean.head(n_x), plus.mean[n_x], minus.mean[n_x]};
}

WeightPosterior WeightPosterior::initial(const ModelSpec& spec) {
  WeightPosterior q;
  q.chains.resize(static_cast<std::size_t>(spec.n_s));
  for (auto& c : q.chains) {
    if (spec.family == TransitionFamily::sig) {
      c.gaussian = true;
      c.plus = prior_weights(spec.hyper, spec.n_x);
      c.minus = c.plus;
      c.point = c.mean_weights();
    } else {
      c.point = ChainWeights{VectorXd::Constant(spec.n_x, kInitialWeight), VectorXd::Constant(spec.n_x, kInitialWeight),
                             0.0, 0.0};
      if (spec.family == TransitionFamily::tp_exp) {
        c.point.b_plus = spec.hyper.bias_prior.mean;
        c.point.b_minus = spec.hyper.bias_prior.mean;
      }
    }
  }
  return q;
}

WeightCollection WeightPosterior::means() const {
  WeightCollection out;
  out.reserve(chains.size());
  for (const auto& c : chains) out.push_back(c.mean_weights());
  return out;
}

std::pair<GaussianWeights, GaussianWeights> infer_weights_sig(const std::vector<Eigen::Matrix2d>& eps,
                                                              const Dataset& data, const Hyperparameters& hyper,
                                                              const EPConfig& cfg,
                                                              const ChainWeightPosterior* previous) {
  if (static_cast<Index>(eps.size()) != data.X.cols() - 1) throw DataError("need one count table per step");
  return {solve_direction(data, hyper, cfg, eps, 0, previous ? &previous->plus : nullptr),
          solve_direction(data, hyper, cfg, eps, 1, previous ? &previous->minus : nullptr)};
}

TpObjective::TpObjective(TransitionFamily family, const std::vector<Eigen::Matrix2d>& eps, const MatrixXd& X,
                         const VectorXd& delta, const Hyperparameters& hyper)
    : family_(family), eps_(eps), X_(X), delta_(delta), hyper_(hyper), n_x_(X.rows()) {
  if (family == TransitionFamily::sig) throw ConfigError("TpObjective is defined for tp families only");
  if (static_cast<Index>(eps.size()) != X.cols() - 1 || delta.size() != X.cols() - 1)
    throw DataError("counts, inputs and lags disagree in length");
}

Index TpObjective::dim() const { return family_ == TransitionFamily::tp_scaled ? 2 * n_x_ : 2 * n_x_ + 2; }

ChainWeights TpObjective::to_weights(const VectorXd& params) const {
  ChainWeights w;
  if (family_ == TransitionFamily::tp_scaled) {
    w.w_plus = params.head(n_x_).array().exp();
    w.w_minus = params.segment(n_x_, n_x_).array().exp();
  } else {
    w.w_plus = params.head(n_x_);
    w.w_minus = params.segment(n_x_, n_x_);
    w.b_plus = params[2 * n_x_];
    w.b_minus = params[2 * n_x_ + 1];
  }
  return w;
}

VectorXd TpObjective::from_weights(const ChainWeights& w) const {
  VectorXd p(dim());
  if (family_ == TransitionFamily::tp_scaled) {
    auto safe_log = [](double v) { return std::log(std::max(v, std::numeric_limits<double>::min())); };
    for (Index j = 0; j < n_x_; ++j) {
      p[j] = safe_log(w.w_plus[j]);
      p[n_x_ + j] = safe_log(w.w_minus[j]);
    }
  } else {
    p.head(n_x_) = w.w_plus;
    p.segment(n_x_, n_x_) = w.w_minus;
    p[2 * n_x_] = w.b_plus;
    p[2 * n_x_ + 1] = w.b_minus;
  }
  return p;
}

double TpObjective::smooth_value_and_gradient(const VectorXd& params, VectorXd* grad) const {
  const ChainWeights w = to_weights(params);
  VectorXd gw_plus = VectorXd::Zero(n_x_);
  VectorXd gw_minus = VectorXd::Zero(n_x_);
  double gb_plus = 0.0;
  double gb_minus = 0.0;
  double value = 0.0;
  for (Index t = 0; t + 1 < X_.cols(); ++t) {
    const auto x = X_.col(t);
    const RatePair r = rates(family_, w, x, hyper_.b0);
    const TransitionTable lp = log_rate_transition_table(r, delta_[t]);
    const Eigen::Matrix2d& e = eps_[static_cast<std::size_t>(t)];
    value += e(0, 0) * lp.stay_off + e(0, 1) * lp.turn_on + e(1, 0) * lp.turn_off + e(1, 1) * lp.stay_on;
    if (!grad) continue;
    const TransitionTableGrad g = log_rate_transition_grad(r, delta_[t]);
    const double d_on = e(0, 0) * g.d_first.stay_off + e(0, 1) * g.d_first.turn_on + e(1, 0) * g.d_first.turn_off +
                        e(1, 1) * g.d_first.stay_on;
    const double d_off = e(0, 0) * g.d_second.stay_off + e(0, 1) * g.d_second.turn_on +
                         e(1, 0) * g.d_second.turn_off + e(1, 1) * g.d_second.stay_on;
    if (family_ == TransitionFamily::tp_scaled) {
      gw_plus.array() += d_on * x.array() + d_off * (1.0 - x.array());
      gw_minus.array() += d_on * (1.0 - x.array()) + d_off * x.array();
    } else {
      gw_plus.noalias() += d_on * r.f_plus * x;
      gw_minus.noalias() += d_off * r.f_minus * x;
      gb_plus += d_on * r.f_plus;
      gb_minus += d_off * r.f_minus;
    }
  }
  if (family_ == TransitionFamily::tp_scaled) {
    // Exponential prior on the weights, differentiated through w = exp(theta).
    const double rate = hyper_.w_prior.rate;
    value += 2.0 * static_cast<double>(n_x_) * std::log(rate) - rate * (w.w_plus.sum() + w.w_minus.sum());
    if (grad) {
      grad->resize(dim());
      grad->head(n_x_) = (gw_plus.array() - rate) * w.w_plus.array();
      grad->segment(n_x_, n_x_) = (gw_minus.array() - rate) * w.w_minus.array();
    }
  } else {
    const auto& bp = hyper_.bias_prior;
    value += bp.log_density(w.b_plus) + bp.log_density(w.b_minus);
    if (grad) {
      grad->resize(dim());
      grad->head(n_x_) = gw_plus;
      grad->segment(n_x_, n_x_) = gw_minus;
      (*grad)[2 * n_x_] = gb_plus - (w.b_plus - bp.mean) / bp.variance;
      (*grad)[2 * n_x_ + 1] = gb_minus - (w.b_minus - bp.mean) / bp.variance;
    }
  }
  return value;
}

double TpObjective::value(const VectorXd& params) const {
  double v = smooth_value_and_gradient(params, nullptr);
  if (family_ == TransitionFamily::tp_exp) {
    const auto& prior = hyper_.w_prior;
    for (Index j = 0; j < 2 * n_x_; ++j) v += prior.log_density(params[j]);
  }
  return v;
}

VectorXd TpObjective::gradient(const VectorXd& params) const {
  VectorXd g;
  smooth_value_and_gradient(params, &g);
  if (family_ == TransitionFamily::tp_exp) {
    const double rate = hyper_.w_prior.rate;
    for (Index j = 0; j < 2 * n_x_; ++j)
      if (params[j] != 0.0) g[j] -= rate * (params[j] > 0.0 ? 1.0 : -1.0);
  }
  return g;
}

namespace {

double safe_value(const TpObjective& f, const VectorXd& p) {
  const double v = f.value(p);
  return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

// BFGS ascent with Armijo backtracking; returns false on line-search failure.
bool bfgs_ascent(const TpObjective& f, VectorXd& x, const OptimizerConfig& cfg, int& iterations) {
  const Index n = x.size();
  MatrixXd H = MatrixXd::Identity(n, n);  // inverse Hessian of -f
  double fx = safe_value(f, x);
  VectorXd g = f.gradient(x);
  for (int it = 0; it < cfg.max_iter; ++it) {
    iterations = it;
    if (g.cwiseAbs().maxCoeff() < cfg.grad_tol) return true;
    VectorXd dir = H * g;
    double slope = g.dot(dir);
    if (!(slope > 0.0)) {
      H.setIdentity();
      dir = g;
      slope = g.squaredNorm();
    }
    // Keep log-weight steps moderate.
    const double longest = dir.cwiseAbs().maxCoeff();
    double step = longest > 5.0 ? 5.0 / longest : 1.0;
    VectorXd next;
    double f_next = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      next = x + step * dir;
      f_next = safe_value(f, next);
      if (f_next >= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return g.cwiseAbs().maxCoeff() < 1e3 * cfg.grad_tol;
    const VectorXd g_next = f.gradient(next);
    const VectorXd s = next - x;
    const VectorXd y = g - g_next;  // gradient change of -f
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) - (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    x = next;
    fx = f_next;
    g = g_next;
  }
  return g.cwiseAbs().maxCoeff() < cfg.grad_tol;
}

double soft_threshold(double v, double t) { return std::copysign(std::max(0.0, std::abs(v) - t), v); }

// Monotone proximal-gradient ascent for the tp-exp objective with an L1 weight penalty.
bool proximal_ascent(const TpObjective& f, VectorXd& x, const OptimizerConfig& cfg, int& iterations) {
  const Index n = x.size();
  const Index n_w = n - 2;
  const double rate = f.l1_rate();
  double lipschitz = 1.0;
  auto l1 = [&](const VectorXd& p) { return rate * p.head(n_w).cwiseAbs().sum(); };
  VectorXd g;
  double smooth = f.smooth_value_and_gradient(x, &g);
  for (int it = 0; it < 20 * cfg.max_iter; ++it) {
    iterations = it;
    VectorXd next(n);
    double smooth_next = 0.0;
    VectorXd g_next;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      next = x + g / lipschitz;
      for (Index j = 0; j < n_w; ++j) next[j] = soft_threshold(next[j], rate / lipschitz);
      const VectorXd d = next - x;
      smooth_next = f.smooth_value_and_gradient(next, &g_next);
      if (std::isfinite(smooth_next) && smooth_next >= smooth + g.dot(d) - 0.5 * lipschitz * d.squaredNorm()) {
        accepted = true;
        break;
      }
      lipschitz *= 2.0;
    }
    if (!accepted) return false;
    const double mapping = lipschitz * (next - x).cwiseAbs().maxCoeff();
    if (smooth_next - l1(next) < smooth - l1(x)) return mapping < cfg.grad_tol;
    x = next;
    smooth = smooth_next;
    g = g_next;
    if (mapping < cfg.grad_tol) return true;
    lipschitz = std::max(1e-8, 0.9 * lipschitz);
  }
  return false;
}

}  // namespace

ChainWeights estimate_weights_tp(const std::vector<Eigen::Matrix2d>& eps, const Dataset& data, TransitionFamily family,
                                 const Hyperparameters& hyper, const ChainWeights& start, const OptimizerConfig& cfg,
                                 OptimizerReport* report) {
  const TpObjective f(family, eps, data.X, data.delta, hyper);
  const VectorXd x0 = f.from_weights(start);
  const double f0 = safe_value(f, x0);
  VectorXd best = x0;
  double best_value = f0;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> jitter(0.0, 0.1);

  OptimizerReport rep;
  VectorXd x = x0;
  for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
    int iters = 0;
    const bool ok = family == TransitionFamily::tp_scaled ? bfgs_ascent(f, x, cfg, iters) : proximal_ascent(f, x, cfg, iters);
    rep.iterations += iters;
    const double v = safe_value(f, x);
    if (v > best_value) {
      best_value = v;
      best = x;
    }
    if (ok) {
      rep.converged = true;
      break;
    }
    rep.restarts = attempt + 1;
    x = best;
    for (Index j = 0; j < x.size(); ++j) x[j] += jitter(rng);
  }
  rep.value = best_value;
  if (report) *report = rep;
  return f.to_weights(best);
}

EdgePotentials expected_log_transitions(const ChainWeightPosterior& w, const Dataset& data, TransitionFamily family,
                                        double b0, const EPConfig& cfg) {
  const Index n_t = data.X.cols();
  EdgePotentials edges(static_cast<std::size_t>(n_t - 1));
  if (!w.gaussian) {
    for (Index t = 0; t + 1 < n_t; ++t)
      edges[static_cast<std::size_t>(t)] = log_transition_table(family, w.point, data.X.col(t), data.delta[t], b0).as_matrix();
    return edges;
  }
  const GaussHermite& rule = gauss_hermite_rule(cfg.quadrature_nodes);
  auto expect_log_sig = [&](double m, double v) -> std::pair<double, double> {
    if (v < 0.0) throw ConvergenceError("negative projected weight variance");
    if (v < 1e-300) return {log_sigmoid(m), log_sigmoid(-m)};
    double up = 0.0;
    double down = 0.0;
    const double sd = std::sqrt(v);
    for (int k = 0; k < rule.size(); ++k) {
      const double u = m + sd * rule.nodes()[static_cast<std::size_t>(k)];
      up += rule.weights()[static_cast<std::size_t>(k)] * log_sigmoid(u);
      down += rule.weights()[static_cast<std::size_t>(k)] * log_sigmoid(-u);
    }
    return {up, down};
  };
  for (Index t = 0; t + 1 < n_t; ++t) {
    const VectorXd a = augmented_input(data, t);
    const auto [on, stay_off] = expect_log_sig(a.dot(w.plus.mean), a.dot(w.plus.cov * a));
    const auto [off, stay_on] = expect_log_sig(a.dot(w.minus.mean), a.dot(w.minus.cov * a));
    Eigen::Matrix2d m;
    m << stay_off, on, off, stay_on;
    edges[static_cast<std::size_t>(t)] = m;
  }
  return edges;
}

}  // namespace iofhmm
