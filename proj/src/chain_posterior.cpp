#include "iofhmm/chain_posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace iofhmm {

namespace {

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

ChainMarginals forward_backward(const NodePotentials& node, const EdgePotentials& edge, bool clamp_start) {
  const Index n = node.cols();
  if (n < 1) throw DataError("forward_backward needs at least one time step");
  if (static_cast<Index>(edge.size()) != n - 1) throw DataError("need one edge potential per step");
  if (!node.allFinite()) throw DataError("non-finite node potentials");
  for (const auto& e : edge)
    if (!e.allFinite()) throw DataError("non-finite edge potentials");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  // Log-space messages; alpha(t) includes node t, beta(t) excludes it.
  NodePotentials alpha(2, n);
  NodePotentials beta(2, n);
  alpha.col(0) = node.col(0);
  if (clamp_start) alpha(1, 0) = kNegInf;
  for (Index t = 1; t < n; ++t) {
    const auto& e = edge[static_cast<std::size_t>(t - 1)];
    for (int b = 0; b < 2; ++b)
      alpha(b, t) = node(b, t) + log_sum_exp2(alpha(0, t - 1) + e(0, b), alpha(1, t - 1) + e(1, b));
  }
  beta.col(n - 1).setZero();
  for (Index t = n - 2; t >= 0; --t) {
    const auto& e = edge[static_cast<std::size_t>(t)];
    for (int a = 0; a < 2; ++a)
      beta(a, t) = log_sum_exp2(e(a, 0) + node(0, t + 1) + beta(0, t + 1), e(a, 1) + node(1, t + 1) + beta(1, t + 1));
  }

  ChainMarginals out;
  out.log_z = log_sum_exp2(alpha(0, n - 1), alpha(1, n - 1));
  out.mu.resize(n);
  for (Index t = 0; t < n; ++t) {
    const double l0 = alpha(0, t) + beta(0, t);
    const double l1 = alpha(1, t) + beta(1, t);
    const double lz = log_sum_exp2(l0, l1);
    const double p_on = std::exp(l1 - lz);
    out.mu[t] = 2.0 * p_on - 1.0;
  }
  out.pair.resize(static_cast<std::size_t>(n - 1));
  for (Index t = 0; t + 1 < n; ++t) {
    const auto& e = edge[static_cast<std::size_t>(t)];
    Eigen::Matrix2d lp;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) lp(a, b) = alpha(a, t) + e(a, b) + node(b, t + 1) + beta(b, t + 1);
    const double top = lp.maxCoeff();
    Eigen::Matrix2d p = (lp.array() - top).unaryExpr([](double x) { return std::exp(x); }).matrix();
    p /= p.sum();
    out.pair[static_cast<std::size_t>(t)] = p;
  }
  // Make singletons and pair tables agree exactly: derive mu from the tables.
  for (Index t = 0; t + 1 < n; ++t) {
    const auto& p = out.pair[static_cast<std::size_t>(t)];
    out.mu[t] = p(1, 0) + p(1, 1) - p(0, 0) - p(0, 1);
    if (t + 2 == n) out.mu[t + 1] = p(0, 1) + p(1, 1) - p(0, 0) - p(1, 0);
  }
  return out;
}

double chain_entropy(const ChainMarginals& m) {
  const Index n = m.mu.size();
  double h = 0.0;
  for (const auto& p : m.pair)
    for (int k = 0; k < 4; ++k) h -= xlogx(p(k));
  for (Index t = 1; t + 1 < n; ++t) {
    const double on = 0.5 * (1.0 + m.mu[t]);
    h += xlogx(on) + xlogx(1.0 - on);
  }
  if (n == 1) {
    const double on = 0.5 * (1.0 + m.mu[0]);
    h = -xlogx(on) - xlogx(1.0 - on);
  }
  return h;
}

ChainMarginals ChainPosterior::chain(Index i) const {
  ChainMarginals m;
  m.mu = mu.row(i).transpose();
  m.pair = pair[static_cast<std::size_t>(i)];
  m.log_z = log_z[i];
  return m;
}

void ChainPosterior::set_chain(Index i, ChainMarginals m) {
  mu.row(i) = m.mu.transpose();
  pair[static_cast<std::size_t>(i)] = std::move(m.pair);
  log_z[i] = m.log_z;
}

double ChainPosterior::entropy() const {
  double h = 0.0;
  for (Index i = 0; i < n_s(); ++i) h += chain_entropy(chain(i));
  return h;
}

ChainPosterior ChainPosterior::initial(Index n_s, Index n_t, bool clamp_start, double jitter, std::uint64_t seed) {
  ChainPosterior q;
  q.mu = MatrixXd::Zero(n_s, n_t);
  if (jitter > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-jitter, jitter);
    for (Index i = 0; i < n_s; ++i)
      for (Index t = 0; t < n_t; ++t) q.mu(i, t) = u(rng);
  }
  if (clamp_start) q.mu.col(0).setConstant(-1.0);
  q.log_z = VectorXd::Zero(n_s);
  q.pair.resize(static_cast<std::size_t>(n_s));
  for (Index i = 0; i < n_s; ++i) {
    auto& tables = q.pair[static_cast<std::size_t>(i)];
    tables.resize(static_cast<std::size_t>(std::max<Index>(n_t - 1, 0)));
    for (Index t = 0; t + 1 < n_t; ++t) {
      const double a = 0.5 * (1.0 + q.mu(i, t));
      const double b = 0.5 * (1.0 + q.mu(i, t + 1));
      Eigen::Matrix2d p;
      p << (1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b;
      tables[static_cast<std::size_t>(t)] = p;
    }
  }
  return q;
}

ChainPosterior ChainPosterior::from_states(const StateMatrix& S) {
  const Index n_s = S.S.rows();
  const Index n_t = S.S.cols();
  ChainPosterior q;
  q.mu = S.S.cast<double>();
  q.log_z = VectorXd::Zero(n_s);
  q.pair.resize(static_cast<std::size_t>(n_s));
  for (Index i = 0; i < n_s; ++i) {
    auto& tables = q.pair[static_cast<std::size_t>(i)];
    tables.resize(static_cast<std::size_t>(n_t - 1));
    for (Index t = 0; t + 1 < n_t; ++t) {
      Eigen::Matrix2d p = Eigen::Matrix2d::Zero();
      p(S.S(i, t) == 1 ? 1 : 0, S.S(i, t + 1) == 1 ? 1 : 0) = 1.0;
      tables[static_cast<std::size_t>(t)] = p;
    }
  }
  return q;
}

NodePotentials build_node_potentials(const EmissionMoments& moments, double v_mean, const MatrixXd& mu, Index chain) {
  const Index n_s = mu.rows();
  const Index n_t = mu.cols();
  if (moments.gram.rows() != n_s || moments.gram.cols() != n_s || moments.cty.rows() != n_s ||
      moments.cty.cols() != n_t)
    throw DataError("emission moments do not match the chain posterior");
  if (chain < 0 || chain >= n_s) throw DataError("chain index out of range");
  const auto g = moments.gram.row(chain);
  const double row_sum = g.sum();
  const double self = g(chain);
  NodePotentials node(2, n_t);
  for (Index t = 0; t < n_t; ++t) {
    const double cross = g.dot(mu.col(t)) - self * mu(chain, t);
    const double coef = 0.5 * v_mean * (moments.cty(chain, t) - 0.5 * row_sum - 0.5 * cross);
    node(0, t) = -coef;
    node(1, t) = coef;
  }
  return node;
}

ChainSweepReport sweep_chains(ChainPosterior& q_s, const EmissionMoments& moments, double v_mean,
                              const std::vector<EdgePotentials>& edges, const ChainSweepConfig& cfg) {
  const Index n_s = q_s.n_s();
  if (static_cast<Index>(edges.size()) != n_s) throw DataError("need edge potentials for every chain");
  std::vector<Index> order(static_cast<std::size_t>(n_s));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(cfg.seed);

  ChainSweepReport report;
  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    if (cfg.randomize_order) std::shuffle(order.begin(), order.end(), rng);
    double change = 0.0;
    for (Index i : order) {
      const NodePotentials node = build_node_potentials(moments, v_mean, q_s.mu, i);
      ChainMarginals m = forward_backward(node, edges[static_cast<std::size_t>(i)], cfg.clamp_start);
      change = std::max(change, (m.mu.transpose() - q_s.mu.row(i)).cwiseAbs().maxCoeff());
      q_s.set_chain(i, std::move(m));
    }
    report.sweeps = sweep;
    report.max_change = change;
    if (change < cfg.tol) {
      report.converged = true;
      break;
    }
  }
  return report;
}

}  // namespace iofhmm
