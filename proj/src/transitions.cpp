#include "iofhmm/transitions.hpp"

#include <cmath>

namespace iofhmm {

namespace {

int state_index(int s) {
  if (s == -1) return 0;
  if (s == 1) return 1;
  throw DataError("chain state must be -1 or +1");
}

// 1/expm1(z) - 1/z, accurate as z -> 0.
double expm1_reciprocal_gap(double z) {
  if (z < 1e-3) {
    const double z2 = z * z;
    return -0.5 + z / 12.0 - z * z2 / 720.0 + z * z2 * z2 / 30240.0;
  }
  return 1.0 / std::expm1(z) - 1.0 / z;
}

void require_positive_delta(double delta) {
  if (!(delta > 0.0)) throw DataError("time lag must be > 0 for tp families");
}

}  // namespace

double TransitionTable::at(int from, int to) const {
  const int a = state_index(from);
  const int b = state_index(to);
  if (a == 0) return b == 0 ? stay_off : turn_on;
  return b == 0 ? turn_off : stay_on;
}

Eigen::Matrix2d TransitionTable::as_matrix() const {
  Eigen::Matrix2d m;
  m << stay_off, turn_on, turn_off, stay_on;
  return m;
}

double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

RatePair rates(TransitionFamily family, const ChainWeights& w, const Eigen::Ref<const VectorXd>& x, double b0) {
  switch (family) {
    case TransitionFamily::sig:
      throw ConfigError("the sig family is parameterised by probabilities, not rates");
    case TransitionFamily::tp_scaled: {
      if ((x.array() < 0.0).any() || (x.array() > 1.0).any()) throw DataError("tp-scaled inputs must lie in [0, 1]");
      const double on = w.w_plus.dot(x) + w.w_minus.dot((1.0 - x.array()).matrix()) + b0;
      const double off = w.w_minus.dot(x) + w.w_plus.dot((1.0 - x.array()).matrix()) + b0;
      return {on, off};
    }
    case TransitionFamily::tp_exp:
      return {std::exp(w.w_plus.dot(x) + w.b_plus), std::exp(w.w_minus.dot(x) + w.b_minus)};
  }
  throw ConfigError("unknown family");
}

std::pair<double, double> sig_logits(const ChainWeights& w, const Eigen::Ref<const VectorXd>& x) {
  return {w.w_plus.dot(x) + w.b_plus, w.w_minus.dot(x) + w.b_minus};
}

TransitionTable rate_transition_table(RatePair r, double delta) {
  require_positive_delta(delta);
  const double total = r.f_plus + r.f_minus;
  const double settle = -std::expm1(-delta * total);
  const double on = r.f_plus * settle / total;
  const double off = r.f_minus * settle / total;
  return {1.0 - on, on, off, 1.0 - off};
}

TransitionTable log_rate_transition_table(RatePair r, double delta) {
  require_positive_delta(delta);
  const double total = r.f_plus + r.f_minus;
  const double z = delta * total;
  const double log_settle = std::log(-std::expm1(-z)) - std::log(total);
  const double decay = std::exp(-z);
  const double log_total = std::log(total);
  return {std::log(r.f_minus + r.f_plus * decay) - log_total, std::log(r.f_plus) + log_settle,
          std::log(r.f_minus) + log_settle, std::log(r.f_plus + r.f_minus * decay) - log_total};
}

TransitionTableGrad log_rate_transition_grad(RatePair r, double delta) {
  require_positive_delta(delta);
  const double fp = r.f_plus;
  const double fm = r.f_minus;
  const double total = fp + fm;
  const double z = delta * total;
  const double decay = std::exp(-z);
  const double kappa = delta * expm1_reciprocal_gap(z);
  const double inv_total = 1.0 / total;
  const double stay_off_norm = fm + fp * decay;
  const double stay_on_norm = fp + fm * decay;

  TransitionTableGrad g{};
  g.d_first.turn_on = 1.0 / fp + kappa;
  g.d_second.turn_on = kappa;
  g.d_first.turn_off = kappa;
  g.d_second.turn_off = 1.0 / fm + kappa;
  g.d_first.stay_off = decay * (1.0 - fp * delta) / stay_off_norm - inv_total;
  g.d_second.stay_off = (1.0 - fp * delta * decay) / stay_off_norm - inv_total;
  g.d_first.stay_on = (1.0 - fm * delta * decay) / stay_on_norm - inv_total;
  g.d_second.stay_on = decay * (1.0 - fm * delta) / stay_on_norm - inv_total;
  return g;
}

TransitionTable log_sig_transition_table(double u_plus, double u_minus) {
  return {log_sigmoid(-u_plus), log_sigmoid(u_plus), log_sigmoid(u_minus), log_sigmoid(-u_minus)};
}

TransitionTable log_transition_table(TransitionFamily family, const ChainWeights& w,
                                     const Eigen::Ref<const VectorXd>& x, double delta, double b0) {
  if (family == TransitionFamily::sig) {
    const auto [up, um] = sig_logits(w, x);
    return log_sig_transition_table(up, um);
  }
  return log_rate_transition_table(rates(family, w, x, b0), delta);
}

double transition_prob(TransitionFamily family, const ChainWeights& w, const Eigen::Ref<const VectorXd>& x,
                       double delta, int from, int to, double b0) {
  if (family == TransitionFamily::sig) {
    const auto [up, um] = sig_logits(w, x);
    const double on = sigmoid(up);
    const double off = sigmoid(um);
    return TransitionTable{1.0 - on, on, off, 1.0 - off}.at(from, to);
  }
  return rate_transition_table(rates(family, w, x, b0), delta).at(from, to);
}

double log_transition_prob(TransitionFamily family, const ChainWeights& w, const Eigen::Ref<const VectorXd>& x,
                           double delta, int from, int to, double b0) {
  return log_transition_table(family, w, x, delta, b0).at(from, to);
}

Calibration calibrate_simulation(TransitionFamily family, double p0, double p1, double mean_weight) {
  if (!(p0 > 0.0 && p0 < p1 && p1 < 1.0)) throw ConfigError("calibration needs 0 < p0 < p1 < 1");
  if (!(mean_weight > 0.0)) throw ConfigError("calibration needs mean_weight > 0");
  switch (family) {
    case TransitionFamily::tp_scaled:
      return {-std::log1p(-p0), -std::log1p(-p1) / mean_weight};
    case TransitionFamily::sig: {
      const double bias = std::log(p0 / (1.0 - p0));
      return {bias, (std::log(p1 / (1.0 - p1)) - bias) / mean_weight};
    }
    case TransitionFamily::tp_exp:
      break;
  }
  throw ConfigError("no simulation calibration is defined for tp-exp");
}

}  // namespace iofhmm
