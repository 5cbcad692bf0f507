#pragma once

#include <Eigen/Dense>

#include "iofhmm/model.hpp"

namespace iofhmm {

struct RatePair {
  double f_plus;   // rate of -1 -> +1
  double f_minus;  // rate of +1 -> -1
};

// Four transition probabilities (or their logs) of one chain step, indexed by
// (from, to) state with state index 0 = -1 and 1 = +1.
struct TransitionTable {
  double stay_off;
  double turn_on;
  double turn_off;
  double stay_on;

  double at(int from, int to) const;
  Eigen::Matrix2d as_matrix() const;
};

// Partial derivatives of each log transition probability with respect to the
// two rates (tp families) or the two logits (sig).
struct TransitionTableGrad {
  TransitionTable d_first;   // d/d f_plus (or d/d u_plus)
  TransitionTable d_second;  // d/d f_minus (or d/d u_minus)
};

RatePair rates(TransitionFamily family, const ChainWeights& w, const Eigen::Ref<const VectorXd>& x, double b0);

// sig logits (w+ . x + b+, w- . x + b-).
std::pair<double, double> sig_logits(const ChainWeights& w, const Eigen::Ref<const VectorXd>& x);

double transition_prob(TransitionFamily family, const ChainWeights& w, const Eigen::Ref<const VectorXd>& x,
                       double delta, int from, int to, double b0);
double log_transition_prob(TransitionFamily family, const ChainWeights& w, const Eigen::Ref<const VectorXd>& x,
                           double delta, int from, int to, double b0);

TransitionTable log_transition_table(TransitionFamily family, const ChainWeights& w,
                                     const Eigen::Ref<const VectorXd>& x, double delta, double b0);

// Integrated continuous-time switching probabilities for fixed rates.
TransitionTable rate_transition_table(RatePair r, double delta);
TransitionTable log_rate_transition_table(RatePair r, double delta);
TransitionTableGrad log_rate_transition_grad(RatePair r, double delta);

// sig probabilities from the two logits.
TransitionTable log_sig_transition_table(double u_plus, double u_minus);

struct Calibration {
  double bias;         // b0 for tp-scaled, logit bias for sig
  double input_scale;  // multiplier applied to unit inputs (sig) or weights (tp-scaled)
};

Calibration calibrate_simulation(TransitionFamily family, double p0, double p1, double mean_weight);

double log_sigmoid(double z);
double sigmoid(double z);

}  // namespace iofhmm
