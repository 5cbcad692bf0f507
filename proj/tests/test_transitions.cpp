#include <doctest.h>

#include <cmath>
#include <random>

#include "iofhmm/errors.hpp"
#include "iofhmm/transitions.hpp"
#include "support.hpp"

using namespace iofhmm;

namespace {

ChainWeights weights(VectorXd plus, VectorXd minus, double bp = 0.0, double bm = 0.0) {
  return {std::move(plus), std::move(minus), bp, bm};
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

// Transition probabilities for fixed rates without going through the family code.
double p_on_direct(double fp, double fm, double delta) {
  const double r = fp + fm;
  return fp * (1.0 - std::exp(-delta * r)) / r;
}

}  // namespace

TEST_CASE("rates") {
  const double b0 = 0.0513;
  SUBCASE("tp-scaled zero weights give the base rate") {
    const RatePair r = rates(TransitionFamily::tp_scaled, ChainWeights::zeros(3), vec({0.2, 0.5, 1.0}), b0);
    CHECK(r.f_plus == doctest::Approx(b0));
    CHECK(r.f_minus == doctest::Approx(b0));
  }
  SUBCASE("tp-scaled single active weight") {
    const RatePair r = rates(TransitionFamily::tp_scaled, weights(vec({1, 0, 0}), vec({0, 0, 0})), vec({1, 1, 1}), b0);
    CHECK(r.f_plus == doctest::Approx(1.0513).epsilon(1e-14));
    CHECK(r.f_minus == doctest::Approx(0.0513).epsilon(1e-14));
  }
  SUBCASE("tp-exp zero weights and bias give unit rate") {
    const RatePair r = rates(TransitionFamily::tp_exp, ChainWeights::zeros(2), vec({0.3, -2.0}), b0);
    CHECK(r.f_plus == doctest::Approx(1.0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(rates(TransitionFamily::sig, ChainWeights::zeros(1), vec({0.5}), b0), ConfigError);
    CHECK_THROWS_AS(rates(TransitionFamily::tp_scaled, ChainWeights::zeros(1), vec({1.5}), b0), DataError);
  }
}

TEST_CASE("integrated transition probabilities") {
  SUBCASE("long lag reaches the stationary probability") {
    // f+ = f- = 1 through tp-exp with zero weights and biases.
    const double p = transition_prob(TransitionFamily::tp_exp, ChainWeights::zeros(1), vec({0.0}), 1e3, -1, 1, 0.0);
    CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("short lag reverts to the infinitesimal rate") {
    // f+ = 2: tp-exp with b+ = log 2.
    const ChainWeights w = weights(vec({0.0}), vec({0.0}), std::log(2.0), 0.0);
    const double p = transition_prob(TransitionFamily::tp_exp, w, vec({0.0}), 1e-6, -1, 1, 0.0);
    CHECK(std::abs(p - 2e-6) / 2e-6 < 0.01);
  }
  SUBCASE("sig at zero logit") {
    CHECK(transition_prob(TransitionFamily::sig, ChainWeights::zeros(2), vec({1, 1}), 1.0, -1, 1, 0.0) ==
          doctest::Approx(0.5));
  }
  SUBCASE("non-positive lag is rejected for tp families") {
    CHECK_THROWS_AS(transition_prob(TransitionFamily::tp_exp, ChainWeights::zeros(1), vec({0.0}), 0.0, -1, 1, 0.0),
                    DataError);
  }
}

TEST_CASE("log probabilities round-trip and stay finite") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  for (int k = 0; k < 200; ++k) {
    const auto family = std::array{TransitionFamily::sig, TransitionFamily::tp_scaled, TransitionFamily::tp_exp}[k % 3];
    ChainWeights w{VectorXd(3), VectorXd(3), g(rng), g(rng)};
    VectorXd x(3);
    for (Index j = 0; j < 3; ++j) {
      w.w_plus[j] = family == TransitionFamily::tp_scaled ? 3 * u(rng) : g(rng);
      w.w_minus[j] = family == TransitionFamily::tp_scaled ? 3 * u(rng) : g(rng);
      x[j] = u(rng);
    }
    const double delta = 0.1 + 3 * u(rng);
    for (int from : {-1, 1})
      for (int to : {-1, 1}) {
        const double p = transition_prob(family, w, x, delta, from, to, 0.0513);
        const double lp = log_transition_prob(family, w, x, delta, from, to, 0.0513);
        CHECK(std::abs(std::exp(lp) - p) < 1e-12);
        CHECK(std::isfinite(lp));
      }
    for (int from : {-1, 1}) {
      const double sum = transition_prob(family, w, x, delta, from, 1, 0.0513) +
                         transition_prob(family, w, x, delta, from, -1, 0.0513);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  SUBCASE("sig deep in the tail") {
    const ChainWeights w = weights(vec({0.0}), vec({0.0}), -40.0, 0.0);
    CHECK(log_transition_prob(TransitionFamily::sig, w, vec({1.0}), 1.0, -1, 1, 0.0) ==
          doctest::Approx(-40.0).epsilon(1e-15));
  }
  SUBCASE("symmetric rates give symmetric switching") {
    const ChainWeights w = weights(vec({0.7}), vec({0.7}));
    const double on = log_transition_prob(TransitionFamily::tp_scaled, w, vec({0.4}), 1.0, -1, 1, 0.05);
    const double off = log_transition_prob(TransitionFamily::tp_scaled, w, vec({0.4}), 1.0, 1, -1, 0.05);
    CHECK(on == doctest::Approx(off).epsilon(1e-15));
  }
}

TEST_CASE("monotone in the lag and bounded by the stationary probability") {
  const RatePair r{0.8, 0.3};
  double prev = 0.0;
  for (double delta = 1e-3; delta < 50.0; delta *= 1.5) {
    const double p = rate_transition_table(r, delta).turn_on;
    CHECK(p > prev);
    CHECK(p <= r.f_plus / (r.f_plus + r.f_minus) + 1e-15);
    CHECK(p == doctest::Approx(p_on_direct(r.f_plus, r.f_minus, delta)).epsilon(1e-12));
    prev = p;
  }
}

TEST_CASE("lag limits") {
  for (double fp : {0.05, 1.0, 7.0})
    for (double fm : {0.05, 2.0}) {
      const RatePair r{fp, fm};
      const double tiny = 0.5e-4 / (fp + fm);
      CHECK(std::abs(rate_transition_table(r, tiny).turn_on - tiny * fp) / (tiny * fp) < 1e-3);
      const double big = 31.0 / (fp + fm);
      CHECK(std::abs(rate_transition_table(r, big).turn_on - fp / (fp + fm)) < 1e-6);
    }
}

TEST_CASE("tp-scaled exchange symmetry") {
  const ChainWeights w = weights(vec({0.4, 1.2}), vec({2.0, 0.1}));
  const ChainWeights swapped = weights(w.w_minus, w.w_plus);
  const VectorXd x = vec({0.3, 0.9});
  const VectorXd flipped = VectorXd::Ones(2) - x;
  const RatePair a = rates(TransitionFamily::tp_scaled, w, x, 0.05);
  const RatePair b = rates(TransitionFamily::tp_scaled, swapped, flipped, 0.05);
  CHECK(a.f_plus == doctest::Approx(b.f_plus).epsilon(1e-15));
  CHECK(a.f_minus == doctest::Approx(b.f_minus).epsilon(1e-15));
}

TEST_CASE("rate gradients match finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 4.0);
  for (int k = 0; k < 50; ++k) {
    const RatePair r{u(rng), u(rng)};
    const double delta = u(rng);
    const TransitionTableGrad g = log_rate_transition_grad(r, delta);
    const double h = 1e-6;
    const auto fd = [&](double dp, double dm) {
      const auto hi = log_rate_transition_table({r.f_plus + dp, r.f_minus + dm}, delta).as_matrix();
      const auto lo = log_rate_transition_table({r.f_plus - dp, r.f_minus - dm}, delta).as_matrix();
      return Eigen::Matrix2d((hi - lo) / (2 * h));
    };
    CHECK((fd(h, 0) - g.d_first.as_matrix()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((fd(0, h) - g.d_second.as_matrix()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("simulation calibration") {
  const Calibration tp = calibrate_simulation(TransitionFamily::tp_scaled, 0.05, 0.95, 1.0);
  CHECK(tp.bias == doctest::Approx(0.051293).epsilon(1e-6));
  CHECK(tp.bias == doctest::Approx(-std::log(0.95)).epsilon(1e-15));
  CHECK(tp.input_scale == doctest::Approx(2.9957).epsilon(1e-5));
  const Calibration sig = calibrate_simulation(TransitionFamily::sig, 0.05, 0.95, 1.0);
  CHECK(sig.bias == doctest::Approx(-2.9444).epsilon(1e-5));
  CHECK(sigmoid(sig.bias) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(sigmoid(sig.bias + 1.0 * sig.input_scale) == doctest::Approx(0.95).epsilon(1e-14));
  CHECK_THROWS_AS(calibrate_simulation(TransitionFamily::tp_scaled, 0.5, 0.4, 1.0), ConfigError);
  CHECK_THROWS_AS(calibrate_simulation(TransitionFamily::tp_exp, 0.05, 0.95, 1.0), ConfigError);
}
