#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "iofhmm/errors.hpp"
#include "iofhmm/model.hpp"
#include "iofhmm/transitions.hpp"
#include "support.hpp"

using namespace iofhmm;

namespace {

// Separate, dense re-implementation of the joint density.
double naive_joint(const ModelSpec& spec, const Dataset& data, const Eigen::MatrixXi& S, const MatrixXd& C,
                   const WeightCollection& W, double v) {
  double total = 0.0;
  for (Index t = 0; t < spec.n_t; ++t)
    for (Index r = 0; r < spec.n_y; ++r) {
      double mean = 0.0;
      for (Index j = 0; j < spec.n_s; ++j) mean += C(r, j) * (1.0 + S(j, t)) / 2.0;
      const double d = data.Y(r, t) - mean;
      total += 0.5 * std::log(v / (2.0 * std::numbers::pi)) - 0.5 * v * d * d;
    }
  for (Index i = 0; i < spec.n_s; ++i) {
    const auto& w = W[static_cast<std::size_t>(i)];
    for (Index t = 0; t + 1 < spec.n_t; ++t) {
      const VectorXd x = data.X.col(t);
      double p_on, p_off;
      if (spec.family == TransitionFamily::sig) {
        p_on = 1.0 / (1.0 + std::exp(-(w.w_plus.dot(x) + w.b_plus)));
        p_off = 1.0 / (1.0 + std::exp(-(w.w_minus.dot(x) + w.b_minus)));
      } else {
        double fp, fm;
        if (spec.family == TransitionFamily::tp_scaled) {
          const VectorXd one_minus = VectorXd::Ones(x.size()) - x;
          fp = w.w_plus.dot(x) + w.w_minus.dot(one_minus) + spec.hyper.b0;
          fm = w.w_minus.dot(x) + w.w_plus.dot(one_minus) + spec.hyper.b0;
        } else {
          fp = std::exp(w.w_plus.dot(x) + w.b_plus);
          fm = std::exp(w.w_minus.dot(x) + w.b_minus);
        }
        const double r = fp + fm;
        p_on = fp * (1.0 - std::exp(-data.delta[t] * r)) / r;
        p_off = fm * (1.0 - std::exp(-data.delta[t] * r)) / r;
      }
      const int a = S(i, t), b = S(i, t + 1);
      double p;
      if (a == -1) p = b == 1 ? p_on : 1.0 - p_on;
      else p = b == -1 ? p_off : 1.0 - p_off;
      total += std::log(p);
    }
  }
  const auto& cp = spec.hyper.c_prior;
  for (const auto& [r, j] : spec.c_structure.entries()) {
    const double c = C(r, j);
    if (cp.kind == CPriorKind::double_exponential) total += std::log(cp.rate / 2) - cp.rate * std::abs(c);
    else total += -0.5 * std::log(2 * std::numbers::pi * cp.variance) - 0.5 * (c - cp.mean) * (c - cp.mean) / cp.variance;
  }
  for (const auto& w : W) {
    for (Index j = 0; j < spec.n_x; ++j)
      for (double x : {w.w_plus[j], w.w_minus[j]}) {
        const double rate = spec.hyper.w_prior.rate;
        total += spec.hyper.w_prior.kind == WPriorKind::exponential ? std::log(rate) - rate * x
                                                                     : std::log(rate / 2) - rate * std::abs(x);
      }
    if (spec.family != TransitionFamily::tp_scaled)
      for (double b : {w.b_plus, w.b_minus}) {
        const auto& bp = spec.hyper.bias_prior;
        total += -0.5 * std::log(2 * std::numbers::pi * bp.variance) - 0.5 * (b - bp.mean) * (b - bp.mean) / bp.variance;
      }
  }
  const auto& g = spec.hyper.v_prior;
  total += g.shape * std::log(g.rate) - std::lgamma(g.shape) + (g.shape - 1) * std::log(v) - g.rate * v;
  return total;
}

struct Instance {
  ModelSpec spec;
  Dataset data;
  StateMatrix S;
  SparseMatrix C;
  WeightCollection W;
};

Instance tiny(TransitionFamily family, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance in;
  in.spec.n_s = 2;
  in.spec.n_y = 3;
  in.spec.n_x = 2;
  in.spec.n_t = 3;
  in.spec.family = family;
  in.spec.c_structure = SparsePattern(3, 2, {{0, 0}, {1, 1}, {2, 0}, {2, 1}});
  in.spec.hyper.c_prior = CPrior::gaussian(0.3, 2.0);
  in.spec.hyper.w_prior = {family == TransitionFamily::tp_exp ? WPriorKind::double_exponential : WPriorKind::exponential,
                           1.5};
  in.spec.hyper.bias_prior = {-1.0, 2.0};
  in.spec.hyper.v_prior = {2.0, 0.5};
  in.data.X = MatrixXd(2, 3);
  for (Index k = 0; k < 6; ++k) in.data.X(k % 2, k / 2) = u(rng);
  in.data.delta = VectorXd::Constant(2, 0.7);
  in.data.delta[1] = 1.3;
  in.data.Y = test::random_vector(rng, 9).reshaped(3, 3);
  in.S.S = Eigen::MatrixXi(2, 3);
  in.S.S << -1, 1, 1, -1, -1, 1;
  in.C = SparseMatrix::zeros(in.spec.c_structure);
  for (Index k = 0; k < 4; ++k) in.C.values[k] = g(rng);
  for (int i = 0; i < 2; ++i) {
    ChainWeights w{VectorXd(2), VectorXd(2), g(rng), g(rng)};
    for (Index j = 0; j < 2; ++j) {
      w.w_plus[j] = std::abs(g(rng));
      w.w_minus[j] = std::abs(g(rng));
    }
    in.W.push_back(w);
  }
  return in;
}

}  // namespace

TEST_CASE("emission term of a single zero observation is -log(2 pi)/2 per time step") {
  ModelSpec spec;
  spec.n_s = 1;
  spec.n_y = 1;
  spec.n_x = 1;
  spec.n_t = 2;
  spec.family = TransitionFamily::tp_scaled;
  spec.c_structure = SparsePattern(1, 1, {{0, 0}});
  spec.hyper.c_prior = CPrior::flat();
  Dataset data{MatrixXd::Zero(1, 2), VectorXd::Ones(1), MatrixXd::Zero(1, 2)};
  StateMatrix S{Eigen::MatrixXi::Constant(1, 2, -1)};
  SparseMatrix C = SparseMatrix::zeros(spec.c_structure);
  WeightCollection W{ChainWeights::zeros(1)};
  const double total = joint_log_density(spec, data, S, C, W, 1.0);
  const double others = log_transition_prob(spec.family, W[0], data.X.col(0), 1.0, -1, -1, spec.hyper.b0) +
                        spec.hyper.c_prior.log_density(0.0) + 2 * spec.hyper.w_prior.log_density(0.0) +
                        spec.hyper.v_prior.log_density(1.0);
  CHECK((total - others) / 2.0 == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("state values other than +-1 are rejected") {
  Instance in = tiny(TransitionFamily::tp_scaled, 1);
  in.S.S(0, 1) = 0;
  CHECK_THROWS_AS(joint_log_density(in.spec, in.data, in.S, in.C, in.W, 1.0), DataError);
}

TEST_CASE("joint density equals a factor-by-factor dense recomputation") {
  for (auto family : {TransitionFamily::tp_scaled, TransitionFamily::tp_exp, TransitionFamily::sig}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Instance in = tiny(family, seed);
      const double v = 1.7;
      const double got = joint_log_density(in.spec, in.data, in.S, in.C, in.W, v);
      const double want = naive_joint(in.spec, in.data, in.S.S, in.C.to_dense(), in.W, v);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("joint density is additive over emission terms") {
  Instance in = tiny(TransitionFamily::tp_scaled, 3);
  const double v = 0.8;
  const double base = joint_log_density(in.spec, in.data, in.S, in.C, in.W, v);
  Dataset moved = in.data;
  moved.Y(1, 2) += 0.9;
  const double changed = joint_log_density(in.spec, moved, in.S, in.C, in.W, v);
  const VectorXd mean = emission_mean(in.C, in.S.S.col(2));
  const double before = -0.5 * v * std::pow(in.data.Y(1, 2) - mean[1], 2);
  const double after = -0.5 * v * std::pow(moved.Y(1, 2) - mean[1], 2);
  CHECK(changed - base == doctest::Approx(after - before).epsilon(1e-12));
}

TEST_CASE("tp-scaled rejects inputs outside [0,1]") {
  Instance in = tiny(TransitionFamily::tp_scaled, 2);
  in.data.X(0, 0) = 1.2;
  CHECK_THROWS_AS(joint_log_density(in.spec, in.data, in.S, in.C, in.W, 1.0), DataError);
}

TEST_CASE("emission mean") {
  SparsePattern p(3, 2, {{0, 0}, {1, 0}, {1, 1}, {2, 1}});
  SparseMatrix C = SparseMatrix::zeros(p);
  C.values << 1.5, -2.0, 0.25, 3.0;
  SUBCASE("all off gives zero") { CHECK(emission_mean(C, Eigen::VectorXi::Constant(2, -1)).isZero(0.0)); }
  SUBCASE("all on gives row sums") {
    const VectorXd m = emission_mean(C, Eigen::VectorXi::Constant(2, 1));
    CHECK(m.isApprox(C.to_dense().rowwise().sum()));
  }
  SUBCASE("mixed states match the dense product") {
    Eigen::VectorXi s(2);
    s << 1, -1;
    const VectorXd dense = C.to_dense() * ((s.cast<double>().array() + 1.0) / 2.0).matrix();
    CHECK((emission_mean(C, s) - dense).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("dimension mismatch") { CHECK_THROWS_AS(emission_mean(C, Eigen::VectorXi::Constant(3, 1)), DataError); }
}

TEST_CASE("spec and hyperparameter validation") {
  Instance in = tiny(TransitionFamily::tp_scaled, 4);
  CHECK_NOTHROW(in.spec.validate());
  ModelSpec bad = in.spec;
  bad.c_structure = SparsePattern(3, 2, {{0, 0}, {2, 0}});
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // chain 1 drives nothing
  bad = in.spec;
  bad.n_t = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(SparsePattern(2, 2, {{0, 0}, {0, 0}}), DataError);
  CHECK_THROWS_AS(SparsePattern(2, 2, {{2, 0}}), DataError);
  Hyperparameters h;
  h.v_prior.shape = 0.0;
  CHECK_THROWS_AS(h.validate(TransitionFamily::tp_scaled), ConfigError);
  Hyperparameters e;
  e.w_prior.kind = WPriorKind::exponential;
  CHECK_THROWS_AS(e.validate(TransitionFamily::tp_exp), ConfigError);
  Dataset d = in.data;
  d.delta[0] = 0.0;
  CHECK_THROWS_AS(d.validate(in.spec), DataError);
  d = in.data;
  d.Y(0, 0) = std::nan("");
  CHECK_THROWS_AS(d.validate(in.spec), DataError);
}

TEST_CASE("gamma helpers") {
  const GammaParams g{16.0, 16.0};
  CHECK(g.mean() == doctest::Approx(1.0));
  CHECK(g.shape / (g.rate * g.rate) == doctest::Approx(0.0625));
  // E[log v] and entropy against quadrature.
  auto pdf = [&](double v) { return std::exp(g.log_density(v)); };
  const double e_log = test::integrate([&](double v) { return std::log(v) * pdf(v); }, 0.0, 10.0, {1.0});
  const double h = test::integrate([&](double v) { return -g.log_density(v) * pdf(v); }, 0.0, 10.0, {1.0});
  CHECK(g.mean_log() == doctest::Approx(e_log).epsilon(1e-10));
  CHECK(g.entropy() == doctest::Approx(h).epsilon(1e-10));
}
