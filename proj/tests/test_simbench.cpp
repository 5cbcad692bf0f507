#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "iofhmm/errors.hpp"
#include "iofhmm/simbench.hpp"
#include "iofhmm/transitions.hpp"

using namespace iofhmm;

namespace {


std::vector<double> as_vector(const MatrixXd& X, Index r) {
  std::vector<double> out;
  for (Index t = 0; t < X.cols(); ++t) out.push_back(X(r, t));
  return out;
}

}  // namespace

TEST_CASE("tp-scaled inputs step at the documented indices") {
  SimDesign d;
  d.T = 9;
  const SimInputs in = generate_inputs(d);
  REQUIRE(in.X.cols() == 9);
  CHECK(as_vector(in.X, 0) == std::vector<double>{0, 0, 0, 1, 1, 1, 1, 1, 1});
  CHECK(as_vector(in.X, 1) == std::vector<double>{0, 0, 0, 0, 0, 0, 1, 1, 1});
  CHECK(as_vector(in.X, 2) == std::vector<double>{1, 1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(in.delta == VectorXd::Ones(8));
  CHECK((in.X.array() >= 0).all());
  CHECK((in.X.array() <= 1).all());
}

TEST_CASE("sig inputs threshold sinusoids at zero") {
  SimDesign d;
  d.family = TransitionFamily::sig;
  d.T = 12;
  const SimInputs in = generate_inputs(d);
  const double scale = calibrate_simulation(TransitionFamily::sig, d.p0, d.p1, d.mean_w).input_scale;
  REQUIRE(in.X.cols() == 13);
  CHECK(in.X(0, 0) == scale);  // sin(0) = 0 counts as on
  CHECK(in.X(1, 0) == scale);
  CHECK(in.X(2, 0) == scale);
  CHECK(in.X(0, 9) == 0.0);  // sin(3 pi / 2) < 0
  CHECK(in.X(2, 3) == 0.0);  // cos(pi) < 0
  CHECK(((in.X.array() == 0.0) || (in.X.array() == scale)).all());
}

TEST_CASE("gamma weights reproduce the design mean and variance") {
  SimDesign d;
  CHECK(d.mean_w * d.mean_w / d.var_w == doctest::Approx(16.0));
  CHECK(d.mean_w / d.var_w == doctest::Approx(16.0));
  d.n_s = 200;
  d.n_y = 200;
  const SimInstance inst = generate_instance(d, 5);
  const double scale = calibrate_simulation(TransitionFamily::tp_scaled, d.p0, d.p1, d.mean_w).input_scale;
  std::vector<double> draws;
  for (std::size_t i = 0; i < inst.true_W.size(); ++i)
    for (Index j = 0; j < 3; ++j) {
      const double p = inst.true_W[i].w_plus[j], m = inst.true_W[i].w_minus[j];
      CHECK(!(p > 0 && m > 0));
      if (p > 0) draws.push_back(p / scale);
      if (m > 0) draws.push_back(m / scale);
    }
  double mean = 0, var = 0;
  for (double x : draws) mean += x;
  mean /= static_cast<double>(draws.size());
  for (double x : draws) var += (x - mean) * (x - mean);
  var /= static_cast<double>(draws.size() - 1);
  const double se = std::sqrt(0.0625 / static_cast<double>(draws.size()));
  CHECK(std::abs(mean - 1.0) < 4 * se);
  CHECK(std::abs(var / 0.0625 - 1) < 0.2);
}

TEST_CASE("instances respect the clamp and the pattern") {
  SimDesign d;
  const SimInstance inst = generate_instance(d, replicate_seed(d.seed, 0));
  CHECK((inst.true_S.S.col(0).array() == -1).all());
  REQUIRE(inst.true_pattern.size() == static_cast<std::size_t>(d.n_s * 6));
  for (Index i = 0; i < d.n_s; ++i)
    for (Index j = 0; j < 3; ++j) {
      const int p = inst.true_pattern[static_cast<std::size_t>(6 * i + j)];
      const int m = inst.true_pattern[static_cast<std::size_t>(6 * i + 3 + j)];
      CHECK(p + m <= 1);
      CHECK((p == 1) == (inst.true_W[static_cast<std::size_t>(i)].w_plus[j] > 0));
    }
  CHECK_NOTHROW(inst.spec.validate());
  CHECK_NOTHROW(inst.data.validate(inst.spec));
  const SimInstance again = generate_instance(d, replicate_seed(d.seed, 0));
  CHECK(again.data.Y == inst.data.Y);
  CHECK(again.true_C.values == inst.true_C.values);
  CHECK(replicate_seed(1, 0) != replicate_seed(1, 1));
}

TEST_CASE("zero-noise data equals the emission mean") {
  SimDesign d;
  d.noise_variance = 0.0;
  const SimInstance inst = generate_instance(d, 3);
  for (Index t = 0; t < inst.spec.n_t; ++t)
    CHECK(inst.data.Y.col(t) == emission_mean(inst.true_C, inst.true_S.S.col(t)));
}

TEST_CASE("unstimulated chains switch on at the base rate") {
  SimDesign d;
  d.n_s = 40;
  d.n_y = 40;
  d.T = 3000;
  double off_steps = 0, switches = 0;
  for (std::uint64_t seed = 1; off_steps < 1e5 && seed < 100; ++seed) {
    const SimInstance inst = generate_instance(d, seed);
    for (Index i = 0; i < d.n_s; ++i) {
      const auto& w = inst.true_W[static_cast<std::size_t>(i)];
      if (!w.w_plus.isZero() || !w.w_minus.isZero()) continue;
      for (Index t = 0; t + 1 < inst.spec.n_t; ++t)
        if (inst.true_S.S(i, t) == -1) {
          off_steps += 1;
          switches += inst.true_S.S(i, t + 1) == 1;
        }
    }
  }
  REQUIRE(off_steps >= 1e5);
  const double freq = switches / off_steps;
  // Both rates equal b0, so the integrated switching probability is (1 - exp(-2 b0)) / 2.
  const double b0 = -std::log(0.95);
  const double p = 0.5 * -std::expm1(-2 * b0);
  CHECK(p == doctest::Approx(transition_prob(TransitionFamily::tp_scaled, ChainWeights::zeros(3), VectorXd::Zero(3), 1.0,
                                             -1, 1, b0)));
  CHECK(std::abs(freq - p) < 3 * std::sqrt(p * (1 - p) / off_steps));
  CHECK(std::abs(freq - 0.05) < 0.005);
}

TEST_CASE("sampled transitions fit the transition probabilities") {
  SimDesign d;
  d.n_s = 4;
  d.n_y = 4;
  d.T = 25000;
  const SimInstance inst = generate_instance(d, 77);
  // Inputs are piecewise constant; pool steps by chain, input segment and departure state.
  double chi2 = 0;
  int cells = 0;
  for (Index i = 0; i < d.n_s; ++i) {
    std::map<std::pair<std::vector<double>, int>, std::pair<double, double>> pooled;
    std::map<std::pair<std::vector<double>, int>, double> prob;
    for (Index t = 0; t + 1 < inst.spec.n_t; ++t) {
      const int from = inst.true_S.S(i, t);
      auto key_full = std::pair{std::vector<double>(inst.data.X.col(t).data(), inst.data.X.col(t).data() + 3), from};
      prob[key_full] = transition_prob(TransitionFamily::tp_scaled, inst.true_W[static_cast<std::size_t>(i)],
                                       inst.data.X.col(t), 1.0, from, 1, inst.spec.hyper.b0);
      auto& [n, on] = pooled[key_full];
      n += 1;
      on += inst.true_S.S(i, t + 1) == 1;
    }
    for (const auto& [key, counts] : pooled) {
      const double p = prob[key];
      if (counts.first * std::min(p, 1 - p) < 5) continue;
      chi2 += std::pow(counts.second - counts.first * p, 2) / (counts.first * p * (1 - p));
      ++cells;
    }
  }
  REQUIRE(cells > 4);
  const boost::math::chi_squared dist(cells);
  CHECK(chi2 < boost::math::quantile(dist, 0.99));
}

TEST_CASE("ROC recovery") {
  SUBCASE("hand-enumerated four-point curve") {
    const RocCurve roc = roc_recovery({1, 0, 1, 0}, (VectorXd(4) << 0.9, 0.8, 0.3, 0.1).finished());
    CHECK(std::isinf(roc.thresholds[0]));
    CHECK(roc.fpr == std::vector<double>{0, 0, 0.5, 0.5, 1});
    CHECK(roc.tpr == std::vector<double>{0, 0.5, 0.5, 1, 1});
    CHECK(roc.auc == doctest::Approx(0.75));
    CHECK(tpr_at(roc, 0.25) == doctest::Approx(0.5));
    CHECK(tpr_at(roc, 0.5) == doctest::Approx(1.0));
  }
  SUBCASE("constant scores give the diagonal") {
    const RocCurve roc = roc_recovery({1, 0, 0, 1, 0}, VectorXd::Constant(5, 0.3));
    CHECK(roc.fpr == std::vector<double>{0, 1});
    CHECK(roc.tpr == std::vector<double>{0, 1});
    CHECK(roc.auc == doctest::Approx(0.5));
  }
  SUBCASE("perfect ranking") {
    CHECK(roc_recovery({0, 1, 1, 0}, (VectorXd(4) << 0, 1, 1, 0).finished()).auc == 1.0);
  }
  SUBCASE("degenerate truth") {
    const RocCurve roc = roc_recovery({0, 0, 0}, VectorXd::Ones(3));
    CHECK_FALSE(roc.defined);
    CHECK(std::isnan(roc.auc));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(roc_recovery({0, 1}, VectorXd::Ones(3)), DataError);
  }
}

TEST_CASE("shuffled scores score at chance") {
  SimDesign d;
  std::mt19937_64 rng(123);
  double total = 0;
  int used = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const SimInstance inst = generate_instance(d, replicate_seed(9, rep));
    VectorXd scores = weight_scores(inst.true_W);
    std::shuffle(scores.data(), scores.data() + scores.size(), rng);
    const RocCurve roc = roc_recovery(inst.true_pattern, scores);
    if (!roc.defined) continue;
    total += roc.auc;
    ++used;
  }
  CHECK(std::abs(total / used - 0.5) < 0.1);
  const SimInstance inst = generate_instance(d, 1);
  CHECK(roc_recovery(inst.true_pattern, weight_scores(inst.true_W)).auc == 1.0);
}

TEST_CASE("benchmark with one replicate has zero-width bands") {
  SimDesign d;
  d.n_s = 3;
  d.n_y = 12;
  d.T = 20;
  d.replicates = 1;
  BenchmarkConfig cfg;
  cfg.loop.restarts = 1;
  cfg.loop.chain_reset_passes = 0;
  cfg.grid_points = 11;
  const BenchmarkResult r = run_benchmark(d, cfg);
  REQUIRE(r.used == 1);
  CHECK(r.fpr_grid.size() == 11);
  for (double s : r.sd_tpr) CHECK(s == 0.0);
  CHECK(r.sd_auc == 0.0);
  CHECK(r.mean_auc == r.aucs[0]);
  CHECK(r.mean_tpr.front() >= 0.0);
  CHECK(r.mean_tpr.back() == doctest::Approx(1.0));
  const BenchmarkResult again = run_benchmark(d, cfg);
  CHECK(again.aucs == r.aucs);
}

TEST_CASE("design priors and validation") {
  SimDesign d;
  const Hyperparameters tp = design_priors(d, TransitionFamily::tp_scaled);
  CHECK(tp.b0 == doctest::Approx(-std::log(0.95)));
  CHECK(tp.w_prior.rate == doctest::Approx(1.0 / calibrate_simulation(TransitionFamily::tp_scaled, 0.05, 0.95, 1.0).input_scale));
  const Hyperparameters sig = design_priors(d, TransitionFamily::sig);
  CHECK(sig.bias_prior.mean == doctest::Approx(std::log(0.05 / 0.95)));
  CHECK(sig.c_prior.kind == CPriorKind::double_exponential);
  d.n_x = 2;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = SimDesign{};
  d.p1 = 0.01;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = SimDesign{};
  d.family = TransitionFamily::tp_exp;
  CHECK_THROWS_AS(generate_inputs(d), ConfigError);
  CHECK_THROWS_AS(random_structure(2, 3, 1, 2, 0), ConfigError);
  const SparsePattern p = random_structure_with_nnz(30, 10, 45, 4);
  CHECK(p.nnz() == 45);
  for (Index c : p.column_counts()) CHECK(c > 0);
}

TEST_CASE("scale instance has the requested shape") {
  const SimInstance inst = generate_scale_instance(ScaleDesign{});
  CHECK(inst.spec.n_y == 1388);
  CHECK(inst.spec.n_s == 181);
  CHECK(inst.spec.c_structure.nnz() == 3314);
  CHECK(inst.data.X.rows() == 7);
  CHECK_NOTHROW(inst.data.validate(inst.spec));
}
