#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "iofhmm/emission_posterior.hpp"
#include "support.hpp"

using namespace iofhmm;

namespace {

struct Problem {
  ModelSpec spec;
  Dataset data;
  ChainPosterior q_s;
};

Problem random_problem(std::uint64_t seed, Index n_s, Index n_y, Index n_t, CPrior prior) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::bernoulli_distribution keep(0.6);
  std::vector<std::pair<Index, Index>> entries;
  for (Index r = 0; r < n_y; ++r) {
    bool any = false;
    for (Index c = 0; c < n_s; ++c)
      if (keep(rng)) entries.emplace_back(r, c), any = true;
    if (!any) entries.emplace_back(r, r % n_s);
  }
  Problem p;
  p.spec.n_s = n_s;
  p.spec.n_y = n_y;
  p.spec.n_x = 1;
  p.spec.n_t = n_t;
  p.spec.c_structure = SparsePattern(n_y, n_s, entries);
  p.spec.hyper.c_prior = prior;
  p.data.X = MatrixXd::Constant(1, n_t, 0.5);
  p.data.delta = Dataset::uniform_delta(n_t);
  p.data.Y = MatrixXd::NullaryExpr(n_y, n_t, [&] { return 2 * u(rng); });
  p.q_s = ChainPosterior::initial(n_s, n_t, true, 0.9, seed + 1);
  return p;
}

}  // namespace

TEST_CASE("row statistics by hand") {
  ModelSpec spec;
  spec.n_s = 2;
  spec.n_y = 1;
  spec.n_x = 1;
  spec.n_t = 2;
  spec.c_structure = SparsePattern(1, 2, {{0, 0}, {0, 1}});
  Dataset data{MatrixXd::Zero(1, 2), VectorXd::Ones(1), MatrixXd(1, 2)};
  data.Y << 1.0, 3.0;
  ChainPosterior q = ChainPosterior::initial(2, 2, false, 0.0, 0);
  q.mu << 1.0, 0.0, -1.0, 0.0;  // on-probabilities (1, 0.5) and (0, 0.5)
  const RowProblem p = assemble_row_problem(0, spec, data, q, 2.0);
  // h = v sum_t y_t p_t, Q = v sum_t (p p' + diag(p(1-p))).
  CHECK(p.h[0] == doctest::Approx(2.0 * (1.0 + 1.5)));
  CHECK(p.h[1] == doctest::Approx(2.0 * 1.5));
  CHECK(p.Q(0, 0) == doctest::Approx(2.0 * (1.0 + 0.25 + 0.25)));
  CHECK(p.Q(0, 1) == doctest::Approx(2.0 * 0.25));
  CHECK(p.Q(1, 1) == doctest::Approx(2.0 * (0.25 + 0.25)));
}

TEST_CASE("row precision is positive semi-definite") {
  for (std::uint64_t seed = 1; seed < 6; ++seed) {
    const Problem p = random_problem(seed, 5, 6, 9, CPrior::gaussian(0, 1));
    for (Index r = 0; r < p.spec.n_y; ++r) {
      const RowProblem rp = assemble_row_problem(r, p.spec, p.data, p.q_s, 1.7);
      const Eigen::SelfAdjointEigenSolver<MatrixXd> es(rp.Q);
      CHECK(es.eigenvalues().minCoeff() > -1e-12);
    }
  }
}

TEST_CASE("gaussian row posterior is the closed form") {
  const Problem p = random_problem(3, 4, 5, 8, CPrior::gaussian(0.3, 2.0));
  const EmissionPosterior q = update_emission(p.spec, p.data, p.q_s, 1.5, EPConfig{}, nullptr, 1);
  for (Index r = 0; r < p.spec.n_y; ++r) {
    const RowProblem rp = assemble_row_problem(r, p.spec, p.data, p.q_s, 1.5);
    const Index k = rp.h.size();
    const MatrixXd P = rp.Q + MatrixXd::Identity(k, k) / 2.0;
    const VectorXd mean = P.llt().solve(rp.h + VectorXd::Constant(k, 0.3 / 2.0));
    const auto& row = q.rows[static_cast<std::size_t>(r)];
    CHECK((row.mean - mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((row.cov - P.inverse()).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(q.all_converged());
}

TEST_CASE("one-dimensional Laplace row matches quadrature") {
  RowProblem rp;
  rp.support = {0};
  for (double h : {-3.0, 0.2, 4.0})
    for (double Q : {0.5, 5.0}) {
      rp.h = VectorXd::Constant(1, h);
      rp.Q = MatrixXd::Constant(1, 1, Q);
      const double rate = std::sqrt(0.5);
      const RowPosterior row = solve_row(rp, CPrior::double_exponential(rate), EPConfig{});
      const test::Moments want =
          test::tilted_oracle([&](double c) { return 0.5 * rate * std::exp(-rate * std::abs(c)); }, h / Q, 1 / Q, {0.0});
      CHECK(row.mean[0] == doctest::Approx(want.mean).epsilon(1e-6));
      CHECK(row.cov(0, 0) == doctest::Approx(want.var).epsilon(1e-6));
      const double log_base = 0.5 * h * h / Q + 0.5 * std::log(2 * std::numbers::pi / Q);
      CHECK(row.log_evidence == doctest::Approx(std::log(want.z) + log_base).epsilon(1e-6));
    }
}

TEST_CASE("expected residual matches enumeration and Monte Carlo") {
  Problem p = random_problem(7, 3, 4, 5, CPrior::gaussian(0, 1));
  const EmissionPosterior q = update_emission(p.spec, p.data, p.q_s, 2.0, EPConfig{}, nullptr, 1);
  double exact = 0.0;
  for (Index r = 0; r < p.spec.n_y; ++r) {
    const auto& row = q.rows[static_cast<std::size_t>(r)];
    const Index k = static_cast<Index>(row.support.size());
    for (Index t = 0; t < p.spec.n_t; ++t)
      for (unsigned bits = 0; bits < (1u << k); ++bits) {
        VectorXd x(k);
        double prob = 1.0;
        for (Index a = 0; a < k; ++a) {
          const double on = 0.5 * (1 + p.q_s.mu(row.support[static_cast<std::size_t>(a)], t));
          x[a] = (bits >> a) & 1u;
          prob *= x[a] ? on : 1 - on;
        }
        const double fit = p.data.Y(r, t) - row.mean.dot(x);
        exact += prob * (fit * fit + x.dot(row.cov * x));
      }
  }
  const double got = expected_residual(p.spec, p.data, p.q_s, q);
  CHECK(got == doctest::Approx(exact).epsilon(1e-12));

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u01;
  std::normal_distribution<double> g;
  const int draws = 40000;
  double mc = 0.0, mc2 = 0.0;
  for (int d = 0; d < draws; ++d) {
    double total = 0.0;
    for (Index r = 0; r < p.spec.n_y; ++r) {
      const auto& row = q.rows[static_cast<std::size_t>(r)];
      const Index k = static_cast<Index>(row.support.size());
      const MatrixXd L = row.cov.llt().matrixL();
      VectorXd z(k);
      for (Index a = 0; a < k; ++a) z[a] = g(rng);
      const VectorXd c = row.mean + L * z;
      for (Index t = 0; t < p.spec.n_t; ++t) {
        double fit = p.data.Y(r, t);
        for (Index a = 0; a < k; ++a)
          if (u01(rng) < 0.5 * (1 + p.q_s.mu(row.support[static_cast<std::size_t>(a)], t))) fit -= c[a];
        total += fit * fit;
      }
    }
    mc += total;
    mc2 += total * total;
  }
  const double mean = mc / draws, sd = std::sqrt((mc2 / draws - mean * mean) / draws);
  CHECK(std::abs(mean - got) < 5 * sd);
}

TEST_CASE("noise update") {
  Problem p = random_problem(11, 3, 4, 6, CPrior::gaussian(0, 1));
  const EmissionPosterior q = update_emission(p.spec, p.data, p.q_s, 1.0, EPConfig{}, nullptr, 1);
  const GammaParams prior{1.0, 0.1};
  const GammaParams post = update_noise(p.spec, p.data, p.q_s, q, prior);
  CHECK(post.shape == doctest::Approx(1.0 + 0.5 * 4 * 6));
  CHECK(post.rate == doctest::Approx(0.1 + 0.5 * expected_residual(p.spec, p.data, p.q_s, q)));

  SUBCASE("perfect fit leaves the prior rate") {
    ModelSpec spec = p.spec;
    Dataset data = p.data;
    const StateMatrix S{Eigen::MatrixXi::Constant(spec.n_s, spec.n_t, -1)};
    data.Y.setZero();
    const ChainPosterior point = ChainPosterior::from_states(S);
    const EmissionPosterior zero = update_emission(spec, data, point, 1.0, EPConfig{}, nullptr, 1);
    CHECK(update_noise(spec, data, point, zero, prior).rate == doctest::Approx(0.1).epsilon(1e-14));
  }
}

TEST_CASE("row order and threading do not change the solution") {
  const Problem p = random_problem(13, 4, 7, 10, CPrior::double_exponential(1.0));
  const EmissionPosterior a = update_emission(p.spec, p.data, p.q_s, 1.3, EPConfig{}, nullptr, 1);
  const EmissionPosterior b = update_emission(p.spec, p.data, p.q_s, 1.3, EPConfig{}, nullptr, 4);

  std::vector<Index> perm(7);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::reverse(perm.begin(), perm.end());
  Problem rev = p;
  std::vector<std::pair<Index, Index>> entries;
  for (auto [r, c] : p.spec.c_structure.entries()) entries.emplace_back(perm[static_cast<std::size_t>(r)], c);
  std::sort(entries.begin(), entries.end());
  rev.spec.c_structure = SparsePattern(7, 4, entries);
  for (Index r = 0; r < 7; ++r) rev.data.Y.row(perm[static_cast<std::size_t>(r)]) = p.data.Y.row(r);
  const EmissionPosterior c = update_emission(rev.spec, rev.data, rev.q_s, 1.3, EPConfig{}, nullptr, 1);
  for (Index r = 0; r < 7; ++r) {
    const auto& ra = a.rows[static_cast<std::size_t>(r)];
    CHECK(ra.mean == b.rows[static_cast<std::size_t>(r)].mean);
    const auto& rc = c.rows[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])];
    CHECK((ra.mean - rc.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ra.cov - rc.cov).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Laplace row mode satisfies the optimality conditions") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    RowProblem rp;
    rp.support = {0, 1, 2};
    rp.Q = test::random_spd(rng, 3, 0.3);
    rp.h = test::random_vector(rng, 3, 2.0);
    const double rate = 0.8;
    const VectorXd c = laplace_row_mode(rp, rate, 1e-13);
    const VectorXd grad = rp.h - rp.Q * c;
    for (Index j = 0; j < 3; ++j) {
      if (c[j] != 0.0)
        CHECK(grad[j] == doctest::Approx(rate * (c[j] > 0 ? 1 : -1)).epsilon(1e-8));
      else
        CHECK(std::abs(grad[j]) <= rate + 1e-10);
    }
  }
}

TEST_CASE("prior moments before any data") {
  ModelSpec spec;
  spec.n_s = 2;
  spec.n_y = 2;
  spec.n_x = 1;
  spec.n_t = 3;
  spec.c_structure = SparsePattern(2, 2, {{0, 0}, {1, 0}, {1, 1}});
  spec.hyper.c_prior = CPrior::double_exponential(2.0);
  const EmissionPosterior q = EmissionPosterior::from_prior(spec);
  CHECK(q.rows[1].mean.isZero());
  CHECK(q.rows[1].cov(1, 1) == doctest::Approx(2.0 / 4.0));  // Laplace variance 2 / rate^2
  const SparseMatrix var = q.variance_matrix(spec.c_structure);
  CHECK(var.values.size() == 3);
}
