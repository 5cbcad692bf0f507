#include "iofhmm/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/gamma.hpp>

#include "iofhmm/errors.hpp"
#include "iofhmm/parallel.hpp"
#include "iofhmm/transitions.hpp"

namespace iofhmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::vector<EdgePotentials> all_edges(const RunState& st, const Dataset& data, const EPConfig& ep) {
  std::vector<EdgePotentials> edges(static_cast<std::size_t>(st.spec.n_s));
  for (Index i = 0; i < st.spec.n_s; ++i)
    edges[static_cast<std::size_t>(i)] =
        expected_log_transitions(st.q_w.chains[static_cast<std::size_t>(i)], data, st.spec.family, st.spec.hyper.b0, ep);
  return edges;
}

double gaussian_row_block(const RowPosterior& row, const CPrior& prior) {
  const double m0 = prior.effective_mean();
  const double v0 = prior.effective_variance();
  const Index k = row.mean.size();
  if (k == 0) return 0.0;
  double cross = 0.0;
  for (Index j = 0; j < k; ++j) {
    const double d = row.mean[j] - m0;
    cross += 0.5 * (kLog2Pi + std::log(v0)) + (d * d + row.cov(j, j)) / (2.0 * v0);
  }
  const Eigen::LLT<MatrixXd> llt(row.cov);
  if (llt.info() != Eigen::Success) throw ConvergenceError("row covariance is not positive definite");
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double entropy = 0.5 * static_cast<double>(k) * (1.0 + kLog2Pi) + 0.5 * log_det;
  return cross - entropy;
}

double expected_abs(double m, double v) {
  const double s = std::sqrt(v);
  if (s == 0.0) return std::abs(m);
  const double z = m / s;
  return s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * z * z) + m * std::erf(z / std::numbers::sqrt2);
}

double laplace_row_block(const RowPosterior& row, double rate) {
  const Index k = row.mean.size();
  if (k == 0) return 0.0;
  double cross = 0.0;
  for (Index j = 0; j < k; ++j) cross += -std::log(0.5 * rate) + rate * expected_abs(row.mean[j], row.cov(j, j));
  const Eigen::LLT<MatrixXd> llt(row.cov);
  if (llt.info() != Eigen::Success) throw ConvergenceError("row covariance is not positive definite");
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return cross - (0.5 * static_cast<double>(k) * (1.0 + kLog2Pi) + 0.5 * log_det);
}

double gamma_kl(const GammaParams& q, const GammaParams& p) {
  const double e_log = q.mean_log();
  const double cross = -(p.shape * std::log(p.rate) - boost::math::lgamma(p.shape) + (p.shape - 1.0) * e_log -
                         p.rate * q.mean());
  return cross - q.entropy();
}

std::string block_error(Block b, int iteration, const std::exception& e) {
  return "block " + to_string(b) + ", iteration " + std::to_string(iteration) + ": " + e.what();
}

}  // namespace

std::string to_string(InferenceMode m) { return m == InferenceMode::variational_em ? "variational-em" : "factored-ep"; }

InferenceMode parse_mode(const std::string& s) {
  if (s == "variational-em") return InferenceMode::variational_em;
  if (s == "factored-ep") return InferenceMode::factored_ep;
  throw ConfigError("unknown mode '" + s + "' (expected variational-em or factored-ep)");
}

std::string to_string(Block b) {
  switch (b) {
    case Block::states: return "q_s";
    case Block::emission: return "q_c";
    case Block::noise: return "q_v";
    case Block::weights: return "q_w";
  }
  return "?";
}

void LoopConfig::validate(TransitionFamily family) const {
  if (max_outer < 1) throw ConfigError("max_outer must be >= 1");
  if (!(outer_tol > 0.0)) throw ConfigError("outer_tol must be > 0");
  if (update_order.size() != 4) throw ConfigError("update_order must list the four blocks");
  for (Block b : {Block::states, Block::emission, Block::noise, Block::weights})
    if (std::count(update_order.begin(), update_order.end(), b) != 1)
      throw ConfigError("update_order must be a permutation of q_s, q_c, q_v, q_w");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
  if (chain_reset_passes < 0) throw ConfigError("chain_reset_passes must be >= 0");
  if (init_jitter < 0.0 || init_jitter > 1.0) throw ConfigError("init_jitter must lie in [0, 1]");
  if (oscillation_patience < 1) throw ConfigError("oscillation_patience must be >= 1");
  if (family == TransitionFamily::sig && mode == InferenceMode::variational_em)
    throw ConfigError("family sig requires mode factored-ep");
  if (fixed_noise_precision && !(*fixed_noise_precision > 0.0))
    throw ConfigError("fixed noise precision must be > 0");
  ep.validate();
}

double RunState::noise_mean_log() const {
  return fixed_noise_precision ? std::log(*fixed_noise_precision) : q_v.mean_log();
}

FreeEnergyReport free_energy(const RunState& st, const Dataset& data) {
  const ModelSpec& spec = st.spec;
  if (static_cast<Index>(st.q_c.rows.size()) != spec.n_y || static_cast<Index>(st.q_w.chains.size()) != spec.n_s ||
      st.q_s.n_s() != spec.n_s)
    throw ConvergenceError("free energy requested with missing block quantities");
  FreeEnergyReport f;
  const double n_obs = static_cast<double>(spec.n_y * spec.n_t);
  f.emission_nll = -0.5 * n_obs * (st.noise_mean_log() - kLog2Pi) +
                   0.5 * st.noise_mean() * expected_residual(spec, data, st.q_s, st.q_c);

  if (spec.family != TransitionFamily::sig) {
    for (Index i = 0; i < spec.n_s; ++i) {
      const auto& w = st.q_w.chains[static_cast<std::size_t>(i)].point;
      for (Index t = 0; t + 1 < spec.n_t; ++t) {
        const Eigen::Matrix2d lp =
            log_transition_table(spec.family, w, data.X.col(t), data.delta[t], spec.hyper.b0).as_matrix();
        const Eigen::Matrix2d& pr = st.q_s.pair[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            if (pr(a, b) > 0.0) f.transition_nll -= pr(a, b) * lp(a, b);
      }
      f.weight_block -= weight_log_prior(spec.family, spec.hyper, w);
    }
  } else {
    for (const auto& c : st.q_w.chains) f.weight_block += c.plus.entropy_surrogate + c.minus.entropy_surrogate;
  }

  const CPrior& prior = spec.hyper.c_prior;
  for (const auto& row : st.q_c.rows) {
    if (prior.is_gaussian())
      f.emission_block += gaussian_row_block(row, prior);
    else if (st.mode == InferenceMode::variational_em)
      f.emission_block += laplace_row_block(row, prior.rate);
    else
      f.emission_block += row.entropy_surrogate;
  }

  if (!st.fixed_noise_precision) f.noise_block = gamma_kl(st.q_v, spec.hyper.v_prior);
  f.state_entropy = -st.q_s.entropy();
  f.total = f.sum();
  if (!std::isfinite(f.total)) throw ConvergenceError("free energy is not finite");
  return f;
}

namespace {

RunState run_single(const ModelSpec& spec, const Dataset& data, const LoopConfig& cfg_in,
                    const RunState* start = nullptr) {
  LoopConfig cfg = cfg_in;
  cfg.chains.clamp_start = true;

  RunState st;
  if (start) {
    st.q_s = start->q_s;
    st.q_c = start->q_c;
    st.q_w = start->q_w;
    st.q_v = start->q_v;
  } else {
    if (cfg.known_states) {
      cfg.known_states->validate(spec.n_s, spec.n_t, true);
      st.q_s = ChainPosterior::from_states(*cfg.known_states);
    } else {
      st.q_s = ChainPosterior::initial(spec.n_s, spec.n_t, true, cfg.init_jitter, cfg.seed);
    }
    st.q_c = EmissionPosterior::from_prior(spec);
    st.q_w = WeightPosterior::initial(spec);
    st.q_v = spec.hyper.v_prior;
  }
  st.spec = spec;
  st.mode = cfg.mode;
  st.fixed_noise_precision = cfg.fixed_noise_precision;

  auto run_block = [&](Block b, int iteration, IterationRecord& rec) {
    try {
      switch (b) {
        case Block::states: {
          if (cfg.known_states) break;
          const auto edges = all_edges(st, data, cfg.ep);
          ChainSweepConfig cc = cfg.chains;
          cc.seed = cfg.seed + static_cast<std::uint64_t>(iteration);
          const ChainSweepReport rep = sweep_chains(st.q_s, st.q_c.moments(spec, data), st.noise_mean(), edges, cc);
          rec.chain_sweeps = rep.sweeps;
          break;
        }
        case Block::emission:
          st.q_c = update_emission(spec, data, st.q_s, st.noise_mean(), cfg.ep, &st.q_c, cfg.threads);
          rec.emission_converged = st.q_c.all_converged();
          break;
        case Block::noise:
          if (!cfg.fixed_noise_precision) st.q_v = update_noise(spec, data, st.q_s, st.q_c, spec.hyper.v_prior);
          break;
        case Block::weights: {
          const ExpectedTransitionCounts eps = expected_counts(st.q_s);
          std::vector<ChainWeightPosterior> next = st.q_w.chains;
          std::vector<char> ok(next.size(), 1);
          parallel_for(next.size(), cfg.threads, [&](std::size_t i) {
            auto& c = next[i];
            if (spec.family == TransitionFamily::sig) {
              auto [plus, minus] = infer_weights_sig(eps[i], data, spec.hyper, cfg.ep, &st.q_w.chains[i]);
              c.plus = std::move(plus);
              c.minus = std::move(minus);
              c.point = c.mean_weights();
              ok[i] = c.plus.converged && c.minus.converged;
            } else {
              OptimizerConfig oc = cfg.optimizer;
              oc.seed = cfg.optimizer.seed ^ (0x9E3779B97F4A7C15ULL * (i + 1)) ^ static_cast<std::uint64_t>(iteration);
              OptimizerReport rep;
              c.point = estimate_weights_tp(eps[i], data, spec.family, spec.hyper, c.point, oc, &rep);
              ok[i] = rep.converged;
            }
          });
          st.q_w.chains = std::move(next);
          rec.weights_converged = std::all_of(ok.begin(), ok.end(), [](char v) { return v != 0; });
          break;
        }
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConvergenceError(block_error(b, iteration, e));
    }
  };

  IterationRecord warm;
  run_block(Block::emission, 0, warm);
  run_block(Block::noise, 0, warm);
  double previous = free_energy(st, data).total;
  double best = previous;
  int stalled = 0;
  bool damping_halved = false;

  for (int it = 1; it <= cfg.max_outer; ++it) {
    const auto start = std::chrono::steady_clock::now();
    IterationRecord rec;
    rec.iteration = it;
    for (Block b : cfg.update_order) run_block(b, it, rec);
    rec.components = free_energy(st, data);
    rec.free_energy = rec.components.total;
    rec.damping = cfg.ep.damping;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    st.trace.push_back(rec.free_energy);
    st.records.push_back(rec);
    st.iterations = it;

    const double f = rec.free_energy;
    if (std::abs(f - previous) / std::max(1.0, std::abs(f)) < cfg.outer_tol) {
      st.converged = true;
      st.status = "converged";
      break;
    }
    previous = f;
    if (cfg.mode == InferenceMode::factored_ep) {
      if (f < best - cfg.outer_tol * std::max(1.0, std::abs(best))) {
        best = f;
        stalled = 0;
      } else if (++stalled >= cfg.oscillation_patience) {
        if (damping_halved) {
          st.oscillating = true;
          st.status = "oscillating";
          break;
        }
        cfg.ep.damping *= 0.5;
        damping_halved = true;
        stalled = 0;
      }
    }
  }
  if (st.status.empty()) st.status = "max_outer reached";
  return st;
}

std::uint64_t restart_seed(std::uint64_t seed, int restart) {
  if (restart == 0) return seed;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(restart), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

RunState run_inference(const ModelSpec& spec, const Dataset& data, const LoopConfig& cfg) {
  spec.validate();
  data.validate(spec);
  cfg.validate(spec.family);
  const int restarts = cfg.known_states ? 1 : cfg.restarts;
  RunState best;
  for (int r = 0; r < restarts; ++r) {
    LoopConfig c = cfg;
    c.seed = restart_seed(cfg.seed, r);
    RunState st = run_single(spec, data, c);
    st.restart = r;
    if (r == 0 || st.trace.back() < best.trace.back()) best = std::move(st);
  }
  if (cfg.known_states) return best;
  // Re-seed one chain at a time from the best solution; keep moves that lower the free energy.
  const WeightPosterior fresh_w = WeightPosterior::initial(spec);
  for (int pass = 0; pass < cfg.chain_reset_passes; ++pass) {
    bool improved = false;
    for (Index i = 0; i < spec.n_s; ++i) {
      RunState start = best;
      const std::uint64_t seed = restart_seed(cfg.seed, 1000 + pass * static_cast<int>(spec.n_s) + static_cast<int>(i));
      const ChainPosterior init = ChainPosterior::initial(spec.n_s, spec.n_t, true, cfg.init_jitter, seed);
      start.q_s.set_chain(i, init.chain(i));
      start.q_w.chains[static_cast<std::size_t>(i)] = fresh_w.chains[static_cast<std::size_t>(i)];
      LoopConfig c = cfg;
      c.seed = seed;
      RunState st = run_single(spec, data, c, &start);
      const double f_best = best.trace.back();
      if (st.trace.back() < f_best - cfg.outer_tol * std::max(1.0, std::abs(f_best))) {
        st.restart = best.restart;
        st.chain_resets = best.chain_resets + 1;
        best = std::move(st);
        improved = true;
      }
    }
    if (!improved) break;
  }
  return best;
}

Estimates extract_estimates(const RunState& st, const Dataset& data) {
  const ModelSpec& spec = st.spec;
  Estimates e;
  e.C = st.q_c.mean_matrix(spec.c_structure);
  if (!spec.hyper.c_prior.is_gaussian()) {
    for (Index r = 0; r < spec.n_y; ++r) {
      const RowProblem problem = assemble_row_problem(r, spec, data, st.q_s, st.noise_mean());
      e.C.values.segment(spec.c_structure.row_begin(r), spec.c_structure.row_nnz(r)) =
          laplace_row_mode(problem, spec.hyper.c_prior.rate);
    }
  }
  e.W = st.q_w.means();
  e.v = st.noise_mean();
  e.mu = st.q_s.mu;
  return e;
}

}  // namespace iofhmm
