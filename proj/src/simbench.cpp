#include "iofhmm/simbench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "iofhmm/errors.hpp"
#include "iofhmm/parallel.hpp"
#include "iofhmm/transitions.hpp"

namespace iofhmm {

namespace {

constexpr double kCPriorVariance = 4.0;
constexpr double kBiasPriorVariance = 1.0;
constexpr double kNoiseShape = 1.0;
constexpr double kNoiseRate = 0.1;

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

SparsePattern pattern_from_sets(Index rows, Index cols, const std::vector<std::set<Index>>& sets) {
  std::vector<std::pair<Index, Index>> entries;
  for (Index r = 0; r < rows; ++r)
    for (Index c : sets[static_cast<std::size_t>(r)]) entries.emplace_back(r, c);
  return SparsePattern(rows, cols, std::move(entries));
}

}  // namespace

Hyperparameters design_priors(const SimDesign& d, TransitionFamily family) {
  Hyperparameters h;
  h.v_prior = {kNoiseShape, kNoiseRate};
  if (family == TransitionFamily::sig) {
    const Calibration cal = calibrate_simulation(TransitionFamily::sig, d.p0, d.p1, d.mean_w);
    h.c_prior = CPrior::double_exponential(std::sqrt(2.0 / kCPriorVariance));
    h.w_prior = {WPriorKind::exponential, 1.0 / d.mean_w};
    h.bias_prior = {cal.bias, kBiasPriorVariance};
  } else if (family == TransitionFamily::tp_scaled) {
    const Calibration cal = calibrate_simulation(TransitionFamily::tp_scaled, d.p0, d.p1, d.mean_w);
    h.c_prior = CPrior::gaussian(0.0, kCPriorVariance);
    h.w_prior = {WPriorKind::exponential, 1.0 / (d.mean_w * cal.input_scale)};
    h.b0 = cal.bias;
  } else {
    h.c_prior = CPrior::gaussian(0.0, kCPriorVariance);
    h.w_prior = {WPriorKind::double_exponential, 1.0 / d.mean_w};
    h.bias_prior = {std::log(-std::log1p(-d.p0)), kBiasPriorVariance};
  }
  return h;
}


Index SimDesign::n_t() const { return family == TransitionFamily::sig ? T + 1 : T; }

void SimDesign::validate() const {
  if (family == TransitionFamily::tp_exp) throw ConfigError("simulation is defined for sig and tp-scaled only");
  if (n_s < 1 || n_y < 1 || n_x < 1 || T < 2) throw ConfigError("simulation dimensions must be positive (T >= 2)");
  if (n_x != 3) throw ConfigError("the simulation input design has exactly 3 inputs");
  if (!(0.0 < p0 && p0 < p1 && p1 < 1.0)) throw ConfigError("need 0 < p0 < p1 < 1");
  if (!(mean_w > 0.0 && var_w > 0.0)) throw ConfigError("gamma mean and variance must be > 0");
  if (!(c_value_variance >= 0.0 && noise_variance >= 0.0)) throw ConfigError("variances must be >= 0");
  if (!(nu > 0.0)) throw ConfigError("nu must be > 0");
  if (min_row_nnz < 1 || max_row_nnz < min_row_nnz || max_row_nnz > n_s)
    throw ConfigError("row non-zero range must satisfy 1 <= min <= max <= n_s");
  if (n_y < n_s) throw ConfigError("n_y >= n_s is needed to cover every chain");
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
}

SimInputs generate_inputs(const SimDesign& d) {
  d.validate();
  const Index n_t = d.n_t();
  SimInputs in{MatrixXd::Zero(3, n_t), VectorXd::Ones(n_t - 1)};
  if (d.family == TransitionFamily::tp_scaled) {
    const Index a = ceil_div(d.T, 3);
    const Index b = ceil_div(2 * d.T, 3);
    const Index c = ceil_div(d.T, 2);
    for (Index t = 0; t < n_t; ++t) {
      in.X(0, t) = t >= a ? 1.0 : 0.0;
      in.X(1, t) = t >= b ? 1.0 : 0.0;
      in.X(2, t) = t >= c ? 0.0 : 1.0;
    }
  } else {
    const double scale = calibrate_simulation(TransitionFamily::sig, d.p0, d.p1, d.mean_w).input_scale;
    const double pi = std::numbers::pi;
    for (Index t = 0; t < n_t; ++t) {
      const double u = static_cast<double>(t) / static_cast<double>(d.T);
      const double waves[3] = {std::sin(2 * d.nu * pi * u), std::sin(6 * d.nu * pi * u), std::cos(4 * d.nu * pi * u)};
      for (int j = 0; j < 3; ++j) in.X(j, t) = waves[j] >= 0.0 ? scale : 0.0;
    }
  }
  return in;
}

std::uint64_t replicate_seed(std::uint64_t master, int replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(replicate)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

SparsePattern random_structure(Index rows, Index cols, Index min_row_nnz, Index max_row_nnz, std::uint64_t seed) {
  if (rows < cols) throw ConfigError("need at least as many rows as columns to cover every column");
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::set<Index>> sets(static_cast<std::size_t>(rows));
  for (Index c = 0; c < cols; ++c) sets[static_cast<std::size_t>(order[static_cast<std::size_t>(c)])].insert(c);
  std::uniform_int_distribution<Index> count(min_row_nnz, max_row_nnz);
  std::uniform_int_distribution<Index> pick(0, cols - 1);
  for (auto& s : sets) {
    const auto k = static_cast<std::size_t>(count(rng));
    while (s.size() < k) s.insert(pick(rng));
  }
  return pattern_from_sets(rows, cols, sets);
}

SparsePattern random_structure_with_nnz(Index rows, Index cols, Index nnz, std::uint64_t seed) {
  if (nnz < std::max(rows, cols) || nnz > rows * cols) throw ConfigError("nnz cannot cover every row and column");
  std::mt19937_64 rng(seed);
  std::vector<std::set<Index>> sets(static_cast<std::size_t>(rows));
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<Index> pick_col(0, cols - 1);
  std::uniform_int_distribution<Index> pick_row(0, rows - 1);
  // Every row gets one column; the first `cols` shuffled rows cover every column.
  for (Index k = 0; k < rows; ++k)
    sets[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].insert(k < cols ? k : pick_col(rng));
  Index total = rows;
  while (total < nnz) {
    if (sets[static_cast<std::size_t>(pick_row(rng))].insert(pick_col(rng)).second) ++total;
  }
  return pattern_from_sets(rows, cols, sets);
}

namespace {

// Draws W, S, C and Y for fixed inputs; spec must carry dimensions, structure and priors.
void sample_model(SimInstance& inst, const SimDesign& d, const SimInputs& in, std::mt19937_64& rng) {
  const ModelSpec& spec = inst.spec;
  const Calibration cal = calibrate_simulation(spec.family, d.p0, d.p1, d.mean_w);
  const double shape = d.mean_w * d.mean_w / d.var_w;
  const double rate = d.mean_w / d.var_w;
  std::gamma_distribution<double> gamma(shape, 1.0 / rate);
  std::uniform_int_distribution<int> which(0, 2);
  const double weight_scale = spec.family == TransitionFamily::tp_scaled ? cal.input_scale : 1.0;
  for (Index i = 0; i < spec.n_s; ++i) {
    ChainWeights w = ChainWeights::zeros(spec.n_x);
    std::vector<int> plus(static_cast<std::size_t>(spec.n_x)), minus(static_cast<std::size_t>(spec.n_x));
    for (Index j = 0; j < spec.n_x; ++j) {
      const int p = which(rng);  // 0 -> (0,0), 1 -> (0,1), 2 -> (1,0)
      const double g = gamma(rng) * weight_scale;
      plus[static_cast<std::size_t>(j)] = p == 2;
      minus[static_cast<std::size_t>(j)] = p == 1;
      if (p == 2) w.w_plus[j] = g;
      if (p == 1) w.w_minus[j] = g;
    }
    if (spec.family == TransitionFamily::sig) w.b_plus = w.b_minus = cal.bias;
    inst.true_pattern.insert(inst.true_pattern.end(), plus.begin(), plus.end());
    inst.true_pattern.insert(inst.true_pattern.end(), minus.begin(), minus.end());
    inst.true_W.push_back(std::move(w));
  }

  const Index n_t = spec.n_t;
  inst.true_S.S = Eigen::MatrixXi::Constant(spec.n_s, n_t, -1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index i = 0; i < spec.n_s; ++i) {
    for (Index t = 0; t + 1 < n_t; ++t) {
      const int from = inst.true_S.S(i, t);
      const double p_on = transition_prob(spec.family, inst.true_W[static_cast<std::size_t>(i)], in.X.col(t),
                                          in.delta[t], from, 1, spec.hyper.b0);
      inst.true_S.S(i, t + 1) = unif(rng) < p_on ? 1 : -1;
    }
  }

  inst.true_C = SparseMatrix::zeros(spec.c_structure);
  std::normal_distribution<double> c_dist(0.0, std::sqrt(d.c_value_variance));
  for (Index k = 0; k < inst.true_C.values.size(); ++k) inst.true_C.values[k] = c_dist(rng);

  inst.data.X = in.X;
  inst.data.delta = in.delta;
  inst.data.Y = MatrixXd::Zero(spec.n_y, n_t);
  std::normal_distribution<double> noise(0.0, std::sqrt(d.noise_variance));
  for (Index t = 0; t < n_t; ++t) {
    inst.data.Y.col(t) = emission_mean(inst.true_C, inst.true_S.S.col(t));
    if (d.noise_variance > 0.0)
      for (Index r = 0; r < spec.n_y; ++r) inst.data.Y(r, t) += noise(rng);
  }
}

}  // namespace

SimInstance generate_instance(const SimDesign& d, std::uint64_t seed) {
  const SimInputs in = generate_inputs(d);
  std::mt19937_64 rng(seed);
  SimInstance inst;
  ModelSpec& spec = inst.spec;
  spec.n_s = d.n_s;
  spec.n_y = d.n_y;
  spec.n_x = d.n_x;
  spec.n_t = d.n_t();
  spec.family = d.family;
  spec.c_structure = random_structure(d.n_y, d.n_s, d.min_row_nnz, d.max_row_nnz, rng());
  spec.hyper = design_priors(d, d.family);
  sample_model(inst, d, in, rng);
  return inst;
}

void ScaleDesign::validate() const {
  if (n_y < 1 || n_s < 1 || n_x < 1 || n_t < 2) throw ConfigError("scale instance dimensions must be positive");
  if (nnz < std::max(n_y, n_s) || nnz > n_y * n_s) throw ConfigError("nnz cannot cover every row and chain");
}

SimInstance generate_scale_instance(const ScaleDesign& sd) {
  sd.validate();
  SimDesign d;  // gamma, noise and calibration defaults
  d.family = TransitionFamily::tp_scaled;
  std::mt19937_64 rng(sd.seed);
  SimInstance inst;
  ModelSpec& spec = inst.spec;
  spec.n_s = sd.n_s;
  spec.n_y = sd.n_y;
  spec.n_x = sd.n_x;
  spec.n_t = sd.n_t;
  spec.family = d.family;
  spec.c_structure = random_structure_with_nnz(sd.n_y, sd.n_s, sd.nnz, rng());
  spec.hyper = design_priors(d, d.family);
  // One sharp step per input at a random time, switching on or off.
  SimInputs in{MatrixXd::Zero(sd.n_x, sd.n_t), VectorXd::Ones(sd.n_t - 1)};
  std::uniform_int_distribution<Index> when(1, sd.n_t - 1);
  std::bernoulli_distribution up(0.5);
  for (Index j = 0; j < sd.n_x; ++j) {
    const Index at = when(rng);
    const bool rising = up(rng);
    for (Index t = 0; t < sd.n_t; ++t) in.X(j, t) = (t >= at) == rising ? 1.0 : 0.0;
  }
  sample_model(inst, d, in, rng);
  return inst;
}

std::pair<ModelSpec, Dataset> retarget_problem(const ModelSpec& spec_in, const Dataset& data_in, TransitionFamily family,
                                               const SimDesign& d) {
  ModelSpec spec = spec_in;
  Dataset data = data_in;
  if (family == spec.family) return {spec, data};
  spec.family = family;
  spec.hyper = design_priors(d, family);
  // Inputs live in [0,1] for tp families and on the sig calibration scale for sig.
  const double sig_scale = calibrate_simulation(TransitionFamily::sig, d.p0, d.p1, d.mean_w).input_scale;
  if (family == TransitionFamily::sig && spec_in.family != TransitionFamily::sig) data.X *= sig_scale;
  if (family != TransitionFamily::sig && spec_in.family == TransitionFamily::sig) data.X /= sig_scale;
  return {spec, data};
}

std::pair<ModelSpec, Dataset> inference_problem(const SimDesign& d, const SimInstance& inst, TransitionFamily family) {
  return retarget_problem(inst.spec, inst.data, family, d);
}

VectorXd weight_scores(const WeightCollection& W) {
  std::vector<double> out;
  for (const auto& w : W) {
    for (Index j = 0; j < w.w_plus.size(); ++j) out.push_back(std::abs(w.w_plus[j]));
    for (Index j = 0; j < w.w_minus.size(); ++j) out.push_back(std::abs(w.w_minus[j]));
  }
  return Eigen::Map<VectorXd>(out.data(), static_cast<Index>(out.size()));
}

RocCurve roc_recovery(const std::vector<int>& truth, const VectorXd& scores) {
  if (static_cast<Index>(truth.size()) != scores.size()) throw DataError("truth and scores differ in length");
  for (Index k = 0; k < scores.size(); ++k)
    if (std::isnan(scores[k])) throw DataError("scores contain NaN");
  const auto positives = static_cast<double>(std::count(truth.begin(), truth.end(), 1));
  const double negatives = static_cast<double>(truth.size()) - positives;
  RocCurve roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.tpr.push_back(0.0);
  roc.fpr.push_back(0.0);
  if (positives == 0.0 || negatives == 0.0) {
    roc.defined = false;
    roc.auc = std::numeric_limits<double>::quiet_NaN();
    return roc;
  }
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[static_cast<Index>(a)] > scores[static_cast<Index>(b)]; });
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[static_cast<Index>(order[k])];
    while (k < order.size() && scores[static_cast<Index>(order[k])] == s) {
      (truth[order[k]] == 1 ? tp : fp) += 1.0;
      ++k;
    }
    roc.thresholds.push_back(s);
    roc.tpr.push_back(tp / positives);
    roc.fpr.push_back(fp / negatives);
  }
  for (std::size_t k = 1; k < roc.tpr.size(); ++k)
    roc.auc += 0.5 * (roc.fpr[k] - roc.fpr[k - 1]) * (roc.tpr[k] + roc.tpr[k - 1]);
  return roc;
}

double tpr_at(const RocCurve& roc, double f) {
  double best = 0.0;
  for (std::size_t k = 0; k < roc.fpr.size(); ++k) {
    if (roc.fpr[k] == f) best = std::max(best, roc.tpr[k]);
    if (k + 1 < roc.fpr.size() && roc.fpr[k] < f && f < roc.fpr[k + 1]) {
      const double a = (f - roc.fpr[k]) / (roc.fpr[k + 1] - roc.fpr[k]);
      best = std::max(best, roc.tpr[k] + a * (roc.tpr[k + 1] - roc.tpr[k]));
    }
  }
  return best;
}

LoopConfig default_benchmark_loop() {
  LoopConfig loop;
  loop.mode = InferenceMode::variational_em;
  loop.init_jitter = 0.5;
  loop.restarts = 5;
  loop.chain_reset_passes = 3;
  return loop;
}

BenchmarkResult run_benchmark(const SimDesign& d, const BenchmarkConfig& cfg) {
  d.validate();
  if (cfg.grid_points < 2) throw ConfigError("grid_points must be >= 2");
  const TransitionFamily family = cfg.inference_family.value_or(d.family);
  const auto n = static_cast<std::size_t>(d.replicates);
  std::vector<std::optional<RocCurve>> curves(n);
  std::vector<std::string> errors(n);
  parallel_for(n, cfg.threads, [&](std::size_t r) {
    try {
      const SimInstance inst = generate_instance(d, replicate_seed(d.seed, static_cast<int>(r)));
      auto [spec, data] = inference_problem(d, inst, family);
      LoopConfig loop = cfg.loop;
      if (family == TransitionFamily::sig) loop.mode = InferenceMode::factored_ep;
      loop.seed = replicate_seed(cfg.loop.seed, static_cast<int>(r));
      const RunState st = run_inference(spec, data, loop);
      const Estimates est = extract_estimates(st, data);
      RocCurve roc = roc_recovery(inst.true_pattern, weight_scores(est.W));
      if (!roc.defined) {
        errors[r] = "replicate " + std::to_string(r) + ": degenerate truth pattern";
        return;
      }
      curves[r] = std::move(roc);
    } catch (const std::exception& e) {
      errors[r] = "replicate " + std::to_string(r) + ": " + e.what();
    }
  });

  BenchmarkResult out;
  const auto g = static_cast<std::size_t>(cfg.grid_points);
  out.fpr_grid.resize(g);
  for (std::size_t k = 0; k < g; ++k) out.fpr_grid[k] = static_cast<double>(k) / static_cast<double>(g - 1);
  out.mean_tpr.assign(g, 0.0);
  out.sd_tpr.assign(g, 0.0);
  std::vector<double> used_aucs;
  for (std::size_t r = 0; r < n; ++r) {
    if (!curves[r]) {
      out.aucs.push_back(std::numeric_limits<double>::quiet_NaN());
      out.failures.push_back(errors[r]);
      continue;
    }
    out.aucs.push_back(curves[r]->auc);
    used_aucs.push_back(curves[r]->auc);
  }
  out.used = static_cast<int>(used_aucs.size());
  if (out.used == 0) {
    out.mean_auc = out.sd_auc = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  for (std::size_t k = 0; k < g; ++k) {
    double s = 0.0;
    double s2 = 0.0;
    for (const auto& c : curves) {
      if (!c) continue;
      const double v = tpr_at(*c, out.fpr_grid[k]);
      s += v;
      s2 += v * v;
    }
    const double m = s / out.used;
    out.mean_tpr[k] = m;
    out.sd_tpr[k] = std::sqrt(std::max(0.0, s2 / out.used - m * m));
  }
  const double m = std::accumulate(used_aucs.begin(), used_aucs.end(), 0.0) / out.used;
  double var = 0.0;
  for (double a : used_aucs) var += (a - m) * (a - m);
  out.mean_auc = m;
  out.sd_auc = std::sqrt(var / out.used);
  return out;
}

}  // namespace iofhmm
