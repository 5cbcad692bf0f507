#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iofhmm/chain_posterior.hpp"
#include "iofhmm/emission_posterior.hpp"
#include "iofhmm/ep.hpp"
#include "iofhmm/model.hpp"
#include "iofhmm/weight_posterior.hpp"

namespace iofhmm {

enum class InferenceMode { variational_em, factored_ep };
enum class Block { states, emission, noise, weights };

std::string to_string(InferenceMode m);
InferenceMode parse_mode(const std::string& s);
std::string to_string(Block b);

struct LoopConfig {
  int max_outer = 100;
  double outer_tol = 1e-6;
  std::vector<Block> update_order{Block::states, Block::emission, Block::noise, Block::weights};
  std::uint64_t seed = 0;
  InferenceMode mode = InferenceMode::factored_ep;
  int threads = 1;
  double init_jitter = 0.01;  // uniform jitter on the initial chain means
  int restarts = 1;          // independent initialisations; the lowest final free energy wins
  int chain_reset_passes = 0;  // passes of single-chain re-initialisation from the best solution
  EPConfig ep;
  ChainSweepConfig chains;
  OptimizerConfig optimizer;
  int oscillation_patience = 5;

  // Testing hooks: hold the states or the noise precision fixed at known values.
  std::optional<StateMatrix> known_states;
  std::optional<double> fixed_noise_precision;

  void validate(TransitionFamily family) const;
};

struct FreeEnergyReport {
  double emission_nll = 0.0;    // -<log p(Y | S, C, v)>
  double transition_nll = 0.0;  // -<log p(S | W)> (zero for sig: folded into weight_block)
  double emission_block = 0.0;  // -<log p0(C)> - H(q_c), or its EP surrogate
  double weight_block = 0.0;    // -log p0(W) for point estimates, EP surrogate for sig
  double noise_block = 0.0;     // KL(q_v || p0)
  double state_entropy = 0.0;   // -H(q_s)
  double total = 0.0;

  double sum() const {
    return emission_nll + transition_nll + emission_block + weight_block + noise_block + state_entropy;
  }
};

struct IterationRecord {
  int iteration = 0;
  double free_energy = 0.0;
  FreeEnergyReport components;
  int chain_sweeps = 0;
  bool emission_converged = true;
  bool weights_converged = true;
  double damping = 0.0;
  double seconds = 0.0;
};

struct RunState {
  ModelSpec spec;
  InferenceMode mode = InferenceMode::factored_ep;
  ChainPosterior q_s;
  EmissionPosterior q_c;
  WeightPosterior q_w;
  GammaParams q_v;
  std::optional<double> fixed_noise_precision;

  std::vector<double> trace;
  std::vector<IterationRecord> records;
  int iterations = 0;
  int restart = 0;
  int chain_resets = 0;  // accepted single-chain re-initialisations
  bool converged = false;
  bool oscillating = false;
  std::string status;

  double noise_mean() const { return fixed_noise_precision ? *fixed_noise_precision : q_v.mean(); }
  double noise_mean_log() const;
};

RunState run_inference(const ModelSpec& spec, const Dataset& data, const LoopConfig& cfg);

FreeEnergyReport free_energy(const RunState& state, const Dataset& data);

struct Estimates {
  SparseMatrix C;
  WeightCollection W;
  double v = 0.0;
  MatrixXd mu;
};

Estimates extract_estimates(const RunState& state, const Dataset& data);

}  // namespace iofhmm
