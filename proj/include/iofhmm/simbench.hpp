#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iofhmm/inference.hpp"
#include "iofhmm/model.hpp"

namespace iofhmm {

struct SimDesign {
  TransitionFamily family = TransitionFamily::tp_scaled;
  Index n_s = 8;
  Index n_y = 40;
  Index n_x = 3;
  Index T = 50;
  double nu = 1.0;
  double p0 = 0.05;
  double p1 = 0.95;
  double mean_w = 1.0;
  double var_w = 0.0625;
  double c_value_variance = 4.0;
  double noise_variance = 0.1;
  Index min_row_nnz = 1;
  Index max_row_nnz = 3;
  int replicates = 10;
  std::uint64_t seed = 1;

  Index n_t() const;
  void validate() const;
};

struct SimInputs {
  MatrixXd X;
  VectorXd delta;
};

SimInputs generate_inputs(const SimDesign& design);

struct SimInstance {
  ModelSpec spec;  // carries the inference priors matched to the design
  Dataset data;
  WeightCollection true_W;
  std::vector<int> true_pattern;  // per chain: w+ then w- entries
  SparseMatrix true_C;
  StateMatrix true_S;
};

// Large synthetic instance shaped like a genome-scale network (tp-scaled, random step inputs).
struct ScaleDesign {
  Index n_y = 1388;
  Index n_s = 181;
  Index nnz = 3314;
  Index n_x = 7;
  Index n_t = 20;
  std::uint64_t seed = 1;

  void validate() const;
};

SimInstance generate_scale_instance(const ScaleDesign& design);

// Seed of one replicate's stream derived from the master seed.
std::uint64_t replicate_seed(std::uint64_t master, int replicate);

SimInstance generate_instance(const SimDesign& design, std::uint64_t replicate_seed);

// Random structure with every row and every column non-empty.
SparsePattern random_structure(Index rows, Index cols, Index min_row_nnz, Index max_row_nnz, std::uint64_t seed);
SparsePattern random_structure_with_nnz(Index rows, Index cols, Index nnz, std::uint64_t seed);

// Inference priors matched to the generating design.
Hyperparameters design_priors(const SimDesign& design, TransitionFamily family);

// A problem re-expressed for another family: design priors and rescaled inputs.
std::pair<ModelSpec, Dataset> retarget_problem(const ModelSpec& spec, const Dataset& data, TransitionFamily family,
                                               const SimDesign& design);

// Same instance viewed through another inference family's parameterisation.
std::pair<ModelSpec, Dataset> inference_problem(const SimDesign& design, const SimInstance& inst,
                                                TransitionFamily family);

// |W| entries in the order of SimInstance::true_pattern.
VectorXd weight_scores(const WeightCollection& W);

struct RocCurve {
  std::vector<double> thresholds;  // +inf first, then unique scores descending
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.0;
  bool defined = true;
};

RocCurve roc_recovery(const std::vector<int>& truth, const VectorXd& scores);

// TPR of a curve at an FPR value (upper envelope of the piecewise-linear curve).
double tpr_at(const RocCurve& roc, double fpr);

struct BenchmarkResult {
  std::vector<double> fpr_grid;
  std::vector<double> mean_tpr;
  std::vector<double> sd_tpr;
  std::vector<double> aucs;  // NaN for failed or undefined replicates
  std::vector<std::string> failures;
  double mean_auc = 0.0;
  double sd_auc = 0.0;
  int used = 0;
};

// Loop settings used by the benchmark: several initialisations plus single-chain re-seeding.
LoopConfig default_benchmark_loop();

struct BenchmarkConfig {
  LoopConfig loop = default_benchmark_loop();
  std::optional<TransitionFamily> inference_family;  // defaults to the design family
  int threads = 1;  // replicate-level parallelism
  int grid_points = 101;
};

BenchmarkResult run_benchmark(const SimDesign& design, const BenchmarkConfig& cfg);

}  // namespace iofhmm
