#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "iofhmm/errors.hpp"

namespace iofhmm {

using Index = Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class TransitionFamily { sig, tp_scaled, tp_exp };

std::string_view to_string(TransitionFamily family);
TransitionFamily parse_family(std::string_view name);

enum class CPriorKind { gaussian, flat, double_exponential };
enum class WPriorKind { double_exponential, exponential };

// Variance used when a "flat" prior on C is requested.
inline constexpr double kFlatPriorVariance = 1e6;

struct CPrior {
  CPriorKind kind = CPriorKind::gaussian;
  double mean = 0.0;
  double variance = 1.0;
  double rate = 1.0;

  static CPrior gaussian(double mean, double variance) { return {CPriorKind::gaussian, mean, variance, 1.0}; }
  static CPrior flat() { return {CPriorKind::flat, 0.0, kFlatPriorVariance, 1.0}; }
  static CPrior double_exponential(double rate) { return {CPriorKind::double_exponential, 0.0, 1.0, rate}; }

  bool is_gaussian() const { return kind != CPriorKind::double_exponential; }
  // Gaussian variance actually used for gaussian and flat priors.
  double effective_variance() const { return kind == CPriorKind::flat ? kFlatPriorVariance : variance; }
  double effective_mean() const { return kind == CPriorKind::flat ? 0.0 : mean; }
  double log_density(double c) const;
};

struct WPrior {
  WPriorKind kind = WPriorKind::exponential;
  double rate = 1.0;

  double log_density(double w) const;
};

struct GaussianParams {
  double mean = 0.0;
  double variance = 1.0;

  double log_density(double x) const;
};

struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;

  double mean() const { return shape / rate; }
  double mean_log() const;  // E[log v]
  double entropy() const;
  double log_density(double v) const;
};

struct Hyperparameters {
  CPrior c_prior;
  WPrior w_prior;
  GaussianParams bias_prior;
  GammaParams v_prior;
  // Base rate for tp-scaled; default is the p0 = 0.05 calibration.
  double b0 = 0.05129329438755058;

  void validate(TransitionFamily family) const;
};

// Fixed sparsity pattern stored row-compressed. Entry k of the pattern is
// the k-th non-zero in row-major order.
class SparsePattern {
 public:
  SparsePattern() = default;
  SparsePattern(Index rows, Index cols, std::vector<std::pair<Index, Index>> entries);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index nnz() const { return static_cast<Index>(col_index_.size()); }

  Index row_begin(Index r) const { return row_ptr_[static_cast<std::size_t>(r)]; }
  Index row_end(Index r) const { return row_ptr_[static_cast<std::size_t>(r) + 1]; }
  Index row_nnz(Index r) const { return row_end(r) - row_begin(r); }
  Index col(Index k) const { return col_index_[static_cast<std::size_t>(k)]; }
  Index row(Index k) const;

  std::span<const Index> row_support(Index r) const {
    return {col_index_.data() + row_begin(r), static_cast<std::size_t>(row_nnz(r))};
  }
  std::vector<Index> column_counts() const;
  std::vector<std::pair<Index, Index>> entries() const;

  bool operator==(const SparsePattern&) const = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Index> row_ptr_{0};
  std::vector<Index> col_index_;
};

struct SparseMatrix {
  SparsePattern pattern;
  VectorXd values;  // aligned with pattern entries

  SparseMatrix() = default;
  SparseMatrix(SparsePattern p, VectorXd v);
  static SparseMatrix zeros(SparsePattern p);

  Index rows() const { return pattern.rows(); }
  Index cols() const { return pattern.cols(); }
  MatrixXd to_dense() const;
  // Values of row r restricted to its support.
  VectorXd row_values(Index r) const { return values.segment(pattern.row_begin(r), pattern.row_nnz(r)); }
};

struct ModelSpec {
  Index n_s = 0;
  Index n_y = 0;
  Index n_x = 0;
  Index n_t = 0;
  TransitionFamily family = TransitionFamily::tp_scaled;
  SparsePattern c_structure;
  Hyperparameters hyper;

  void validate() const;
};

struct Dataset {
  MatrixXd X;      // n_x x n_t
  VectorXd delta;  // n_t - 1 physical time lags
  MatrixXd Y;      // n_y x n_t

  void validate(const ModelSpec& spec) const;
  static VectorXd uniform_delta(Index n_t) { return VectorXd::Ones(n_t > 0 ? n_t - 1 : 0); }
};

// Binary chain states, one row per chain; entries are -1 or +1.
struct StateMatrix {
  Eigen::MatrixXi S;

  void validate(Index n_s, Index n_t, bool clamp_start) const;
};

struct ChainWeights {
  VectorXd w_plus;
  VectorXd w_minus;
  double b_plus = 0.0;
  double b_minus = 0.0;

  static ChainWeights zeros(Index n_x) { return {VectorXd::Zero(n_x), VectorXd::Zero(n_x), 0.0, 0.0}; }
  void validate(TransitionFamily family, Index n_x) const;
};

using WeightCollection = std::vector<ChainWeights>;

// C (1 + s) / 2, touching only structural non-zeros.
VectorXd emission_mean(const SparseMatrix& C, const Eigen::Ref<const Eigen::VectorXi>& s);

// Log of the full joint density: emissions, chain transitions and parameter priors.
// log p0(w) of one chain; tp-scaled has no free biases.
double weight_log_prior(TransitionFamily family, const Hyperparameters& hyper, const ChainWeights& w);

double joint_log_density(const ModelSpec& spec, const Dataset& data, const StateMatrix& S, const SparseMatrix& C,
                         const WeightCollection& W, double v);

}  // namespace iofhmm
