#include "iofhmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

#include "iofhmm/transitions.hpp"

namespace iofhmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::string describe(Index i, Index j) {
  std::ostringstream os;
  os << "(" << i << ", " << j << ")";
  return os.str();
}

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace

std::string_view to_string(TransitionFamily family) {
  switch (family) {
    case TransitionFamily::sig: return "sig";
    case TransitionFamily::tp_scaled: return "tp-scaled";
    case TransitionFamily::tp_exp: return "tp-exp";
  }
  return "?";
}

TransitionFamily parse_family(std::string_view name) {
  if (name == "sig") return TransitionFamily::sig;
  if (name == "tp-scaled") return TransitionFamily::tp_scaled;
  if (name == "tp-exp") return TransitionFamily::tp_exp;
  throw ConfigError("unknown transition family '" + std::string(name) + "'");
}

double CPrior::log_density(double c) const {
  if (kind == CPriorKind::double_exponential) return std::log(rate / 2.0) - rate * std::abs(c);
  return GaussianParams{effective_mean(), effective_variance()}.log_density(c);
}

double WPrior::log_density(double w) const {
  if (kind == WPriorKind::exponential) {
    if (w < 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(rate) - rate * w;
  }
  return std::log(rate / 2.0) - rate * std::abs(w);
}

double GaussianParams::log_density(double x) const {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + d * d / variance);
}

double GammaParams::mean_log() const { return boost::math::digamma(shape) - std::log(rate); }

double GammaParams::entropy() const {
  return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * boost::math::digamma(shape);
}

double GammaParams::log_density(double v) const {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(v) - rate * v;
}

void Hyperparameters::validate(TransitionFamily family) const {
  if (c_prior.kind == CPriorKind::gaussian && !(c_prior.variance > 0.0))
    throw ConfigError("c_prior variance must be > 0");
  if (c_prior.kind == CPriorKind::double_exponential && !(c_prior.rate > 0.0))
    throw ConfigError("c_prior rate must be > 0");
  if (!(w_prior.rate > 0.0)) throw ConfigError("w_prior rate must be > 0");
  if (!(bias_prior.variance > 0.0)) throw ConfigError("bias prior variance must be > 0");
  if (!(v_prior.shape > 0.0) || !(v_prior.rate > 0.0)) throw ConfigError("v_prior shape and rate must be > 0");
  if (w_prior.kind == WPriorKind::exponential && family == TransitionFamily::tp_exp)
    throw ConfigError("exponential w_prior needs non-negative weights (tp-scaled or sig), not tp-exp");
  if (w_prior.kind == WPriorKind::double_exponential && family == TransitionFamily::tp_scaled)
    throw ConfigError("tp-scaled weights are non-negative; use an exponential w_prior");
  if (family == TransitionFamily::tp_scaled && !(b0 > 0.0)) throw ConfigError("tp-scaled requires b0 > 0");
}

SparsePattern::SparsePattern(Index rows, Index cols, std::vector<std::pair<Index, Index>> entries)
    : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw DataError("negative sparse dimensions");
  for (const auto& [i, j] : entries) {
    if (i < 0 || i >= rows || j < 0 || j >= cols)
      throw DataError("structure entry " + describe(i, j) + " out of range");
  }
  std::sort(entries.begin(), entries.end());
  if (auto dup = std::adjacent_find(entries.begin(), entries.end()); dup != entries.end())
    throw DataError("duplicate structure entry " + describe(dup->first, dup->second));
  row_ptr_.assign(static_cast<std::size_t>(rows) + 1, 0);
  col_index_.reserve(entries.size());
  for (const auto& [i, j] : entries) {
    ++row_ptr_[static_cast<std::size_t>(i) + 1];
    col_index_.push_back(j);
  }
  for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) row_ptr_[r + 1] += row_ptr_[r];
}

Index SparsePattern::row(Index k) const {
  auto it = std::upper_bound(row_ptr_.begin(), row_ptr_.end(), k);
  return static_cast<Index>(it - row_ptr_.begin()) - 1;
}

std::vector<Index> SparsePattern::column_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(cols_), 0);
  for (Index c : col_index_) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

std::vector<std::pair<Index, Index>> SparsePattern::entries() const {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(col_index_.size());
  for (Index r = 0; r < rows_; ++r)
    for (Index k = row_begin(r); k < row_end(r); ++k) out.emplace_back(r, col(k));
  return out;
}

SparseMatrix::SparseMatrix(SparsePattern p, VectorXd v) : pattern(std::move(p)), values(std::move(v)) {
  if (values.size() != pattern.nnz()) throw DataError("sparse values do not match structure size");
}

SparseMatrix SparseMatrix::zeros(SparsePattern p) {
  const Index n = p.nnz();
  return SparseMatrix(std::move(p), VectorXd::Zero(n));
}

MatrixXd SparseMatrix::to_dense() const {
  MatrixXd dense = MatrixXd::Zero(rows(), cols());
  for (Index r = 0; r < rows(); ++r)
    for (Index k = pattern.row_begin(r); k < pattern.row_end(r); ++k) dense(r, pattern.col(k)) = values[k];
  return dense;
}

void ModelSpec::validate() const {
  if (n_s <= 0 || n_y <= 0 || n_x < 0) throw ConfigError("model dimensions must be positive");
  if (n_t < 2) throw ConfigError("n_t must be >= 2");
  if (c_structure.rows() != n_y || c_structure.cols() != n_s)
    throw ConfigError("c_structure shape does not match (n_y, n_s)");
  const auto counts = c_structure.column_counts();
  for (std::size_t j = 0; j < counts.size(); ++j)
    if (counts[j] == 0) throw ConfigError("chain " + std::to_string(j) + " influences no observation");
  hyper.validate(family);
}

void Dataset::validate(const ModelSpec& spec) const {
  if (X.rows() != spec.n_x || X.cols() != spec.n_t) throw DataError("X must be n_x x n_t");
  if (Y.rows() != spec.n_y || Y.cols() != spec.n_t) throw DataError("Y must be n_y x n_t");
  if (delta.size() != spec.n_t - 1) throw DataError("delta must have n_t - 1 entries");
  if (!all_finite(X)) throw DataError("X contains non-finite entries");
  if (!all_finite(Y)) throw DataError("Y contains non-finite entries");
  if (!delta.allFinite() || (delta.array() <= 0.0).any()) throw DataError("delta must be finite and > 0");
  if (spec.family == TransitionFamily::tp_scaled && ((X.array() < 0.0).any() || (X.array() > 1.0).any()))
    throw DataError("tp-scaled inputs must lie in [0, 1]");
}

void StateMatrix::validate(Index n_s, Index n_t, bool clamp_start) const {
  if (S.rows() != n_s || S.cols() != n_t) throw DataError("state matrix must be n_s x n_t");
  if (((S.array() != 1) && (S.array() != -1)).any()) throw DataError("states must be -1 or +1");
  if (clamp_start && (S.col(0).array() != -1).any()) throw DataError("clamped chains must start at -1");
}

void ChainWeights::validate(TransitionFamily family, Index n_x) const {
  if (w_plus.size() != n_x || w_minus.size() != n_x) throw DataError("weight vectors must have n_x entries");
  if (!w_plus.allFinite() || !w_minus.allFinite() || !std::isfinite(b_plus) || !std::isfinite(b_minus))
    throw DataError("weights must be finite");
  if (family == TransitionFamily::tp_scaled && ((w_plus.array() < 0.0).any() || (w_minus.array() < 0.0).any()))
    throw DataError("tp-scaled weights must be non-negative");
}

VectorXd emission_mean(const SparseMatrix& C, const Eigen::Ref<const Eigen::VectorXi>& s) {
  if (s.size() != C.cols()) throw DataError("state vector length does not match C columns");
  VectorXd out = VectorXd::Zero(C.rows());
  const auto& p = C.pattern;
  for (Index r = 0; r < C.rows(); ++r) {
    double acc = 0.0;
    for (Index k = p.row_begin(r); k < p.row_end(r); ++k)
      if (s[p.col(k)] == 1) acc += C.values[k];
    out[r] = acc;
  }
  return out;
}

double weight_log_prior(TransitionFamily family, const Hyperparameters& hyper, const ChainWeights& w) {
  double total = 0.0;
  for (Index j = 0; j < w.w_plus.size(); ++j)
    total += hyper.w_prior.log_density(w.w_plus[j]) + hyper.w_prior.log_density(w.w_minus[j]);
  if (family != TransitionFamily::tp_scaled)
    total += hyper.bias_prior.log_density(w.b_plus) + hyper.bias_prior.log_density(w.b_minus);
  return total;
}

double joint_log_density(const ModelSpec& spec, const Dataset& data, const StateMatrix& S, const SparseMatrix& C,
                         const WeightCollection& W, double v) {
  spec.validate();
  data.validate(spec);
  S.validate(spec.n_s, spec.n_t, false);
  if (!(C.pattern == spec.c_structure)) throw DataError("C does not match c_structure");
  if (static_cast<Index>(W.size()) != spec.n_s) throw DataError("one ChainWeights per chain required");
  for (const auto& w : W) w.validate(spec.family, spec.n_x);
  if (!(v > 0.0)) throw DataError("noise precision must be > 0");

  double total = 0.0;
  const double log_v = std::log(v);
  for (Index t = 0; t < spec.n_t; ++t) {
    const VectorXd resid = data.Y.col(t) - emission_mean(C, S.S.col(t));
    total += 0.5 * static_cast<double>(spec.n_y) * (log_v - kLog2Pi) - 0.5 * v * resid.squaredNorm();
  }
  for (Index i = 0; i < spec.n_s; ++i)
    for (Index t = 0; t + 1 < spec.n_t; ++t)
      total += log_transition_prob(spec.family, W[static_cast<std::size_t>(i)], data.X.col(t), data.delta[t],
                                   S.S(i, t), S.S(i, t + 1), spec.hyper.b0);
  for (Index k = 0; k < C.values.size(); ++k) total += spec.hyper.c_prior.log_density(C.values[k]);
  for (const auto& w : W) total += weight_log_prior(spec.family, spec.hyper, w);
  total += spec.hyper.v_prior.log_density(v);
  if (!std::isfinite(total)) throw DataError("joint log density is not finite for these parameters");
  return total;
}

}  // namespace iofhmm
