#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "iofhmm/chain_posterior.hpp"
#include "iofhmm/commands.hpp"
#include "iofhmm/errors.hpp"
#include "iofhmm/inference.hpp"
#include "iofhmm/simbench.hpp"
#include "iofhmm/transitions.hpp"

namespace py = pybind11;
using namespace iofhmm;
using cli::json;

namespace {

json from_text(const std::string& s) { return s.empty() ? json::object() : cli::parse_config_text(s, "config"); }

ChainWeights make_weights(const VectorXd& w_plus, const VectorXd& w_minus, double b_plus, double b_minus) {
  return {w_plus, w_minus, b_plus, b_minus};
}

MatrixXd weights_table(const WeightCollection& W) {
  if (W.empty()) return MatrixXd(0, 0);
  const Index n_x = W.front().w_plus.size();
  MatrixXd out(static_cast<Index>(W.size()), 2 * n_x + 2);
  for (std::size_t i = 0; i < W.size(); ++i) {
    const auto r = static_cast<Index>(i);
    out.row(r).head(n_x) = W[i].w_plus;
    out.row(r).segment(n_x, n_x) = W[i].w_minus;
    out(r, 2 * n_x) = W[i].b_plus;
    out(r, 2 * n_x + 1) = W[i].b_minus;
  }
  return out;
}

py::dict instance_dict(const SimInstance& inst) {
  py::dict d;
  d["X"] = inst.data.X;
  d["Y"] = inst.data.Y;
  d["delta"] = inst.data.delta;
  d["S"] = Eigen::MatrixXi(inst.true_S.S);
  d["C"] = inst.true_C.to_dense();
  d["structure"] = inst.spec.c_structure.entries();
  d["W"] = weights_table(inst.true_W);
  d["pattern"] = inst.true_pattern;
  d["family"] = std::string(to_string(inst.spec.family));
  return d;
}

py::dict fit(const MatrixXd& Y, const MatrixXd& X, const std::vector<std::pair<Index, Index>>& structure,
             const std::string& family, const std::optional<VectorXd>& delta, const std::string& priors,
             const std::string& config) {
  ModelSpec spec;
  spec.family = parse_family(family);
  spec.n_y = Y.rows();
  spec.n_t = Y.cols();
  spec.n_x = X.rows();
  Index n_s = 0;
  for (const auto& [r, c] : structure) n_s = std::max(n_s, c + 1);
  spec.n_s = n_s;
  spec.c_structure = SparsePattern(spec.n_y, n_s, structure);
  if (!priors.empty()) spec.hyper = cli::hyper_from_json(from_text(priors));
  Dataset data{X, delta ? *delta : Dataset::uniform_delta(spec.n_t), Y};
  const LoopConfig loop = cli::loop_from_json(from_text(config));

  RunState st;
  {
    py::gil_scoped_release release;
    st = run_inference(spec, data, loop);
  }
  const Estimates est = extract_estimates(st, data);
  py::dict out;
  out["C_mean"] = st.q_c.mean_matrix(spec.c_structure).to_dense();
  out["C_var"] = st.q_c.variance_matrix(spec.c_structure).to_dense();
  out["C_hat"] = est.C.to_dense();
  out["W"] = weights_table(est.W);
  out["mu"] = est.mu;
  out["noise_precision"] = est.v;
  out["trace"] = st.trace;
  out["iterations"] = st.iterations;
  out["converged"] = st.converged;
  out["status"] = st.status;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Approximate inference for input-output factorial hidden Markov models";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  m.def(
      "transition_prob",
      [](const std::string& family, const VectorXd& w_plus, const VectorXd& w_minus, const VectorXd& x, double delta,
         int from, int to, double b0, double b_plus, double b_minus) {
        return transition_prob(parse_family(family), make_weights(w_plus, w_minus, b_plus, b_minus), x, delta, from, to,
                               b0);
      },
      py::arg("family"), py::arg("w_plus"), py::arg("w_minus"), py::arg("x"), py::arg("delta"), py::arg("from_state"),
      py::arg("to_state"), py::arg("b0") = Hyperparameters{}.b0, py::arg("b_plus") = 0.0, py::arg("b_minus") = 0.0);

  m.def(
      "calibrate_simulation",
      [](const std::string& family, double p0, double p1, double mean_w) {
        const Calibration c = calibrate_simulation(parse_family(family), p0, p1, mean_w);
        return std::pair{c.bias, c.input_scale};
      },
      py::arg("family"), py::arg("p0"), py::arg("p1"), py::arg("mean_w") = 1.0);

  m.def(
      "forward_backward",
      [](const NodePotentials& node, const std::vector<Eigen::Matrix2d>& edges, bool clamp_start) {
        const ChainMarginals cm = forward_backward(node, edges, clamp_start);
        return py::make_tuple(cm.mu, cm.pair, cm.log_z);
      },
      py::arg("node"), py::arg("edges"), py::arg("clamp_start") = true,
      "Marginals of a binary chain from log node potentials (2 x n) and log edge tables.");

  m.def(
      "roc_recovery",
      [](const std::vector<int>& truth, const VectorXd& scores) {
        const RocCurve r = roc_recovery(truth, scores);
        py::dict d;
        d["thresholds"] = r.thresholds;
        d["tpr"] = r.tpr;
        d["fpr"] = r.fpr;
        d["auc"] = r.auc;
        d["defined"] = r.defined;
        return d;
      },
      py::arg("truth"), py::arg("scores"));

  m.def(
      "generate_instance",
      [](const std::string& design, int replicate) {
        const SimDesign d = cli::design_from_json(from_text(design));
        return instance_dict(generate_instance(d, replicate_seed(d.seed, replicate)));
      },
      py::arg("design"), py::arg("replicate") = 0);

  m.def("fit", &fit, py::arg("Y"), py::arg("X"), py::arg("structure"), py::arg("family") = "tp-scaled",
        py::arg("delta") = std::nullopt, py::arg("priors") = "", py::arg("config") = "");

  m.def(
      "simulate", [](const std::string& config, const std::string& out) { return cli::cmd_simulate(from_text(config), out).dump(); },
      py::arg("config"), py::arg("out"));
  m.def(
      "infer",
      [](const std::string& data, const std::string& config, const std::string& out) {
        py::gil_scoped_release release;
        return cli::cmd_infer(data, from_text(config), out).dump();
      },
      py::arg("data"), py::arg("config"), py::arg("out"));
  m.def(
      "evaluate",
      [](const std::string& results, const std::string& truth, const std::string& out) {
        return cli::cmd_evaluate(results, truth, out).dump();
      },
      py::arg("results"), py::arg("truth"), py::arg("out"));
  m.def(
      "rerun",
      [](const std::string& manifest, const std::optional<std::string>& out) {
        std::optional<cli::fs::path> o;
        if (out) o = *out;
        return cli::rerun_manifest(manifest, o).dump();
      },
      py::arg("manifest"), py::arg("out") = std::nullopt);
  m.def(
      "output_digests", [](const std::string& dir) { return cli::output_digests(dir).dump(); }, py::arg("dir"));

  m.attr("__version__") = IOFHMM_VERSION;
}
