#include "iofhmm/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "iofhmm/errors.hpp"
#include "iofhmm/io.hpp"

#ifndef IOFHMM_VERSION
#define IOFHMM_VERSION "unknown"
#endif

namespace iofhmm::cli {

namespace {

class Reader {
 public:
  Reader(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + ": expected an object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(ctx_ + ": missing required field '" + key + "'");
    return convert<T>(key);
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return ctx_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError(ctx_ + ": unknown field '" + k + "'");
  }

 private:
  template <class T>
  T convert(const std::string& key) {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError(path(key) + ": expected >= 0");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string ctx_;
  std::set<std::string> used_;
};

std::string rep_name(int r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rep_%03d", r);
  return buf;
}

// Directories holding one dataset each: `dir` itself or its rep_* children.
std::vector<std::string> dataset_dirs(const fs::path& dir, const std::string& marker) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  if (fs::exists(dir / marker)) return {""};
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && name.rfind("rep_", 0) == 0 && fs::exists(e.path() / marker)) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError(dir.string() + ": no " + marker + " found (directly or under rep_*/)");
  return out;
}

json file_digests(const fs::path& root, const std::vector<std::string>& subdirs, const std::vector<std::string>& names) {
  json d = json::object();
  for (const auto& sub : subdirs)
    for (const auto& n : names) {
      const fs::path rel = sub.empty() ? fs::path(n) : fs::path(sub) / n;
      if (fs::exists(root / rel)) d[rel.generic_string()] = io::sha256_file(root / rel);
    }
  return d;
}

json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const std::vector<std::string> kDataFiles{"X.csv", "Y.csv", "delta.csv", "structure.csv", "model.json"};
const std::vector<std::string> kTruthFiles{"true_S.csv", "true_C.csv", "true_W.csv"};
const std::vector<std::string> kResultFiles{"W.csv", "summary.json"};

void write_manifest(const fs::path& out, json manifest, double seconds) {
  manifest["version"] = IOFHMM_VERSION;
  manifest["wall_clock_seconds"] = seconds;
  manifest["outputs"] = output_digests(out);
  io::write_text_atomic(out / "manifest.json", manifest.dump(2) + "\n");
}

MatrixXd weights_matrix(const WeightCollection& W, Index n_x) {
  MatrixXd m(static_cast<Index>(W.size()), 2 * n_x + 2);
  for (std::size_t i = 0; i < W.size(); ++i) {
    const auto r = static_cast<Index>(i);
    m.row(r).head(n_x) = W[i].w_plus.transpose();
    m.row(r).segment(n_x, n_x) = W[i].w_minus.transpose();
    m(r, 2 * n_x) = W[i].b_plus;
    m(r, 2 * n_x + 1) = W[i].b_minus;
  }
  return m;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

json parse_config_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
}

json load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  return parse_config_text(text, path.string());
}

SimDesign design_from_json(const json& j) {
  Reader r(j, "config");
  SimDesign d;
  r.get<std::string>("kind", "design");
  d.family = parse_family(r.require<std::string>("family"));
  d.T = r.require<Index>("T");
  d.replicates = r.require<int>("replicates");
  d.seed = r.require<std::uint64_t>("seed");
  d.n_s = r.get<Index>("n_s", d.n_s);
  d.n_y = r.get<Index>("n_y", d.n_y);
  d.n_x = r.get<Index>("n_x", d.n_x);
  d.nu = r.get<double>("nu", d.nu);
  d.p0 = r.get<double>("p0", d.p0);
  d.p1 = r.get<double>("p1", d.p1);
  d.mean_w = r.get<double>("mean_w", d.mean_w);
  d.var_w = r.get<double>("var_w", d.var_w);
  d.c_value_variance = r.get<double>("c_value_variance", d.c_value_variance);
  d.noise_variance = r.get<double>("noise_variance", d.noise_variance);
  d.min_row_nnz = r.get<Index>("min_row_nnz", d.min_row_nnz);
  d.max_row_nnz = r.get<Index>("max_row_nnz", d.max_row_nnz);
  r.finish();
  d.validate();
  return d;
}

json design_to_json(const SimDesign& d) {
  return {{"kind", "design"},
          {"family", to_string(d.family)},
          {"T", d.T},
          {"replicates", d.replicates},
          {"seed", d.seed},
          {"n_s", d.n_s},
          {"n_y", d.n_y},
          {"n_x", d.n_x},
          {"nu", d.nu},
          {"p0", d.p0},
          {"p1", d.p1},
          {"mean_w", d.mean_w},
          {"var_w", d.var_w},
          {"c_value_variance", d.c_value_variance},
          {"noise_variance", d.noise_variance},
          {"min_row_nnz", d.min_row_nnz},
          {"max_row_nnz", d.max_row_nnz}};
}

ScaleDesign scale_from_json(const json& j) {
  Reader r(j, "config");
  ScaleDesign d;
  r.require<std::string>("kind");
  d.seed = r.require<std::uint64_t>("seed");
  d.n_y = r.get<Index>("n_y", d.n_y);
  d.n_s = r.get<Index>("n_s", d.n_s);
  d.nnz = r.get<Index>("nnz", d.nnz);
  d.n_x = r.get<Index>("n_x", d.n_x);
  d.n_t = r.get<Index>("n_t", d.n_t);
  r.finish();
  d.validate();
  return d;
}

json scale_to_json(const ScaleDesign& d) {
  return {{"kind", "scale"}, {"seed", d.seed}, {"n_y", d.n_y}, {"n_s", d.n_s},
          {"nnz", d.nnz},    {"n_x", d.n_x},   {"n_t", d.n_t}};
}

LoopConfig loop_from_json(const json& j) {
  Reader r(j, "config");
  LoopConfig c;
  c.mode = parse_mode(r.get<std::string>("mode", to_string(c.mode)));
  c.max_outer = r.get<int>("max_outer", c.max_outer);
  c.outer_tol = r.get<double>("outer_tol", c.outer_tol);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.threads = r.get<int>("threads", c.threads);
  c.init_jitter = r.get<double>("init_jitter", c.init_jitter);
  c.restarts = r.get<int>("restarts", c.restarts);
  c.chain_reset_passes = r.get<int>("chain_reset_passes", c.chain_reset_passes);
  c.oscillation_patience = r.get<int>("oscillation_patience", c.oscillation_patience);
  if (const json* order = r.child("update_order")) {
    if (!order->is_array()) throw ConfigError("config.update_order: expected a list");
    c.update_order.clear();
    for (const auto& b : *order) {
      const std::string s = b.is_string() ? b.get<std::string>() : "";
      if (s == "q_s") c.update_order.push_back(Block::states);
      else if (s == "q_c") c.update_order.push_back(Block::emission);
      else if (s == "q_v") c.update_order.push_back(Block::noise);
      else if (s == "q_w") c.update_order.push_back(Block::weights);
      else throw ConfigError("config.update_order: unknown block '" + b.dump() + "'");
    }
  }
  if (const json* ep = r.child("ep")) {
    Reader e(*ep, "config.ep");
    c.ep.damping = e.get<double>("damping", c.ep.damping);
    c.ep.fraction = e.get<double>("fraction", c.ep.fraction);
    c.ep.max_sweeps = e.get<int>("max_sweeps", c.ep.max_sweeps);
    c.ep.tol = e.get<double>("tol", c.ep.tol);
    c.ep.quadrature_nodes = e.get<int>("quadrature_nodes", c.ep.quadrature_nodes);
    c.ep.sequential = e.get<bool>("sequential", c.ep.sequential);
    e.finish();
  }
  if (const json* ch = r.child("chains")) {
    Reader e(*ch, "config.chains");
    c.chains.tol = e.get<double>("tol", c.chains.tol);
    c.chains.max_sweeps = e.get<int>("max_sweeps", c.chains.max_sweeps);
    e.finish();
  }
  if (const json* op = r.child("optimizer")) {
    Reader e(*op, "config.optimizer");
    c.optimizer.grad_tol = e.get<double>("grad_tol", c.optimizer.grad_tol);
    c.optimizer.max_iter = e.get<int>("max_iter", c.optimizer.max_iter);
    c.optimizer.max_restarts = e.get<int>("max_restarts", c.optimizer.max_restarts);
    e.finish();
  }
  // Keys handled by cmd_infer.
  r.child("family");
  r.child("priors");
  r.child("design");
  r.finish();
  return c;
}

json loop_to_json(const LoopConfig& c) {
  json order = json::array();
  for (Block b : c.update_order) order.push_back(to_string(b));
  return {{"mode", to_string(c.mode)},
          {"max_outer", c.max_outer},
          {"outer_tol", c.outer_tol},
          {"seed", c.seed},
          {"threads", c.threads},
          {"init_jitter", c.init_jitter},
          {"restarts", c.restarts},
          {"chain_reset_passes", c.chain_reset_passes},
          {"oscillation_patience", c.oscillation_patience},
          {"update_order", order},
          {"ep",
           {{"damping", c.ep.damping},
            {"fraction", c.ep.fraction},
            {"max_sweeps", c.ep.max_sweeps},
            {"tol", c.ep.tol},
            {"quadrature_nodes", c.ep.quadrature_nodes},
            {"sequential", c.ep.sequential}}},
          {"chains", {{"tol", c.chains.tol}, {"max_sweeps", c.chains.max_sweeps}}},
          {"optimizer",
           {{"grad_tol", c.optimizer.grad_tol},
            {"max_iter", c.optimizer.max_iter},
            {"max_restarts", c.optimizer.max_restarts}}}};
}

Hyperparameters hyper_from_json(const json& j) {
  Reader r(j, "priors");
  Hyperparameters h;
  if (const json* c = r.child("c_prior")) {
    Reader e(*c, "priors.c_prior");
    const std::string kind = e.require<std::string>("kind");
    if (kind == "gaussian") h.c_prior = CPrior::gaussian(e.require<double>("mean"), e.require<double>("variance"));
    else if (kind == "flat") h.c_prior = CPrior::flat();
    else if (kind == "double-exponential") h.c_prior = CPrior::double_exponential(e.require<double>("rate"));
    else throw ConfigError("priors.c_prior.kind: unknown kind '" + kind + "'");
    e.finish();
  }
  if (const json* w = r.child("w_prior")) {
    Reader e(*w, "priors.w_prior");
    const std::string kind = e.require<std::string>("kind");
    if (kind == "exponential") h.w_prior.kind = WPriorKind::exponential;
    else if (kind == "double-exponential") h.w_prior.kind = WPriorKind::double_exponential;
    else throw ConfigError("priors.w_prior.kind: unknown kind '" + kind + "'");
    h.w_prior.rate = e.require<double>("rate");
    e.finish();
  }
  if (const json* b = r.child("bias_prior")) {
    Reader e(*b, "priors.bias_prior");
    h.bias_prior = {e.require<double>("mean"), e.require<double>("variance")};
    e.finish();
  }
  if (const json* v = r.child("v_prior")) {
    Reader e(*v, "priors.v_prior");
    h.v_prior = {e.require<double>("shape"), e.require<double>("rate")};
    e.finish();
  }
  h.b0 = r.get<double>("b0", h.b0);
  r.finish();
  return h;
}

json hyper_to_json(const Hyperparameters& h) {
  json c;
  switch (h.c_prior.kind) {
    case CPriorKind::gaussian: c = {{"kind", "gaussian"}, {"mean", h.c_prior.mean}, {"variance", h.c_prior.variance}}; break;
    case CPriorKind::flat: c = {{"kind", "flat"}}; break;
    case CPriorKind::double_exponential: c = {{"kind", "double-exponential"}, {"rate", h.c_prior.rate}}; break;
  }
  return {{"c_prior", c},
          {"w_prior",
           {{"kind", h.w_prior.kind == WPriorKind::exponential ? "exponential" : "double-exponential"},
            {"rate", h.w_prior.rate}}},
          {"bias_prior", {{"mean", h.bias_prior.mean}, {"variance", h.bias_prior.variance}}},
          {"v_prior", {{"shape", h.v_prior.shape}, {"rate", h.v_prior.rate}}},
          {"b0", h.b0}};
}

void write_dataset(const fs::path& dir, const ModelSpec& spec, const Dataset& data) {
  io::write_matrix(dir / "X.csv", data.X);
  io::write_matrix(dir / "Y.csv", data.Y);
  io::write_matrix(dir / "delta.csv", data.delta);
  io::write_structure(dir / "structure.csv", spec.c_structure);
  const json model = {{"family", to_string(spec.family)}, {"n_s", spec.n_s}, {"n_y", spec.n_y},
                      {"n_x", spec.n_x},                 {"n_t", spec.n_t}, {"priors", hyper_to_json(spec.hyper)}};
  io::write_text_atomic(dir / "model.json", model.dump(2) + "\n");
}

std::pair<ModelSpec, Dataset> read_dataset(const fs::path& dir) {
  const fs::path model_path = dir / "model.json";
  if (!fs::exists(model_path)) throw DataError("missing " + model_path.string());
  json model;
  try {
    model = json::parse(io::read_text(model_path));
  } catch (const json::parse_error& e) {
    throw DataError(model_path.string() + ": " + e.what());
  }
  ModelSpec spec;
  try {
    Reader r(model, model_path.string());
    spec.family = parse_family(r.require<std::string>("family"));
    spec.n_s = r.require<Index>("n_s");
    spec.n_y = r.require<Index>("n_y");
    spec.n_x = r.require<Index>("n_x");
    spec.n_t = r.require<Index>("n_t");
    const json* priors = r.child("priors");
    spec.hyper = priors ? hyper_from_json(*priors) : Hyperparameters{};
    r.finish();
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  for (const char* f : {"X.csv", "Y.csv", "delta.csv", "structure.csv"})
    if (!fs::exists(dir / f)) throw DataError("missing " + (dir / f).string());
  Dataset data;
  data.X = io::read_matrix(dir / "X.csv");
  data.Y = io::read_matrix(dir / "Y.csv");
  const MatrixXd delta = io::read_matrix(dir / "delta.csv");
  if (delta.cols() != 1) throw DataError((dir / "delta.csv").string() + ": expected a single column");
  data.delta = delta.col(0);
  spec.c_structure = io::read_triplets(dir / "structure.csv").pattern;
  spec.validate();
  data.validate(spec);
  return {spec, data};
}

void write_truth(const fs::path& dir, const SimInstance& inst) {
  io::write_matrix(dir / "true_S.csv", inst.true_S.S.cast<double>());
  io::write_triplets(dir / "true_C.csv", inst.true_C);
  io::write_matrix(dir / "true_W.csv", weights_matrix(inst.true_W, inst.spec.n_x));
}

json output_digests(const fs::path& dir) {
  json d = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) d[fs::relative(f, dir).generic_string()] = io::sha256_file(f);
  return d;
}

json cmd_simulate(const json& config_in, const fs::path& out, const Overrides& ov) {
  const auto start = std::chrono::steady_clock::now();
  json config = config_in;
  if (!config.is_object()) throw ConfigError("config: expected an object");
  if (ov.seed) config["seed"] = *ov.seed;
  if (ov.family) config["family"] = *ov.family;
  const std::string kind = config.value("kind", std::string("design"));
  std::vector<std::string> subdirs;
  json effective;
  if (kind == "design") {
    const SimDesign d = design_from_json(config);
    effective = design_to_json(d);
    for (int r = 0; r < d.replicates; ++r) {
      const std::string sub = d.replicates == 1 ? "" : rep_name(r);
      const SimInstance inst = generate_instance(d, replicate_seed(d.seed, r));
      write_dataset(out / sub, inst.spec, inst.data);
      write_truth(out / sub, inst);
      subdirs.push_back(sub);
    }
  } else if (kind == "scale") {
    if (ov.family && *ov.family != "tp-scaled") throw ConfigError("scale instances are tp-scaled");
    config.erase("family");
    const ScaleDesign d = scale_from_json(config);
    effective = scale_to_json(d);
    const SimInstance inst = generate_scale_instance(d);
    write_dataset(out, inst.spec, inst.data);
    write_truth(out, inst);
    subdirs.push_back("");
  } else {
    throw ConfigError("config.kind: unknown kind '" + kind + "' (expected design or scale)");
  }
  json manifest = {{"command", "simulate"},
                   {"config", effective},
                   {"seed", effective["seed"]},
                   {"args", {{"out", fs::absolute(out).string()}}},
                   {"inputs", json::object()},
                   {"datasets", subdirs}};
  write_manifest(out, manifest, elapsed(start));
  return json::parse(io::read_text(out / "manifest.json"));
}

json cmd_infer(const fs::path& data_dir, const json& config_in, const fs::path& out, const Overrides& ov) {
  const auto start = std::chrono::steady_clock::now();
  json config = config_in.is_null() ? json::object() : config_in;
  if (!config.is_object()) throw ConfigError("config: expected an object");
  if (ov.seed) config["seed"] = *ov.seed;
  if (ov.mode) config["mode"] = *ov.mode;
  if (ov.family) config["family"] = *ov.family;
  if (ov.threads) config["threads"] = *ov.threads;
  const LoopConfig loop = loop_from_json(config);

  SimDesign design;
  if (config.contains("design")) {
    Reader r(config["design"], "config.design");
    design.p0 = r.get<double>("p0", design.p0);
    design.p1 = r.get<double>("p1", design.p1);
    design.mean_w = r.get<double>("mean_w", design.mean_w);
    r.finish();
  }
  std::optional<TransitionFamily> family;
  if (config.contains("family")) {
    if (!config["family"].is_string()) throw ConfigError("config.family: expected a string");
    family = parse_family(config["family"].get<std::string>());
  }
  std::optional<Hyperparameters> priors;
  if (config.contains("priors")) priors = hyper_from_json(config["priors"]);

  const auto subdirs = dataset_dirs(data_dir, "Y.csv");
  json runs = json::array();
  for (const auto& sub : subdirs) {
    auto [spec, data] = read_dataset(data_dir / sub);
    if (family) std::tie(spec, data) = retarget_problem(spec, data, *family, design);
    if (priors) spec.hyper = *priors;
    const RunState st = run_inference(spec, data, loop);
    const Estimates est = extract_estimates(st, data);
    const fs::path dir = out / sub;

    io::write_triplets(dir / "C_mean.csv", st.q_c.mean_matrix(spec.c_structure));
    io::write_triplets(dir / "C_var.csv", st.q_c.variance_matrix(spec.c_structure));
    io::write_triplets(dir / "C_hat.csv", est.C);
    io::write_matrix(dir / "W.csv", weights_matrix(est.W, spec.n_x));
    if (spec.family == TransitionFamily::sig) {
      MatrixXd sd(spec.n_s, 2 * spec.n_x + 2);
      for (Index i = 0; i < spec.n_s; ++i) {
        const auto& c = st.q_w.chains[static_cast<std::size_t>(i)];
        const VectorXd p = c.plus.cov.diagonal().cwiseSqrt();
        const VectorXd m = c.minus.cov.diagonal().cwiseSqrt();
        sd.row(i) << p.head(spec.n_x).transpose(), m.head(spec.n_x).transpose(), p[spec.n_x], m[spec.n_x];
      }
      io::write_matrix(dir / "W_sd.csv", sd);
    }
    io::write_matrix(dir / "mu.csv", est.mu);
    MatrixXd trace(static_cast<Index>(st.records.size()), 12);
    for (std::size_t k = 0; k < st.records.size(); ++k) {
      const auto& rec = st.records[k];
      const auto& c = rec.components;
      trace.row(static_cast<Index>(k)) << rec.iteration, rec.free_energy, c.emission_nll, c.transition_nll,
          c.emission_block, c.weight_block, c.noise_block, c.state_entropy, rec.chain_sweeps,
          rec.emission_converged ? 1.0 : 0.0, rec.weights_converged ? 1.0 : 0.0, rec.damping;
    }
    io::write_matrix(dir / "trace.csv", trace);
    const json summary = {{"family", to_string(spec.family)},
                          {"mode", to_string(st.mode)},
                          {"status", st.status},
                          {"converged", st.converged},
                          {"oscillating", st.oscillating},
                          {"iterations", st.iterations},
                          {"restart", st.restart},
                          {"chain_resets", st.chain_resets},
                          {"emission_converged", st.q_c.all_converged()},
                          {"free_energy", json_number(st.trace.empty() ? NAN : st.trace.back())},
                          {"q_v", {{"shape", st.q_v.shape}, {"rate", st.q_v.rate}}},
                          {"v_hat", est.v},
                          {"trace_columns",
                           {"iteration", "free_energy", "emission_nll", "transition_nll", "emission_block",
                            "weight_block", "noise_block", "state_entropy", "chain_sweeps", "emission_converged",
                            "weights_converged", "damping"}}};
    io::write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
    json warnings = json::array();
    if (spec.family == TransitionFamily::sig && data.delta.size() > 0 &&
        (data.delta.array() != data.delta[0]).any())
      warnings.push_back("sig transitions ignore time lags; non-uniform delta is not used");
    runs.push_back({{"dataset", sub},
                    {"warnings", warnings},
                    {"status", st.status},
                    {"converged", st.converged},
                    {"emission_converged", st.q_c.all_converged()},
                    {"free_energy_trace", st.trace}});
  }
  json effective = loop_to_json(loop);
  for (const char* k : {"family", "priors", "design"})
    if (config.contains(k)) effective[k] = config[k];
  json manifest = {{"command", "infer"},
                   {"config", effective},
                   {"seed", loop.seed},
                   {"args", {{"data", fs::absolute(data_dir).string()}, {"out", fs::absolute(out).string()}}},
                   {"inputs", file_digests(data_dir, subdirs, kDataFiles)},
                   {"runs", runs}};
  write_manifest(out, manifest, elapsed(start));
  return json::parse(io::read_text(out / "manifest.json"));
}

json cmd_evaluate(const fs::path& results_dir, const fs::path& truth_dir, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto subdirs = dataset_dirs(results_dir, "W.csv");
  std::vector<RocCurve> curves;
  std::vector<std::string> names;
  MatrixXd aucs(static_cast<Index>(subdirs.size()), 2);
  std::vector<std::vector<double>> roc_rows;
  json undefined = json::array();
  for (std::size_t k = 0; k < subdirs.size(); ++k) {
    const fs::path truth_file = truth_dir / subdirs[k] / "true_W.csv";
    if (!fs::exists(truth_file)) throw DataError("missing truth file " + truth_file.string());
    const MatrixXd truth = io::read_matrix(truth_file);
    const MatrixXd est = io::read_matrix(results_dir / subdirs[k] / "W.csv");
    if (truth.rows() != est.rows() || truth.cols() != est.cols() || truth.cols() < 2 || truth.cols() % 2 != 0)
      throw DataError("W shapes differ between " + truth_file.string() + " and the results");
    const Index n_w = truth.cols() - 2;
    std::vector<int> pattern;
    VectorXd scores(truth.rows() * n_w);
    for (Index i = 0; i < truth.rows(); ++i)
      for (Index j = 0; j < n_w; ++j) {
        pattern.push_back(truth(i, j) != 0.0 ? 1 : 0);
        scores[i * n_w + j] = std::abs(est(i, j));
      }
    const RocCurve roc = roc_recovery(pattern, scores);
    aucs(static_cast<Index>(k), 0) = static_cast<double>(k);
    aucs(static_cast<Index>(k), 1) = roc.auc;
    if (!roc.defined) {
      undefined.push_back(subdirs[k]);
      continue;
    }
    for (std::size_t p = 0; p < roc.tpr.size(); ++p)
      roc_rows.push_back({static_cast<double>(k), roc.thresholds[p], roc.fpr[p], roc.tpr[p]});
    curves.push_back(roc);
  }
  MatrixXd roc_table(static_cast<Index>(roc_rows.size()), 4);
  for (std::size_t p = 0; p < roc_rows.size(); ++p)
    for (Index c = 0; c < 4; ++c) roc_table(static_cast<Index>(p), c) = roc_rows[p][static_cast<std::size_t>(c)];
  constexpr int kGrid = 101;
  MatrixXd mean_curve(kGrid, 3);
  double mean_auc = NAN;
  double sd_auc = NAN;
  if (!curves.empty()) {
    const double n = static_cast<double>(curves.size());
    for (int g = 0; g < kGrid; ++g) {
      const double f = static_cast<double>(g) / (kGrid - 1);
      double s = 0.0, s2 = 0.0;
      for (const auto& c : curves) {
        const double v = tpr_at(c, f);
        s += v;
        s2 += v * v;
      }
      mean_curve.row(g) << f, s / n, std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
    }
    double s = 0.0, s2 = 0.0;
    for (const auto& c : curves) {
      s += c.auc;
      s2 += c.auc * c.auc;
    }
    mean_auc = s / n;
    sd_auc = std::sqrt(std::max(0.0, s2 / n - mean_auc * mean_auc));
  } else {
    mean_curve.resize(0, 3);
  }
  io::write_matrix(out / "auc.csv", aucs);
  io::write_matrix(out / "roc.csv", roc_table);
  io::write_matrix(out / "roc_mean.csv", mean_curve);
  json per = json::array();
  for (std::size_t k = 0; k < subdirs.size(); ++k)
    per.push_back({{"dataset", subdirs[k]}, {"auc", json_number(aucs(static_cast<Index>(k), 1))}});
  const json summary = {{"replicates", subdirs.size()}, {"used", curves.size()},   {"mean_auc", json_number(mean_auc)},
                        {"sd_auc", json_number(sd_auc)}, {"per_replicate", per}, {"undefined", undefined},
                        {"columns",
                         {{"auc.csv", {"replicate", "auc"}},
                          {"roc.csv", {"replicate", "threshold", "fpr", "tpr"}},
                          {"roc_mean.csv", {"fpr", "mean_tpr", "sd_tpr"}}}}};
  io::write_text_atomic(out / "summary.json", summary.dump(2) + "\n");
  std::vector<std::string> truth_files{"true_W.csv"};
  json inputs = {{"results", file_digests(results_dir, subdirs, {"W.csv"})},
                 {"truth", file_digests(truth_dir, subdirs, truth_files)}};
  json manifest = {{"command", "evaluate"},
                   {"config", json::object()},
                   {"seed", nullptr},
                   {"args",
                    {{"results", fs::absolute(results_dir).string()},
                     {"truth", fs::absolute(truth_dir).string()},
                     {"out", fs::absolute(out).string()}}},
                   {"inputs", inputs}};
  write_manifest(out, manifest, elapsed(start));
  return json::parse(io::read_text(out / "manifest.json"));
}

json rerun_manifest(const fs::path& manifest_path, const std::optional<fs::path>& out_override) {
  json m;
  try {
    m = json::parse(io::read_text(manifest_path));
  } catch (const json::parse_error& e) {
    throw ConfigError(manifest_path.string() + ": " + e.what());
  }
  if (!m.contains("command") || !m.contains("args") || !m.contains("config"))
    throw ConfigError(manifest_path.string() + ": not a run manifest");
  const std::string command = m["command"];
  const json& args = m["args"];
  const fs::path out = out_override ? *out_override : fs::path(args["out"].get<std::string>());
  auto check = [](const fs::path& root, const json& digests) {
    for (const auto& [rel, digest] : digests.items()) {
      const fs::path p = root / rel;
      if (!fs::exists(p)) throw DataError("manifest input missing: " + p.string());
      if (io::sha256_file(p) != digest.get<std::string>()) throw DataError("manifest input changed: " + p.string());
    }
  };
  if (command == "simulate") return cmd_simulate(m["config"], out);
  if (command == "infer") {
    const fs::path data = args["data"].get<std::string>();
    check(data, m["inputs"]);
    return cmd_infer(data, m["config"], out);
  }
  if (command == "evaluate") {
    const fs::path results = args["results"].get<std::string>();
    const fs::path truth = args["truth"].get<std::string>();
    check(results, m["inputs"]["results"]);
    check(truth, m["inputs"]["truth"]);
    return cmd_evaluate(results, truth, out);
  }
  throw ConfigError(manifest_path.string() + ": unknown command '" + command + "'");
}

}  // namespace iofhmm::cli
