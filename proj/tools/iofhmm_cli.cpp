#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "iofhmm/commands.hpp"
#include "iofhmm/errors.hpp"

namespace fs = std::filesystem;
using namespace iofhmm;

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kConvergence = 4 };

int main(int argc, char** argv) {
  CLI::App app{"Input-output factorial HMM inference"};
  app.require_subcommand(0, 1);
  std::string manifest;
  std::string rerun_out;
  app.add_option("--manifest", manifest, "Rerun the command recorded in a manifest");

  cli::Overrides ov;
  std::uint64_t seed = 0;
  std::string mode, family;
  int threads = 0;

  auto* sim = app.add_subcommand("simulate", "Generate synthetic instances");
  std::string sim_config, sim_out;
  sim->add_option("--config", sim_config, "JSON design")->required();
  sim->add_option("--out", sim_out, "Output directory")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "Override the master seed");
  auto* sim_family = sim->add_option("--family", family, "sig | tp-scaled");

  auto* inf = app.add_subcommand("infer", "Run variational inference on a dataset");
  std::string inf_data, inf_config, inf_out;
  inf->add_option("--data", inf_data, "Dataset directory")->required();
  inf->add_option("--config", inf_config, "JSON inference settings");
  inf->add_option("--out", inf_out, "Results directory")->required();
  auto* inf_seed = inf->add_option("--seed", seed, "Override the seed");
  auto* inf_mode = inf->add_option("--mode", mode, "variational-em | factored-ep");
  auto* inf_family = inf->add_option("--family", family, "sig | tp-scaled | tp-exp");
  auto* inf_threads = inf->add_option("--threads", threads, "Worker threads");

  auto* ev = app.add_subcommand("evaluate", "ROC/AUC of recovered weights");
  std::string ev_results, ev_truth, ev_out;
  ev->add_option("--results", ev_results, "Results directory")->required();
  ev->add_option("--truth", ev_truth, "Directory with true_W.csv")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();

  app.add_option("--out", rerun_out, "Output directory when rerunning a manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    cli::json result;
    if (!manifest.empty()) {
      std::optional<fs::path> out;
      if (!rerun_out.empty()) out = rerun_out;
      result = cli::rerun_manifest(manifest, out);
    } else if (*sim) {
      if (*sim_seed) ov.seed = seed;
      if (*sim_family) ov.family = family;
      result = cli::cmd_simulate(cli::load_config(sim_config), sim_out, ov);
    } else if (*inf) {
      if (*inf_seed) ov.seed = seed;
      if (*inf_mode) ov.mode = mode;
      if (*inf_family) ov.family = family;
      if (*inf_threads) ov.threads = threads;
      const cli::json config = inf_config.empty() ? cli::json::object() : cli::load_config(inf_config);
      result = cli::cmd_infer(inf_data, config, inf_out, ov);
    } else if (*ev) {
      result = cli::cmd_evaluate(ev_results, ev_truth, ev_out);
    } else {
      std::cerr << app.help();
      return kConfig;
    }
    if (result.contains("runs"))
      for (const auto& r : result["runs"]) {
        const std::string name = r["dataset"].get<std::string>().empty() ? "." : r["dataset"].get<std::string>();
        for (const auto& w : r.value("warnings", cli::json::array()))
          std::cerr << "warning: " << name << ": " << w.get<std::string>() << "\n";
        if (!r["converged"].get<bool>())
          std::cerr << "warning: " << name << " ended with status '"
                    << r["status"].get<std::string>() << "'\n";
      }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << "\n";
    return kConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
