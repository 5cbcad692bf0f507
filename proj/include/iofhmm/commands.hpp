#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "iofhmm/inference.hpp"
#include "iofhmm/simbench.hpp"

namespace iofhmm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Parses JSON config text; syntax errors name the line and column.
json parse_config_text(const std::string& text, const std::string& source);
json load_config(const fs::path& path);

SimDesign design_from_json(const json& j);
json design_to_json(const SimDesign& d);
ScaleDesign scale_from_json(const json& j);
json scale_to_json(const ScaleDesign& d);
LoopConfig loop_from_json(const json& j);
json loop_to_json(const LoopConfig& c);
Hyperparameters hyper_from_json(const json& j);
json hyper_to_json(const Hyperparameters& h);

void write_dataset(const fs::path& dir, const ModelSpec& spec, const Dataset& data);
std::pair<ModelSpec, Dataset> read_dataset(const fs::path& dir);
void write_truth(const fs::path& dir, const SimInstance& inst);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> family;
  std::optional<int> threads;
};

// Each command writes into `out` and returns the manifest it stored there.
json cmd_simulate(const json& config, const fs::path& out, const Overrides& ov = {});
json cmd_infer(const fs::path& data_dir, const json& config, const fs::path& out, const Overrides& ov = {});
json cmd_evaluate(const fs::path& results_dir, const fs::path& truth_dir, const fs::path& out);

// Re-executes the command recorded in a manifest (inputs must still match their digests).
json rerun_manifest(const fs::path& manifest_path, const std::optional<fs::path>& out = std::nullopt);

// Digests of every file under `dir` except the manifest, keyed by relative path.
json output_digests(const fs::path& dir);

}  // namespace iofhmm::cli
