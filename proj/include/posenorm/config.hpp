#pragma once

#include "posenorm/learners.hpp"
#include "posenorm/model.hpp"
#include "posenorm/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace posenorm {

/// Environment variable that replaces data.root when set and non-empty.
inline constexpr const char* kDataRootEnv = "POSENORM_DATA_ROOT";

struct DataConfig {
  std::string source = "files";  ///< "files" (dataset directory) or "synthetic" (generated in memory)
  std::string root;
  std::string pose_root;          ///< separate pose-annotated dataset for disjoint supervision
  SyntheticConfig synthetic;
  double reference_fraction = 0.2;
};

struct EvalConfig {
  std::vector<std::string> shots{"1", "5", "all"};
  int n_trials = 600;
  int all_shot_passes = 1;
  std::vector<double> pck_thresholds;  ///< empty: 0.05, 0.10, ..., 0.50
  int neighbors_k = 5;
  int neighbor_queries = 3;
  std::vector<double> fractions{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int runs = 1;  ///< independent training runs per sweep point
};

struct RunConfig {
  std::string preset;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  DataConfig data;
  ModelSpec model;  ///< base_classes are filled from the dataset split at run time
  TrainConfig train;
  EvalConfig eval;
};

/// Names of every built-in preset.
std::vector<std::string> preset_names();

/// Preset values on top of the defaults. Unknown names are an error.
RunConfig preset(const std::string& name);

/// Full JSON text of a config (every key present).
std::string to_json(const RunConfig& config);

/// Resolution order: defaults, then the preset named in the file (or by
/// `preset_override`), then the file's keys, then the data-root environment
/// variable, then `overrides` ("dotted.key=value", last wins). Any key that
/// does not exist in the schema is an error.
RunConfig resolve_config(const std::string& json_text, const std::vector<std::string>& overrides = {},
                         const std::string& preset_override = "");
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                      const std::string& preset_override = "");

/// Hex FNV-1a of the resolved JSON.
std::string config_hash(const RunConfig& config);

}  // namespace posenorm
