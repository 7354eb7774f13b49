#pragma once

#include "posenorm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

namespace posenorm {

inline constexpr char kCheckpointMagic[4] = {'P', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout: magic "PNCK", uint32 version, uint64 header length, a
/// JSON header (model spec, training state, tensor table), then every tensor
/// as little-endian float32 in column-major order.
struct CheckpointInfo {
  std::uint32_t version = kCheckpointVersion;
  std::string tag;
  std::string config;  ///< resolved run config (JSON text), may be empty
  ModelSpec spec;
  bool base_trained = false;
  bool features_frozen = false;
};

void save_checkpoint(const std::filesystem::path& path, Model& model, const std::string& tag,
                     const std::string& config_json = "");

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointInfo info;
};

/// Rebuilds the model and its freeze state. Errors on a missing file, wrong
/// magic, unsupported version, or tensors that do not match the model spec.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Header only.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

}  // namespace posenorm
