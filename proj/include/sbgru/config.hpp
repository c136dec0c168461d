#pragma once

// Run configuration: one `key = value` per line, `#` starts a comment. A
// `preset` key (desk or paper) supplies defaults that the remaining keys
// override regardless of their order in the file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sbgru/model.hpp"
#include "sbgru/trainer.hpp"

namespace sbgru {

inline constexpr const char* kSeedEnvVar = "SBGRU_SEED";

struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;  // vocabulary sizes are filled in from the corpus
  /// Kind for the last encoder layer; every other layer is plain. Ignored
  /// when layer_kinds is set explicitly.
  LayerKind layer_kind = LayerKind::sb;
  std::vector<LayerKind> layer_kinds;
  bool embed_dim_set = false;
  TrainConfig train;
  bool seed_set = false;
  std::size_t min_freq = 1;
  std::filesystem::path train_corpus;
  std::filesystem::path dev_corpus;
  std::filesystem::path out_dir = "run";
  std::filesystem::path metric_log;  // defaults to out_dir/metrics.tsv

  /// Layer kinds after resolving layer_kind / layer_kinds.
  std::vector<LayerKind> resolved_kinds() const;
};

/// Preset defaults. Throws ContractError for an unknown name.
RunConfig preset_config(std::string_view name);

/// Relative paths are resolved against `base_dir`. Unknown keys and malformed
/// lines raise ParseError naming the key and line.
RunConfig parse_config(std::string_view text, const std::string& origin, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

/// Replace the seed with $SBGRU_SEED unless the config sets `seed` itself.
void apply_seed_env(RunConfig& cfg);

/// One-line summary of the hyperparameters that define a preset.
std::string describe_hyperparameters(const RunConfig& cfg);

}  // namespace sbgru
