#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "zeropur/attacks.hpp"
#include "zeropur/augment.hpp"
#include "zeropur/purify.hpp"
#include "zeropur/train.hpp"

namespace zp {

struct DatasetSpec {
  std::string kind = "procedural";  ///< procedural | cifar10
  std::filesystem::path path;       ///< cifar10: evaluation batch
  std::filesystem::path train_path; ///< cifar10: training batch
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
};

struct SweepGrid {
  std::vector<BlurOp> operators;
  std::vector<Augmentation> presets;
  std::map<std::string, std::filesystem::path> models;  ///< preset name -> weights file
};

/// Everything an experiment depends on. Per-stage seeds are derived from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  std::filesystem::path model_path;  ///< load instead of training when set
  std::filesystem::path model_save;  ///< where a freshly trained model is written
  TrainRecipe train;
  AttackConfig attack;
  GuidedShiftConfig gs;
  AdaptiveProjectionConfig ap;
  DefenseMode defense = DefenseMode::zeropur;
  std::size_t sample_count = 200;
  SweepGrid sweep;

  void validate() const;
};

/// Ordered key -> value map of a parsed config file.
using ConfigMap = std::map<std::string, std::string>;

/// Flat `key = value` lines; `#` starts a comment; `[section]` prefixes the
/// following keys with `section.`. Duplicate keys and malformed lines throw
/// ConfigError with the line number.
ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);

/// Numbers accept a plain decimal or a fraction such as `8/255`.
double parse_number(const std::string& text);
BlurOp parse_blur_op(const std::string& text);
std::string format_blur_op(const BlurOp& op);

/// Applies one setting; unknown keys and bad values throw ConfigError.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig make_config(const ConfigMap& settings);

/// Every setting as sorted `key = value` lines, with round-trippable numbers.
std::string canonical_config(const ExperimentConfig& cfg);
/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace zp
