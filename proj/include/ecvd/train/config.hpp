#pragma once

#include "ecvd/data/image.hpp"
#include "ecvd/fusion/ensemble.hpp"
#include "ecvd/metrics/metrics.hpp"
#include "ecvd/train/hyperparams.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace ecvd::train {

/// Environment variables starting with this prefix override config keys;
/// "__" separates nesting levels: ECVD_FOLDS__SEED=7 sets folds.seed.
inline constexpr std::string_view kEnvPrefix = "ECVD_";

enum class WeightInit { Pretrained, Random };

struct ExperimentConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path output_root = "out";
  std::string run_id;  // empty: derived from the config hash

  int folds_k = 5;
  std::uint64_t folds_seed = 42;
  double validation_fraction = 0.10;
  std::uint64_t seed = 2021;  // master seed for every derived stream

  std::string variant = "cvdnet3";
  bool finetune_per_fold = true;
  std::string shufflenet_version = "v1";

  Hyperparams single_model = Hyperparams::single_model();
  Hyperparams ensemble = Hyperparams::ensemble();
  fusion::HeadConfig head;
  data::Normalization normalization;

  WeightInit weight_init = WeightInit::Pretrained;
  std::filesystem::path weights_dir = "weights";
  int calibration_images = 32;  // batch used to set batch-norm statistics of randomly initialized backbones

  int bench_warmup = 3;
  int bench_repeats = 10;
  std::string gradcam_layer = "head.relu2";
  std::string gradcam_score = "logit";
  double overlay_alpha = 0.4;
  metrics::CiMode ci_mode = metrics::CiMode::TotalCount;

  /// Directory `<output_root>/<run id>`.
  std::filesystem::path run_dir() const;
  std::string effective_run_id() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Parses a config object. Unknown keys, type mismatches and out-of-range
/// values are collected and reported together in one error.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Applies `env` entries carrying kEnvPrefix onto `j`. Values are parsed as
/// JSON when possible and taken as strings otherwise.
void apply_env_overrides(nlohmann::json& j, const std::map<std::string, std::string>& env);

/// The process environment as a map.
std::map<std::string, std::string> process_environment();

/// File (may be empty for defaults) + environment -> validated config.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& env = process_environment());

/// Digest of the canonical JSON form.
std::uint64_t config_hash(const ExperimentConfig& cfg);

std::string hex_digest(std::uint64_t h);

nlohmann::json to_json(const Hyperparams& hp);

}  // namespace ecvd::train
