#pragma once

#include "ecvd/train/config.hpp"
#include "ecvd/train/ensemble_training.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace ecvd::train {

/// Provenance recorded next to the weights.
struct CheckpointMeta {
  std::string variant;
  data::Normalization normalization;
  Hyperparams single_model = Hyperparams::single_model();
  Hyperparams ensemble = Hyperparams::ensemble();
  std::optional<std::uint64_t> fold_plan_digest;
  int fold = 0;  // 0 when not tied to a fold
  std::string weight_init = "pretrained";
};

/// Writes `<stem>.ecvdw` and the `<stem>.json` manifest; returns the manifest path.
std::filesystem::path save_checkpoint(const std::filesystem::path& stem, fusion::EnsembleModel<float>& model,
                                      const CheckpointMeta& meta);
std::filesystem::path save_checkpoint(const std::filesystem::path& stem, backbone::Backbone<float>& net,
                                      const CheckpointMeta& meta);

/// Either an ensemble or a single fine-tuned backbone, rebuilt from a manifest.
struct LoadedModel {
  std::unique_ptr<fusion::EnsembleModel<float>> ensemble;
  std::unique_ptr<backbone::Backbone<float>> backbone;
  nlohmann::json manifest;
  data::Normalization normalization;

  /// Eval-mode logits, N x 3 x 1 x 1.
  Tensor<float> logits(const Tensor<float>& x);
  LogitsFn logits_fn() {
    return [this](const Tensor<float>& x) { return logits(x); };
  }
};

/// Accepts the manifest path or the stem; weights are loaded strictly.
LoadedModel load_checkpoint(const std::filesystem::path& path);

nlohmann::json normalization_json(const data::Normalization& n);
data::Normalization normalization_from_json(const nlohmann::json& j);

}  // namespace ecvd::train
