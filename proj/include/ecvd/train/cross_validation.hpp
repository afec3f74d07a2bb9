#pragma once

#include "ecvd/train/checkpoint.hpp"

#include <functional>
#include <json.hpp>

namespace ecvd::train {

using Logger = std::function<void(const std::string&)>;

/// `out/<run-id>/{folds,checkpoints,reports,heatmaps,bench}`.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path folds() const { return root / "folds"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path heatmaps() const { return root / "heatmaps"; }
  std::filesystem::path bench() const { return root / "bench"; }
  void create() const;
};

/// Test items of one fold plus the train/validation split of the rest.
struct FoldSplit {
  int fold_id = 0;  // 1-based
  data::IndexSet train, val, test;
};

/// Validation is drawn with a seed derived from (cfg.seed, fold).
FoldSplit split_fold(const data::FoldPlan& plan, int fold_id, const ExperimentConfig& cfg);

/// Throws if any test item id also appears in the train or validation set.
void check_fold_hygiene(const data::ImageSource& source, const FoldSplit& split);

/// Starting point for fine-tuning: ImageNet weights, or a seeded random
/// initialization whose batch-norm statistics are set from `calibration`.
backbone::Backbone<float> initial_backbone(backbone::BackboneKind kind, const ExperimentConfig& cfg,
                                           const data::DataView& calibration);

struct CVReport {
  std::string variant;
  std::string run_id;
  std::string config_hash;
  std::string fold_plan_digest;
  std::vector<FoldResult> per_fold;
  metrics::ConfusionMatrix3 summed;
  std::optional<metrics::MetricsReport> metrics;  // absent when every fold failed
  bool complete = false;                          // every fold succeeded
  std::vector<std::string> notes;
};

/// Fine-tunes, fuses, trains and evaluates every fold of `plan`. A failing
/// fold is recorded with its error and the remaining folds still run.
CVReport run_cross_validation(const ExperimentConfig& cfg, const data::ImageSource& source,
                              const data::FoldPlan& plan, const RunLayout& layout, const Logger& log = {});

/// Scans cfg.dataset_root, reuses `folds/fold_plan.json` when present or
/// writes a new plan, runs every fold and persists the report.
CVReport run_cross_validation(const ExperimentConfig& cfg, const Logger& log = {});

nlohmann::json to_json(const FoldResult& r);
nlohmann::json to_json(const CVReport& r);

/// reports/cv_report.json, reports/metrics.csv, reports/fold_<k>.json.
void save_cv_report(const CVReport& report, const RunLayout& layout);

}  // namespace ecvd::train
