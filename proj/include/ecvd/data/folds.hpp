#pragma once

#include "ecvd/data/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace ecvd::data {

using IndexSet = std::vector<Index>;

/// k disjoint, exhaustive test folds over a DatasetIndex.
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<IndexSet> folds;  // each sorted ascending

  const IndexSet& test(int fold) const { return folds.at(static_cast<std::size_t>(fold)); }
  /// Union of every fold except `fold`, sorted ascending.
  IndexSet train(int fold) const;
};

/// Stratified assignment: each class is shuffled with its own stream and
/// dealt round-robin, the dealing position carrying over between classes.
/// Fold sizes and per-class fold counts therefore differ by at most one.
FoldPlan make_folds(const DatasetIndex& index, int k, std::uint64_t seed);

/// Random (unstratified) hold-out of round(fraction * n) items. Both returned
/// sets are sorted ascending.
std::pair<IndexSet, IndexSet> split_train_val(const IndexSet& train_indices, double fraction, std::uint64_t seed);

/// Throws unless the plan is a disjoint, exhaustive partition of [0, n).
void check_partition(const FoldPlan& plan, Index n);

/// Structured-text form listing k, seed and each fold's file paths and labels.
void save_fold_plan(const std::filesystem::path& path, const FoldPlan& plan, const DatasetIndex& index);

/// Reads a plan and maps its paths back onto `index`; unknown paths are errors.
FoldPlan load_fold_plan(const std::filesystem::path& path, const DatasetIndex& index);

/// Stable digest over k, seed and per-fold paths, recorded in manifests.
std::uint64_t fold_plan_digest(const FoldPlan& plan, const DatasetIndex& index);

}  // namespace ecvd::data
