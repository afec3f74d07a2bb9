#pragma once

#include "ecvd/data/augment.hpp"

#include <array>
#include <string>

namespace ecvd::train {

struct Hyperparams {
  int batch_size = 32;
  int max_epochs = 10;
  double learning_rate = 1e-4;
  double l2 = 1e-4;
  int validation_frequency = 65;    // iterations between validation passes
  double new_layer_lr_factor = 10;  // applied to replaced classifier layers only
  std::array<double, 3> class_weights = {0.75, 0.1, 0.15};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool augment = true;
  data::AugmentPolicy augmentation{};
  bool select_best = true;  // restore the best-validation-accuracy weights at the end
  /// After training, replace batch-norm moving averages with population
  /// statistics from one pass over the (unaugmented) training set.
  bool population_bn_stats = true;

  /// Backbone fine-tuning stage.
  static Hyperparams single_model() { return {}; }

  /// Fused-head stage: ten times the rate, no per-layer factor.
  static Hyperparams ensemble() {
    Hyperparams hp;
    hp.learning_rate = 1e-3;
    hp.new_layer_lr_factor = 1;
    return hp;
  }

  /// Throws listing every offending field.
  void validate() const;
};

}  // namespace ecvd::train
