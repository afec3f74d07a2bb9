#include "ecvd/train/hyperparams.hpp"

#include <cmath>

namespace ecvd::train {

void Hyperparams::validate() const {
  std::string bad;
  auto require = [&](bool ok, const char* what) {
    if (!ok) bad += std::string(bad.empty() ? "" : "; ") + what;
  };
  require(batch_size >= 1, "batch_size must be >= 1");
  require(max_epochs >= 0, "max_epochs must be >= 0");
  require(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(l2 >= 0, "l2 must be >= 0");
  require(validation_frequency >= 1, "validation_frequency must be >= 1");
  require(new_layer_lr_factor > 0, "new_layer_lr_factor must be positive");
  require(class_weights[0] > 0 && class_weights[1] > 0 && class_weights[2] > 0, "class_weights must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
  require(epsilon > 0, "epsilon must be positive");
  if (!bad.empty()) throw Error("invalid hyperparameters: " + bad);
  augmentation.validate();
}

}  // namespace ecvd::train
