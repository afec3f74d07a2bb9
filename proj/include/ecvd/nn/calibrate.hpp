#pragma once

#include "ecvd/nn/layers.hpp"

#include <functional>

namespace ecvd::nn {

/// Sets every batch-norm running statistic below `net` to the average of the
/// batch statistics observed over `batches` Train-mode forwards. Batch b
/// (1-based) is blended with momentum 1/b, so the result is the equally
/// weighted mean over batches. `next(b)` returns batch b (0-based).
template <typename Scalar>
void population_batch_norm(Module<Scalar>& net, Index batches, const std::function<Tensor<Scalar>(Index)>& next) {
  std::vector<std::pair<BatchNorm2d<Scalar>*, Scalar>> norms;
  net.visit([&](Module<Scalar>& m) {
    if (auto* bn = dynamic_cast<BatchNorm2d<Scalar>*>(&m)) norms.emplace_back(bn, bn->momentum());
  });
  if (norms.empty()) return;
  for (Index b = 0; b < batches; ++b) {
    for (auto& [bn, momentum] : norms) bn->set_momentum(Scalar(1) / Scalar(b + 1));
    net.forward(next(b), Mode::Train);
    net.clear_cache();
  }
  for (auto& [bn, momentum] : norms) bn->set_momentum(momentum);
}

/// Replaces every batch-norm running statistic below `net` with the batch
/// statistics observed on `batch`. Randomly initialized networks carry
/// (0, 1) running stats, which makes their eval-mode activations collapse
/// with depth; one calibration pass restores a usable operating point.
template <typename Scalar>
void recalibrate_batch_norm(Module<Scalar>& net, const Tensor<Scalar>& batch) {
  population_batch_norm<Scalar>(net, 1, [&](Index) { return batch; });
}

}  // namespace ecvd::nn
