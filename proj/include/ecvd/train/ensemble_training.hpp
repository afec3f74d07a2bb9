#pragma once

#include "ecvd/backbone/finetune.hpp"
#include "ecvd/fusion/ensemble.hpp"
#include "ecvd/metrics/metrics.hpp"
#include "ecvd/train/fit.hpp"

#include <functional>
#include <string>

namespace ecvd::train {

/// Upper bound on memory spent caching fused training features.
inline constexpr std::size_t kFeatureCacheBytes = std::size_t(1) << 30;

/// Fused features of every item in a view, computed once in eval mode.
template <typename Scalar>
std::vector<Tensor<Scalar>> fused_features(fusion::EnsembleModel<Scalar>& model, const data::DataView& view,
                                           int batch_size) {
  std::vector<Tensor<Scalar>> out;
  out.reserve(static_cast<std::size_t>(view.size()));
  for (Index start = 0; start < view.size(); start += batch_size) {
    const Index end = std::min<Index>(view.size(), start + batch_size);
    std::vector<Tensor<Scalar>> xs;
    for (Index k = start; k < end; ++k) xs.push_back(view.load(k).template cast<Scalar>());
    const Tensor<Scalar> f = model.features(stack_batch(xs));
    for (Index n = 0; n < end - start; ++n) out.push_back(take_sample(f, n));
  }
  return out;
}

/// Trains the head of `model` in place; branches are only ever run in eval
/// mode and never written. Without augmentation the fused training features
/// are computed once and reused across epochs.
template <typename Scalar>
TrainingHistory train_ensemble(fusion::EnsembleModel<Scalar>& model, const data::DataView& train_view,
                               const data::DataView& val_view, const Hyperparams& hp, std::uint64_t seed) {
  for (auto& b : model.branches()) {
    if (b.trainable_parameter_count() != 0) throw Error("train_ensemble: branch " + b.spec().name + " is not frozen");
  }
  TrainTarget<Scalar> target;
  target.forward = [&model](const Tensor<Scalar>& f, nn::Mode mode) { return model.head_logits(f, mode); };
  target.backward = [&model](const Tensor<Scalar>& g) { model.head_backward(g); };
  target.clear_cache = [&model] { model.head().clear_cache(); };
  target.state = model.head_parameters();
  target.norm_body = &model.head();

  if (hp.max_epochs == 0) return {};

  const auto fused = model.fused_shape();
  const std::size_t per_item = std::size_t(fused.c * fused.h * fused.w) * sizeof(Scalar);

  auto val_cache = std::make_shared<std::vector<Tensor<Scalar>>>(fused_features(model, val_view, hp.batch_size));
  ExampleSet<Scalar> val_set;
  val_set.labels = val_view.labels();
  val_set.input = [val_cache](Index k, const data::AugmentDraw*) { return (*val_cache)[std::size_t(k)]; };

  ExampleSet<Scalar> train_set;
  train_set.labels = train_view.labels();
  if (!hp.augment && per_item * std::size_t(train_view.size()) <= kFeatureCacheBytes) {
    auto cache = std::make_shared<std::vector<Tensor<Scalar>>>(fused_features(model, train_view, hp.batch_size));
    train_set.input = [cache](Index k, const data::AugmentDraw*) { return (*cache)[std::size_t(k)]; };
  } else {
    train_set.input = [&model, train_view](Index k, const data::AugmentDraw* draw) {
      Tensor<Scalar> img = train_view.load(k).template cast<Scalar>();
      if (draw) img = data::apply_augmentation(img, *draw);
      return model.features(img);
    };
  }
  return fit(target, train_set, val_set, hp, derive_seed(seed, "ensemble-head"));
}

struct FoldResult {
  int fold_id = 0;  // 1-based
  metrics::ConfusionMatrix3 confusion;
  double accuracy = 0;  // micro accuracy of this fold, percent
  std::string checkpoint_ref;
  double train_time_s = 0;
  std::string error;  // non-empty when the fold failed
  bool ok() const { return error.empty(); }
};

/// Batched logits function used for evaluation, N x 3 x 1 x 1.
using LogitsFn = std::function<Tensor<float>(const Tensor<float>&)>;

/// Confusion matrix over exactly the items of `test_view`, no augmentation.
FoldResult evaluate_fold(const LogitsFn& logits, const data::DataView& test_view, int fold_id, int batch_size = 32);

inline FoldResult evaluate_fold(fusion::EnsembleModel<float>& model, const data::DataView& test_view, int fold_id,
                                int batch_size = 32) {
  return evaluate_fold([&model](const Tensor<float>& x) { return model.logits(x); }, test_view, fold_id, batch_size);
}

inline FoldResult evaluate_fold(backbone::Backbone<float>& net, const data::DataView& test_view, int fold_id,
                                int batch_size = 32) {
  return evaluate_fold([&net](const Tensor<float>& x) { return net.forward(x, nn::Mode::Eval); }, test_view,
                       fold_id, batch_size);
}

}  // namespace ecvd::train
