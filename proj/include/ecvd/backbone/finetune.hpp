#pragma once

#include "ecvd/backbone/backbone.hpp"
#include "ecvd/data/source.hpp"
#include "ecvd/nn/calibrate.hpp"
#include "ecvd/train/fit.hpp"

namespace ecvd::backbone {

template <typename Scalar>
struct FinetunedBackbone {
  Backbone<Scalar> net;
  train::TrainingHistory history;
};

/// Adapts the classifier to `num_classes` if it has a different width; the
/// new layers carry hp.new_layer_lr_factor. Existing 3-way heads are kept.
template <typename Scalar>
void prepare_for_task(Backbone<Scalar>& net, const train::Hyperparams& hp, std::uint64_t seed,
                      Index num_classes = data::kNumClasses) {
  if (net.num_classes != num_classes) replace_classifier(net, num_classes, seed, Scalar(hp.new_layer_lr_factor));
}

/// Examples drawn from a data view, converted to Scalar and optionally augmented.
template <typename Scalar>
train::ExampleSet<Scalar> image_examples(const data::DataView& view) {
  train::ExampleSet<Scalar> set;
  set.labels = view.labels();
  set.input = [view](Index k, const data::AugmentDraw* draw) {
    data::ImageTensor img = view.load(k);
    if (draw) img = data::apply_augmentation(img, *draw);
    if constexpr (std::is_same_v<Scalar, float>) {
      return img;
    } else {
      return img.template cast<Scalar>();
    }
  };
  return set;
}

/// Trains every parameter of the backbone on the task. The classifier must
/// already have the task's width (see prepare_for_task); with max_epochs = 0
/// the weights are returned untouched.
template <typename Scalar>
FinetunedBackbone<Scalar> finetune(Backbone<Scalar> net, const data::DataView& train_view,
                                   const data::DataView& val_view, const train::Hyperparams& hp,
                                   std::uint64_t seed) {
  if (net.num_classes != data::kNumClasses) {
    throw Error("finetune: " + net.spec.name + " has a " + std::to_string(net.num_classes) +
                "-way classifier; call prepare_for_task first");
  }
  FinetunedBackbone<Scalar> out{std::move(net), {}};
  auto& model = out.net;
  train::TrainTarget<Scalar> target;
  target.forward = [&model](const Tensor<Scalar>& x, nn::Mode mode) { return model.forward(x, mode); };
  target.backward = [&model](const Tensor<Scalar>& g) { model.backward(g); };
  target.clear_cache = [&model] { model.clear_cache(); };
  target.state = model.parameters();
  target.norm_body = &model.features;
  out.history = train::fit(target, image_examples<Scalar>(train_view), image_examples<Scalar>(val_view), hp,
                           derive_seed(seed, "finetune:" + model.spec.slug));
  return out;
}

/// Re-estimates batch-norm statistics of the feature body from `batch`.
/// Randomly initialized bodies need this before eval-mode use.
template <typename Scalar>
void recalibrate(Backbone<Scalar>& net, const Tensor<Scalar>& batch) {
  nn::recalibrate_batch_norm(net.features, batch);
}

}  // namespace ecvd::backbone
