#pragma once

#include "ecvd/backbone/backbone.hpp"
#include "ecvd/data/dataset.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace ecvd::fusion {

using backbone::BackboneKind;
using backbone::FeatureMapGenerator;
using backbone::FeatureShape;

/// BN -> ReLU -> Conv(filters, kernel, stride 1, same padding) -> BN -> ReLU -> FC(classes).
/// Softmax is applied by the consumers of the logits.
struct HeadConfig {
  Index kernel = 1;
  Index filters = 3;
  Index classes = data::kNumClasses;
  std::array<double, 3> class_weights = {0.75, 0.1, 0.15};
  double bn_eps = 1e-5;

  void validate() const;

  /// Closed-form trainable count for a (c, h, w) fused input:
  /// 2c + (c k^2 f + f) + 2f + (h w f classes + classes).
  Index trainable_count(const FeatureShape& in) const {
    return 2 * in.c + (in.c * kernel * kernel * filters + filters) + 2 * filters +
           (in.h * in.w * filters * classes + classes);
  }
};

/// Child names of the head, in order; Grad-CAM addresses them as "head.<name>".
inline constexpr std::array<std::string_view, 6> kHeadLayers = {"bn1", "relu1", "conv", "bn2", "relu2", "fc"};

template <typename Scalar>
nn::Sequential<Scalar> make_head(const FeatureShape& in, const HeadConfig& cfg, std::uint64_t seed);

struct Prediction {
  std::array<double, 3> probs{};
  std::array<double, 3> logits{};
  int label = 0;  // argmax of probs, ties toward the lowest class index
};

struct ParameterCount {
  Index total = 0;
  Index trainable = 0;
};

/// Named model configurations; cvdnet3 is the proposed three-branch model.
struct Variant {
  std::string name;
  std::vector<BackboneKind> backbones;
};

/// cvdnet1 | cvdnet2 | cvdnet3 | squeezenet | shufflenet | mobilenetv2 | efficientnetb0.
Variant parse_variant(std::string_view name);
std::vector<std::string> supported_variants();

/// Single input broadcast to frozen generators whose maps are depth-concatenated
/// in canonical order and classified by a trainable head.
template <typename Scalar>
class EnsembleModel {
 public:
  using T = Tensor<Scalar>;

  EnsembleModel(std::vector<FeatureMapGenerator<Scalar>> branches, const HeadConfig& cfg, std::uint64_t seed);

  /// Concatenated branch maps, N x sum(c) x 7 x 7. Branches always run in eval mode.
  T features(const T& x);
  /// Head logits from fused features, N x classes x 1 x 1.
  T head_logits(const T& fused, nn::Mode mode) { return head_.forward(fused, mode); }
  T head_backward(const T& grad_logits) { return head_.backward(grad_logits); }
  /// Eval-mode logits for a normalized N x 3 x 224 x 224 batch.
  T logits(const T& x) { return head_logits(features(x), nn::Mode::Eval); }
  std::vector<Prediction> forward(const T& x);

  void check_input(const T& x) const;

  std::vector<FeatureMapGenerator<Scalar>>& branches() { return branches_; }
  nn::Sequential<Scalar>& head() { return head_; }
  const HeadConfig& head_config() const { return cfg_; }
  FeatureShape fused_shape() const { return fused_; }
  /// Channel range [begin, begin + count) of branch i inside the fused map.
  std::pair<Index, Index> branch_channels(std::size_t i) const;
  std::vector<std::string> branch_names() const;

  /// Head parameters and batch-norm statistics, names prefixed "head.".
  nn::ParamSet<Scalar> head_parameters();
  /// Everything, branch names prefixed by the backbone slug.
  nn::ParamSet<Scalar> parameters();
  ParameterCount count_parameters();

 private:
  std::vector<FeatureMapGenerator<Scalar>> branches_;
  HeadConfig cfg_;
  FeatureShape fused_;
  nn::Sequential<Scalar> head_;
};

/// Orders branches canonically (SqueezeNet, ShuffleNet or MobileNet-v2,
/// EfficientNet-B0) and attaches a fresh head. Errors on 0 or more than 3
/// branches, duplicate backbones, or unequal spatial sizes.
template <typename Scalar>
EnsembleModel<Scalar> build_ensemble(std::vector<FeatureMapGenerator<Scalar>> branches, const HeadConfig& cfg,
                                     std::uint64_t seed);

/// Row-wise probabilities and labels from an N x K x 1 x 1 logits tensor.
template <typename Scalar>
std::vector<Prediction> predictions_from_logits(const Tensor<Scalar>& logits);

}  // namespace ecvd::fusion
