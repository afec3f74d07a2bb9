#pragma once

#include "ecvd/nn/blocks.hpp"
#include "ecvd/nn/weights_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ecvd::backbone {

using nn::Mode;

enum class BackboneKind { SqueezeNet, ShuffleNet, MobileNetV2, EfficientNetB0 };

inline constexpr std::array<BackboneKind, 4> kAllBackbones = {
    BackboneKind::SqueezeNet, BackboneKind::ShuffleNet, BackboneKind::MobileNetV2, BackboneKind::EfficientNetB0};

/// Spatial extent and depth of a feature map, (h, w, c).
struct FeatureShape {
  Index h = 0;
  Index w = 0;
  Index c = 0;
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
  std::string str() const { return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c); }
};

struct BackboneSpec {
  BackboneKind kind;
  std::string name;      // display name, e.g. "EfficientNet-B0"
  std::string slug;      // file/config name, e.g. "efficientnetb0"
  int depth_layers;      // nominal depth as published for the architecture
  double param_count_m;  // nominal ImageNet parameter count, millions
  std::array<Index, 3> input_size;
  std::string anchor;                        // semantic truncation point
  std::string anchor_layer;                  // node in our graph realizing it
  std::vector<std::string> anchor_aliases;   // names other model zoos use
  std::vector<std::string> post_anchor_ops;  // appended after truncation
  FeatureShape output_shape;                 // generator output at 224x224
  int canonical_rank;                        // position in the fused concat
};

const BackboneSpec& backbone_spec(BackboneKind kind);

/// Accepts display names and slugs case-insensitively ("EfficientNet-B0",
/// "efficientnetb0", "mobilenet-v2", ...). Unknown names raise an error
/// that lists the supported ones.
BackboneKind parse_backbone(std::string_view name);
std::vector<std::string> supported_backbones();

/// Full classification network: convolutional body plus classifier tail.
template <typename Scalar>
struct Backbone {
  using T = Tensor<Scalar>;

  BackboneSpec spec;
  nn::Sequential<Scalar> features;
  nn::Sequential<Scalar> classifier;
  Index num_classes = 0;

  /// Logits, N x num_classes x 1 x 1.
  T forward(const T& x, Mode mode) { return classifier.forward(features.forward(x, mode), mode); }
  T backward(const T& grad) { return features.backward(classifier.backward(grad)); }

  nn::ParamSet<Scalar> parameters() {
    nn::ParamSet<Scalar> set;
    features.collect("", set);
    classifier.collect("", set);
    return set;
  }

  void clear_cache() {
    features.clear_cache();
    classifier.clear_cache();
  }
};

/// Randomly initialized architecture with a num_classes-way classifier.
template <typename Scalar>
Backbone<Scalar> build_backbone(BackboneKind kind, Index num_classes, std::uint64_t seed);

/// Swaps the classifier for a freshly initialized num_classes-way one whose
/// parameters carry the given learn-rate factor.
template <typename Scalar>
void replace_classifier(Backbone<Scalar>& net, Index num_classes, std::uint64_t seed, Scalar lr_factor = 10);

struct WeightSource {
  std::filesystem::path directory;
};

std::filesystem::path pretrained_weight_file(BackboneKind kind, const WeightSource& source);

/// ImageNet-pretrained backbone (1000-way classifier) read from
/// `<directory>/<slug>.ecvdw`. A missing file raises an error explaining
/// how to produce it.
Backbone<float> load_pretrained(std::string_view name, const WeightSource& source);

/// Resolves a requested anchor (empty = the semantic default, a node name,
/// or an alias such as "fire9-concat") to a node of the features graph.
std::string resolve_anchor(const BackboneSpec& spec, std::string_view requested,
                           const std::vector<std::string>& available);

/// Truncated, frozen backbone emitting a (7, 7, c) feature map for 224x224 input.
template <typename Scalar>
class FeatureMapGenerator {
 public:
  using T = Tensor<Scalar>;

  FeatureMapGenerator(BackboneSpec spec, std::string anchor_layer, nn::Sequential<Scalar> body);

  /// Eval-mode forward; stored batch-norm statistics, nothing cached.
  T forward(const T& x) { return body_.forward(x, Mode::Eval); }

  const BackboneSpec& spec() const { return spec_; }
  const std::string& anchor_layer() const { return anchor_layer_; }
  FeatureShape output_shape() const { return output_shape_; }
  FeatureShape output_shape_for(Index height, Index width) const;

  nn::ParamSet<Scalar> parameters() {
    nn::ParamSet<Scalar> set;
    body_.collect("", set);
    return set;
  }
  Index parameter_count() { return parameters().count(); }
  Index trainable_parameter_count() { return parameters().count(true); }

  nn::Sequential<Scalar>& body() { return body_; }

 private:
  BackboneSpec spec_;
  std::string anchor_layer_;
  nn::Sequential<Scalar> body_;
  FeatureShape output_shape_;
};

template <typename Scalar>
FeatureMapGenerator<Scalar> truncate_and_freeze(const Backbone<Scalar>& net, std::string_view anchor = "");

}  // namespace ecvd::backbone
