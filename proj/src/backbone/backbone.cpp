#include "ecvd/backbone/backbone.hpp"

#include <algorithm>
#include <cctype>

namespace ecvd::backbone {

namespace {

using nn::ActivationKind;

std::string lower(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != '-' && c != '_' && c != ' ') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

const std::array<BackboneSpec, 4>& specs() {
  static const std::array<BackboneSpec, 4> table = {{
      {BackboneKind::SqueezeNet, "SqueezeNet", "squeezenet", 18, 1.24, {224, 224, 3},
       "final fire-module depth concatenation", "features.12", {"fire9-concat", "fire9/concat"},
       {"maxpool 2x2 stride 2 (ceil)"}, {7, 7, 512}, 0},
      {BackboneKind::ShuffleNet, "ShuffleNet", "shufflenet", 50, 1.4, {224, 224, 3},
       "final element-wise addition block", "stage4.3", {"node_198"}, {}, {7, 7, 544}, 1},
      {BackboneKind::MobileNetV2, "MobileNet-v2", "mobilenetv2", 53, 3.5, {224, 224, 3},
       "final pre-pooling activation", "features.18", {"out_relu"}, {}, {7, 7, 1280}, 1},
      {BackboneKind::EfficientNetB0, "EfficientNet-B0", "efficientnetb0", 82, 5.3, {224, 224, 3},
       "final head multiply (pre-pooling) activation", "features.8",
       {"efficientnet-b0|model|head|MulLayer"}, {}, {7, 7, 1280}, 2},
  }};
  return table;
}

// Kaiming init for every conv, unit/zero batch norm, N(0, 0.01) linear.
template <typename Scalar>
void init_module_tree(nn::Module<Scalar>& root, Rng& rng) {
  nn::ParamSet<Scalar> set;
  root.collect("", set);
  for (auto& np : set.params) {
    auto& p = *np.param;
    const bool is_bias = np.name.size() >= 4 && np.name.compare(np.name.size() - 4, 4, "bias") == 0;
    if (p.dims.size() == 4) {
      const double fan_out = double(p.dims[0] * p.dims[2] * p.dims[3]);
      const double sd = std::sqrt(2.0 / fan_out);
      for (Index i = 0; i < p.size(); ++i) p.value[i] = Scalar(sd * rng.normal());
    } else if (p.dims.size() == 2) {
      for (Index i = 0; i < p.size(); ++i) p.value[i] = Scalar(0.01 * rng.normal());
    } else if (is_bias) {
      p.value.setZero();
    } else {
      p.value.setOnes();  // batch-norm scale
    }
  }
}

template <typename Scalar>
nn::Sequential<Scalar> squeezenet_features() {
  using namespace nn;
  Sequential<Scalar> f;
  f.template emplace<Conv2d<Scalar>>("features.0", 3, 64, 3, 2);
  f.template emplace<Activation<Scalar>>("features.1", ActivationKind::ReLU);
  f.template emplace<MaxPool2d<Scalar>>("features.2", 3, 2, 0, true);
  f.template emplace<Fire<Scalar>>("features.3", 64, 16, 64, 64);
  f.template emplace<Fire<Scalar>>("features.4", 128, 16, 64, 64);
  f.template emplace<MaxPool2d<Scalar>>("features.5", 3, 2, 0, true);
  f.template emplace<Fire<Scalar>>("features.6", 128, 32, 128, 128);
  f.template emplace<Fire<Scalar>>("features.7", 256, 32, 128, 128);
  f.template emplace<MaxPool2d<Scalar>>("features.8", 3, 2, 0, true);
  f.template emplace<Fire<Scalar>>("features.9", 256, 48, 192, 192);
  f.template emplace<Fire<Scalar>>("features.10", 384, 48, 192, 192);
  f.template emplace<Fire<Scalar>>("features.11", 384, 64, 256, 256);
  f.template emplace<Fire<Scalar>>("features.12", 512, 64, 256, 256);
  return f;
}

// ShuffleNet v1, 4 groups, stage widths 136/272/544 with the bottleneck as
// wide as the unit output. This is the variant whose last stage emits 544
// channels at 7x7 and whose ImageNet model totals ~1.4M parameters.
constexpr Index kShuffleGroups = 4;
constexpr std::array<Index, 3> kShuffleWidths = {136, 272, 544};
constexpr std::array<int, 3> kShuffleRepeats = {4, 8, 4};

template <typename Scalar>
nn::Sequential<Scalar> shufflenet_features() {
  using namespace nn;
  Sequential<Scalar> f;
  f.add("conv1", conv_bn_act<Scalar>(3, 24, 3, 2, 1, ActivationKind::ReLU).clone());
  f.template emplace<MaxPool2d<Scalar>>("maxpool", 3, 2, 1);
  Index in = 24;
  for (int stage = 0; stage < 3; ++stage) {
    const Index out = kShuffleWidths[static_cast<std::size_t>(stage)];
    for (int r = 0; r < kShuffleRepeats[static_cast<std::size_t>(stage)]; ++r) {
      const std::string name = "stage" + std::to_string(stage + 2) + "." + std::to_string(r);
      const Index stride = r == 0 ? 2 : 1;
      const bool group_first = !(stage == 0 && r == 0);
      f.template emplace<ShuffleUnit<Scalar>>(name, in, out, kShuffleGroups, stride, out, group_first);
      f.template emplace<Activation<Scalar>>(name + ".relu", ActivationKind::ReLU);
      in = out;
    }
  }
  return f;
}

template <typename Scalar>
nn::Sequential<Scalar> mobilenetv2_features() {
  using namespace nn;
  struct Row {
    Index t, c;
    int n;
    Index s;
  };
  constexpr std::array<Row, 7> rows = {{{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
                                        {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}}};
  Sequential<Scalar> f;
  f.add("features.0", conv_bn_act<Scalar>(3, 32, 3, 2, 1, ActivationKind::ReLU6).clone());
  Index in = 32;
  int idx = 1;
  for (const auto& r : rows) {
    for (int i = 0; i < r.n; ++i) {
      f.add("features." + std::to_string(idx++),
            inverted_residual<Scalar>(in, r.c, i == 0 ? r.s : 1, r.t).clone());
      in = r.c;
    }
  }
  f.add("features." + std::to_string(idx), conv_bn_act<Scalar>(320, 1280, 1, 1, 1, ActivationKind::ReLU6).clone());
  return f;
}

template <typename Scalar>
nn::Sequential<Scalar> efficientnetb0_features() {
  using namespace nn;
  struct Stage {
    Index expand, kernel, stride, in, out;
    int layers;
  };
  constexpr std::array<Stage, 7> stages = {{{1, 3, 1, 32, 16, 1},
                                            {6, 3, 2, 16, 24, 2},
                                            {6, 5, 2, 24, 40, 2},
                                            {6, 3, 2, 40, 80, 3},
                                            {6, 5, 1, 80, 112, 3},
                                            {6, 5, 2, 112, 192, 4},
                                            {6, 3, 1, 192, 320, 1}}};
  Sequential<Scalar> f;
  f.add("features.0", conv_bn_act<Scalar>(3, 32, 3, 2, 1, ActivationKind::SiLU).clone());
  int idx = 1;
  for (const auto& s : stages) {
    Sequential<Scalar> stage;
    for (int i = 0; i < s.layers; ++i) {
      const Index in = i == 0 ? s.in : s.out;
      stage.add(std::to_string(i), mbconv<Scalar>(in, s.out, s.kernel, i == 0 ? s.stride : 1, s.expand).clone());
    }
    f.add("features." + std::to_string(idx++), stage.clone());
  }
  f.add("features.8", conv_bn_act<Scalar>(320, 1280, 1, 1, 1, ActivationKind::SiLU).clone());
  return f;
}

template <typename Scalar>
nn::Sequential<Scalar> classifier_for(BackboneKind kind, Index num_classes) {
  using namespace nn;
  Sequential<Scalar> c;
  switch (kind) {
    case BackboneKind::SqueezeNet:
      c.template emplace<Conv2d<Scalar>>("classifier.1", 512, num_classes, 1);
      c.template emplace<Activation<Scalar>>("classifier.2", ActivationKind::ReLU);
      c.template emplace<GlobalAvgPool<Scalar>>("classifier.3");
      break;
    case BackboneKind::ShuffleNet:
      c.template emplace<GlobalAvgPool<Scalar>>("pool");
      c.template emplace<Linear<Scalar>>("fc", 544, num_classes);
      break;
    case BackboneKind::MobileNetV2:
    case BackboneKind::EfficientNetB0:
      c.template emplace<GlobalAvgPool<Scalar>>("pool");
      c.template emplace<Linear<Scalar>>("classifier.1", 1280, num_classes);
      break;
  }
  return c;
}

}  // namespace

const BackboneSpec& backbone_spec(BackboneKind kind) {
  for (const auto& s : specs()) {
    if (s.kind == kind) return s;
  }
  throw Error("unknown backbone kind");
}

std::vector<std::string> supported_backbones() {
  std::vector<std::string> out;
  for (const auto& s : specs()) out.push_back(s.name);
  return out;
}

BackboneKind parse_backbone(std::string_view name) {
  const std::string key = lower(name);
  for (const auto& s : specs()) {
    if (key == lower(s.name) || key == s.slug) return s.kind;
  }
  std::string msg = "unsupported backbone '" + std::string(name) + "'; supported:";
  for (const auto& s : specs()) msg += " " + s.name;
  throw Error(msg);
}

template <typename Scalar>
Backbone<Scalar> build_backbone(BackboneKind kind, Index num_classes, std::uint64_t seed) {
  Backbone<Scalar> net;
  net.spec = backbone_spec(kind);
  net.num_classes = num_classes;
  switch (kind) {
    case BackboneKind::SqueezeNet: net.features = squeezenet_features<Scalar>(); break;
    case BackboneKind::ShuffleNet: net.features = shufflenet_features<Scalar>(); break;
    case BackboneKind::MobileNetV2: net.features = mobilenetv2_features<Scalar>(); break;
    case BackboneKind::EfficientNetB0: net.features = efficientnetb0_features<Scalar>(); break;
  }
  net.classifier = classifier_for<Scalar>(kind, num_classes);
  Rng rng(derive_seed(seed, "backbone-init:" + net.spec.slug));
  init_module_tree(net.features, rng);
  init_module_tree(net.classifier, rng);
  return net;
}

template <typename Scalar>
void replace_classifier(Backbone<Scalar>& net, Index num_classes, std::uint64_t seed, Scalar lr_factor) {
  net.classifier = classifier_for<Scalar>(net.spec.kind, num_classes);
  net.num_classes = num_classes;
  Rng rng(derive_seed(seed, "classifier-init:" + net.spec.slug));
  for (std::size_t i = 0; i < net.classifier.size(); ++i) {
    auto& child = net.classifier.child(i);
    if (auto* conv = dynamic_cast<nn::Conv2d<Scalar>*>(&child)) nn::glorot_uniform(*conv, rng);
    if (auto* fc = dynamic_cast<nn::Linear<Scalar>*>(&child)) nn::glorot_uniform(*fc, rng);
  }
  nn::ParamSet<Scalar> set;
  net.classifier.collect("", set);
  for (auto& p : set.params) p.param->lr_factor = lr_factor;
}

std::filesystem::path pretrained_weight_file(BackboneKind kind, const WeightSource& source) {
  return source.directory / (backbone_spec(kind).slug + ".ecvdw");
}

Backbone<float> load_pretrained(std::string_view name, const WeightSource& source) {
  const BackboneKind kind = parse_backbone(name);
  const auto file = pretrained_weight_file(kind, source);
  if (!std::filesystem::exists(file)) {
    throw Error("pretrained weights for " + backbone_spec(kind).name + " not found at " + file.string() +
                ". Produce them with `python3 tools/export_torchvision_weights.py --out " +
                source.directory.string() + "` (SqueezeNet, MobileNet-v2, EfficientNet-B0 from torchvision), or " +
                "place an .ecvdw blob with matching parameter names there.");
  }
  Backbone<float> net = build_backbone<float>(kind, 1000, 0);
  auto params = net.parameters();
  nn::load_weights(file, params, true);
  return net;
}

std::string resolve_anchor(const BackboneSpec& spec, std::string_view requested,
                           const std::vector<std::string>& available) {
  std::string node;
  if (requested.empty() || requested == spec.anchor) {
    node = spec.anchor_layer;
  } else if (std::find(spec.anchor_aliases.begin(), spec.anchor_aliases.end(), requested) != spec.anchor_aliases.end()) {
    node = spec.anchor_layer;
  } else {
    node = std::string(requested);
  }
  if (std::find(available.begin(), available.end(), node) == available.end()) {
    std::string msg = "anchor '" + std::string(requested.empty() ? node : requested) + "' not found in " +
                      spec.name + "; candidate layers:";
    for (const auto& a : available) msg += " " + a;
    throw Error(msg);
  }
  return node;
}

template <typename Scalar>
FeatureMapGenerator<Scalar>::FeatureMapGenerator(BackboneSpec spec, std::string anchor_layer,
                                                 nn::Sequential<Scalar> body)
    : spec_(std::move(spec)), anchor_layer_(std::move(anchor_layer)), body_(std::move(body)) {
  auto set = parameters();
  nn::set_trainable(set, false);
  output_shape_ = output_shape_for(spec_.input_size[0], spec_.input_size[1]);
}

template <typename Scalar>
FeatureShape FeatureMapGenerator<Scalar>::output_shape_for(Index height, Index width) const {
  const Shape s = body_.output_shape({1, 3, height, width});
  return {s.h, s.w, s.c};
}

template <typename Scalar>
FeatureMapGenerator<Scalar> truncate_and_freeze(const Backbone<Scalar>& net, std::string_view anchor) {
  const std::string node = resolve_anchor(net.spec, anchor, net.features.names());
  const auto idx = static_cast<std::size_t>(net.features.find(node));
  nn::Sequential<Scalar> body = net.features.slice(0, idx + 1);
  if (net.spec.kind == BackboneKind::SqueezeNet && node == net.spec.anchor_layer) {
    // 13x13 -> 7x7 needs ceil-mode windows.
    body.template emplace<nn::MaxPool2d<Scalar>>("anchor_pool", 2, 2, 0, true);
  }
  FeatureMapGenerator<Scalar> gen(net.spec, node, std::move(body));
  if (node == net.spec.anchor_layer && !(gen.output_shape() == net.spec.output_shape)) {
    throw Error(net.spec.name + " generator emits " + gen.output_shape().str() + ", expected " +
                net.spec.output_shape.str());
  }
  return gen;
}

template Backbone<float> build_backbone<float>(BackboneKind, Index, std::uint64_t);
template Backbone<double> build_backbone<double>(BackboneKind, Index, std::uint64_t);
template void replace_classifier<float>(Backbone<float>&, Index, std::uint64_t, float);
template void replace_classifier<double>(Backbone<double>&, Index, std::uint64_t, double);
template class FeatureMapGenerator<float>;
template class FeatureMapGenerator<double>;
template FeatureMapGenerator<float> truncate_and_freeze<float>(const Backbone<float>&, std::string_view);
template FeatureMapGenerator<double> truncate_and_freeze<double>(const Backbone<double>&, std::string_view);

}  // namespace ecvd::backbone
