#include "ecvd/fusion/ensemble.hpp"

#include "ecvd/nn/loss.hpp"

#include <algorithm>
#include <cctype>

namespace ecvd::fusion {

void HeadConfig::validate() const {
  if (kernel < 1 || kernel % 2 == 0) throw Error("head kernel must be a positive odd size, got " + std::to_string(kernel));
  if (filters < 1) throw Error("head filters must be positive");
  if (classes != data::kNumClasses) throw Error("head classes must be " + std::to_string(data::kNumClasses));
  for (double w : class_weights) {
    if (!(w > 0)) throw Error("class weights must be positive");
  }
}

template <typename Scalar>
nn::Sequential<Scalar> make_head(const FeatureShape& in, const HeadConfig& cfg, std::uint64_t seed) {
  using namespace nn;
  cfg.validate();
  Sequential<Scalar> head;
  head.template emplace<BatchNorm2d<Scalar>>("bn1", in.c, Scalar(cfg.bn_eps));
  head.template emplace<Activation<Scalar>>("relu1", ActivationKind::ReLU);
  auto& conv = head.template emplace<Conv2d<Scalar>>("conv", in.c, cfg.filters, cfg.kernel, 1, (cfg.kernel - 1) / 2);
  head.template emplace<BatchNorm2d<Scalar>>("bn2", cfg.filters, Scalar(cfg.bn_eps));
  head.template emplace<Activation<Scalar>>("relu2", ActivationKind::ReLU);
  auto& fc = head.template emplace<Linear<Scalar>>("fc", in.h * in.w * cfg.filters, cfg.classes);
  Rng rng(derive_seed(seed, "head-init"));
  glorot_uniform(conv, rng);
  glorot_uniform(fc, rng);
  return head;
}

namespace {

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

const std::vector<Variant>& variants() {
  using K = BackboneKind;
  static const std::vector<Variant> table = {
      {"cvdnet1", {K::SqueezeNet, K::EfficientNetB0}},
      {"cvdnet2", {K::SqueezeNet, K::MobileNetV2, K::EfficientNetB0}},
      {"cvdnet3", {K::SqueezeNet, K::ShuffleNet, K::EfficientNetB0}},
      {"squeezenet", {K::SqueezeNet}},
      {"shufflenet", {K::ShuffleNet}},
      {"mobilenetv2", {K::MobileNetV2}},
      {"efficientnetb0", {K::EfficientNetB0}},
  };
  return table;
}

}  // namespace

Variant parse_variant(std::string_view name) {
  const std::string key = squash(name);
  for (const auto& v : variants()) {
    if (v.name == key) return v;
  }
  std::string msg = "unknown variant '" + std::string(name) + "'; supported:";
  for (const auto& v : variants()) msg += " " + v.name;
  throw Error(msg);
}

std::vector<std::string> supported_variants() {
  std::vector<std::string> out;
  for (const auto& v : variants()) out.push_back(v.name);
  return out;
}

template <typename Scalar>
EnsembleModel<Scalar>::EnsembleModel(std::vector<FeatureMapGenerator<Scalar>> branches, const HeadConfig& cfg,
                                     std::uint64_t seed)
    : branches_(std::move(branches)), cfg_(cfg) {
  if (branches_.empty() || branches_.size() > 3) {
    throw Error("an ensemble needs 1 to 3 branches, got " + std::to_string(branches_.size()));
  }
  const FeatureShape first = branches_.front().output_shape();
  fused_ = {first.h, first.w, 0};
  for (auto& b : branches_) {
    const FeatureShape s = b.output_shape();
    if (s.h != first.h || s.w != first.w) {
      throw Error("branch " + b.spec().name + " emits " + s.str() + ", spatially incompatible with " +
                  branches_.front().spec().name + " (" + first.str() + ")");
    }
    if (b.trainable_parameter_count() != 0) throw Error("branch " + b.spec().name + " is not frozen");
    fused_.c += s.c;
  }
  head_ = make_head<Scalar>(fused_, cfg_, seed);
}

template <typename Scalar>
void EnsembleModel<Scalar>::check_input(const T& x) const {
  const auto& in = branches_.front().spec().input_size;
  const Shape& s = x.shape();
  if (s.n < 1 || s.c != in[2] || s.h != in[0] || s.w != in[1]) {
    throw Error("ensemble input must be N x " + std::to_string(in[2]) + " x " + std::to_string(in[0]) + " x " +
                std::to_string(in[1]) + ", got " + s.str());
  }
}

template <typename Scalar>
typename EnsembleModel<Scalar>::T EnsembleModel<Scalar>::features(const T& x) {
  check_input(x);
  if (branches_.size() == 1) return branches_.front().forward(x);
  std::vector<T> maps;
  maps.reserve(branches_.size());
  for (auto& b : branches_) maps.push_back(b.forward(x));
  std::vector<const T*> parts;
  for (const auto& m : maps) parts.push_back(&m);
  return concat_channels(parts);
}

template <typename Scalar>
std::vector<Prediction> predictions_from_logits(const Tensor<Scalar>& logits) {
  const auto probs = nn::softmax_rows(logits.rows());
  std::vector<Prediction> out(static_cast<std::size_t>(probs.rows()));
  for (Index n = 0; n < probs.rows(); ++n) {
    auto& p = out[static_cast<std::size_t>(n)];
    for (Index c = 0; c < std::min<Index>(3, probs.cols()); ++c) {
      p.probs[static_cast<std::size_t>(c)] = double(probs(n, c));
      p.logits[static_cast<std::size_t>(c)] = double(logits.rows()(n, c));
    }
    for (int c = 1; c < 3; ++c) {
      if (p.probs[static_cast<std::size_t>(c)] > p.probs[static_cast<std::size_t>(p.label)]) p.label = c;
    }
  }
  return out;
}

template <typename Scalar>
std::vector<Prediction> EnsembleModel<Scalar>::forward(const T& x) {
  return predictions_from_logits(logits(x));
}

template <typename Scalar>
std::pair<Index, Index> EnsembleModel<Scalar>::branch_channels(std::size_t i) const {
  Index begin = 0;
  for (std::size_t j = 0; j < i; ++j) begin += branches_.at(j).output_shape().c;
  return {begin, branches_.at(i).output_shape().c};
}

template <typename Scalar>
std::vector<std::string> EnsembleModel<Scalar>::branch_names() const {
  std::vector<std::string> out;
  for (const auto& b : branches_) out.push_back(b.spec().name);
  return out;
}

template <typename Scalar>
nn::ParamSet<Scalar> EnsembleModel<Scalar>::head_parameters() {
  nn::ParamSet<Scalar> set;
  head_.collect("head", set);
  return set;
}

template <typename Scalar>
nn::ParamSet<Scalar> EnsembleModel<Scalar>::parameters() {
  nn::ParamSet<Scalar> set;
  for (auto& b : branches_) b.body().collect(b.spec().slug, set);
  head_.collect("head", set);
  return set;
}

template <typename Scalar>
ParameterCount EnsembleModel<Scalar>::count_parameters() {
  const auto set = parameters();
  return {set.count(false), set.count(true)};
}

template <typename Scalar>
EnsembleModel<Scalar> build_ensemble(std::vector<FeatureMapGenerator<Scalar>> branches, const HeadConfig& cfg,
                                     std::uint64_t seed) {
  for (std::size_t i = 0; i < branches.size(); ++i) {
    for (std::size_t j = i + 1; j < branches.size(); ++j) {
      if (branches[i].spec().kind == branches[j].spec().kind) {
        throw Error("backbone " + branches[i].spec().name + " appears twice in the ensemble");
      }
    }
  }
  std::stable_sort(branches.begin(), branches.end(), [](const auto& a, const auto& b) {
    return a.spec().canonical_rank < b.spec().canonical_rank;
  });
  return EnsembleModel<Scalar>(std::move(branches), cfg, seed);
}

template nn::Sequential<float> make_head<float>(const FeatureShape&, const HeadConfig&, std::uint64_t);
template nn::Sequential<double> make_head<double>(const FeatureShape&, const HeadConfig&, std::uint64_t);
template class EnsembleModel<float>;
template class EnsembleModel<double>;
template EnsembleModel<float> build_ensemble<float>(std::vector<FeatureMapGenerator<float>>, const HeadConfig&,
                                                    std::uint64_t);
template EnsembleModel<double> build_ensemble<double>(std::vector<FeatureMapGenerator<double>>, const HeadConfig&,
                                                      std::uint64_t);
template std::vector<Prediction> predictions_from_logits<float>(const Tensor<float>&);
template std::vector<Prediction> predictions_from_logits<double>(const Tensor<double>&);

}  // namespace ecvd::fusion
