#pragma once

#include "ecvd/backbone/finetune.hpp"
#include "ecvd/fusion/ensemble.hpp"

#include <map>

namespace ecvd::testing {

template <typename S>
Tensor<S> noise_batch(Index n, std::uint64_t seed, Index size = data::kInputSize) {
  Rng rng(seed);
  Tensor<S> t({n, 3, size, size});
  for (Index i = 0; i < t.size(); ++i) t.vec()(i) = S(rng.normal());
  return t;
}

/// Random-weight generator with batch-norm statistics set from a noise batch;
/// built once per (kind, scalar) and copied out.
template <typename S>
backbone::FeatureMapGenerator<S> generator(backbone::BackboneKind kind) {
  static std::map<backbone::BackboneKind, backbone::FeatureMapGenerator<S>> cache;
  auto it = cache.find(kind);
  if (it == cache.end()) {
    auto net = backbone::build_backbone<S>(kind, 1000, 100 + std::uint64_t(kind));
    backbone::recalibrate(net, noise_batch<S>(4, 200 + std::uint64_t(kind)));
    it = cache.emplace(kind, backbone::truncate_and_freeze(net)).first;
  }
  return it->second;
}

template <typename S>
fusion::EnsembleModel<S> ensemble(std::vector<backbone::BackboneKind> kinds, const fusion::HeadConfig& head = {},
                                  std::uint64_t seed = 1) {
  std::vector<backbone::FeatureMapGenerator<S>> branches;
  for (auto k : kinds) branches.push_back(generator<S>(k));
  return fusion::build_ensemble(std::move(branches), head, seed);
}

}  // namespace ecvd::testing
