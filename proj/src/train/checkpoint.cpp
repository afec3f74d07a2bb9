#include "ecvd/train/checkpoint.hpp"

#include <fstream>

namespace ecvd::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json shape_json(const backbone::FeatureShape& s) { return {s.h, s.w, s.c}; }

json common(const CheckpointMeta& meta, const std::string& kind) {
  json j;
  j["format"] = "ecvd-checkpoint/1";
  j["kind"] = kind;
  j["variant"] = meta.variant;
  j["class_order"] = {"COVID-19", "Normal", "Viral-Pneumonia"};
  j["normalization"] = normalization_json(meta.normalization);
  j["input_size"] = {data::kInputSize, data::kInputSize, 3};
  j["hyperparams"] = {{"single_model", to_json(meta.single_model)}, {"ensemble", to_json(meta.ensemble)}};
  j["fold_plan_digest"] = meta.fold_plan_digest ? json(hex_digest(*meta.fold_plan_digest)) : json(nullptr);
  j["fold"] = meta.fold;
  j["weight_init"] = meta.weight_init;
  return j;
}

fs::path write(const fs::path& stem, json manifest, const nn::ParamSet<float>& set) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const fs::path weights = fs::path(stem.string() + ".ecvdw");
  const fs::path manifest_path = fs::path(stem.string() + ".json");
  nn::save_weights(weights, set);
  manifest["weights_file"] = weights.filename().string();
  manifest["weights_digest"] = hex_digest(nn::weights_digest(set));
  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot write manifest " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

}  // namespace

json normalization_json(const data::Normalization& n) {
  return {{"name", n.name}, {"mean", n.mean}, {"std", n.std}, {"applied_to", "RGB scaled to [0, 1]"}};
}

data::Normalization normalization_from_json(const json& j) {
  data::Normalization n;
  n.name = j.at("name").get<std::string>();
  n.mean = j.at("mean").get<std::array<double, 3>>();
  n.std = j.at("std").get<std::array<double, 3>>();
  return n;
}

fs::path save_checkpoint(const fs::path& stem, fusion::EnsembleModel<float>& model, const CheckpointMeta& meta) {
  json m = common(meta, "ensemble");
  json branches = json::array();
  for (auto& b : model.branches()) {
    const auto& s = b.spec();
    branches.push_back({{"name", s.name},
                        {"slug", s.slug},
                        {"anchor", s.anchor},
                        {"anchor_layer", b.anchor_layer()},
                        {"anchor_aliases", s.anchor_aliases},
                        {"post_anchor_ops", s.post_anchor_ops},
                        {"output_shape", shape_json(b.output_shape())},
                        {"parameters", b.parameter_count()}});
  }
  m["branches"] = branches;
  m["concat_order"] = model.branch_names();
  m["fused_shape"] = shape_json(model.fused_shape());
  const auto& h = model.head_config();
  std::vector<std::string> layers(fusion::kHeadLayers.begin(), fusion::kHeadLayers.end());
  layers.push_back("softmax");
  m["head"] = {{"kernel", h.kernel}, {"filters", h.filters}, {"classes", h.classes}, {"bn_eps", h.bn_eps},
               {"layers", layers}};
  m["class_weights"] = h.class_weights;
  const auto count = model.count_parameters();
  m["parameter_count"] = {{"total", count.total}, {"trainable", count.trainable}};
  return write(stem, m, model.parameters());
}

fs::path save_checkpoint(const fs::path& stem, backbone::Backbone<float>& net, const CheckpointMeta& meta) {
  json m = common(meta, "backbone");
  m["backbone"] = {{"name", net.spec.name}, {"slug", net.spec.slug}, {"num_classes", net.num_classes}};
  const auto set = net.parameters();
  m["class_weights"] = meta.single_model.class_weights;
  m["parameter_count"] = {{"total", set.count(false)}, {"trainable", set.count(true)}};
  return write(stem, m, set);
}

Tensor<float> LoadedModel::logits(const Tensor<float>& x) {
  if (ensemble) return ensemble->logits(x);
  if (backbone) return backbone->forward(x, nn::Mode::Eval);
  throw Error("no model loaded");
}

LoadedModel load_checkpoint(const fs::path& path) {
  fs::path manifest_path = path;
  if (manifest_path.extension() != ".json") manifest_path = fs::path(path.string() + ".json");
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot read checkpoint manifest " + manifest_path.string());
  LoadedModel out;
  try {
    in >> out.manifest;
  } catch (const json::exception& e) {
    throw Error("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const json& m = out.manifest;
  if (m.value("format", "") != "ecvd-checkpoint/1") throw Error(manifest_path.string() + " is not a checkpoint manifest");
  out.normalization = normalization_from_json(m.at("normalization"));
  const fs::path weights = manifest_path.parent_path() / m.at("weights_file").get<std::string>();

  const std::string kind = m.at("kind").get<std::string>();
  if (kind == "ensemble") {
    std::vector<backbone::FeatureMapGenerator<float>> gens;
    for (const auto& b : m.at("branches")) {
      const auto net = backbone::build_backbone<float>(backbone::parse_backbone(b.at("slug").get<std::string>()),
                                                       data::kNumClasses, 0);
      gens.push_back(backbone::truncate_and_freeze(net, b.at("anchor_layer").get<std::string>()));
    }
    fusion::HeadConfig head;
    head.kernel = m.at("head").at("kernel").get<Index>();
    head.filters = m.at("head").at("filters").get<Index>();
    head.bn_eps = m.at("head").at("bn_eps").get<double>();
    head.class_weights = m.at("class_weights").get<std::array<double, 3>>();
    out.ensemble = std::make_unique<fusion::EnsembleModel<float>>(fusion::build_ensemble(std::move(gens), head, 0));
    auto set = out.ensemble->parameters();
    nn::load_weights(weights, set, true);
    for (auto& g : out.ensemble->branches()) {
      auto bs = g.parameters();
      nn::set_trainable(bs, false);
    }
  } else if (kind == "backbone") {
    const auto& b = m.at("backbone");
    out.backbone = std::make_unique<backbone::Backbone<float>>(backbone::build_backbone<float>(
        backbone::parse_backbone(b.at("slug").get<std::string>()), b.at("num_classes").get<Index>(), 0));
    auto set = out.backbone->parameters();
    nn::load_weights(weights, set, true);
  } else {
    throw Error("unknown checkpoint kind '" + kind + "' in " + manifest_path.string());
  }
  return out;
}

}  // namespace ecvd::train
