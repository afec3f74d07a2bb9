#include "ecvd/train/config.hpp"

#include "ecvd/core/rng.hpp"

#include <cstdio>
#include <fstream>

extern char** environ;

namespace ecvd::train {

using nlohmann::json;

namespace {

json policy_json(const data::AugmentPolicy& p) {
  return {{"reflect_x", p.reflect_x},
          {"reflect_y", p.reflect_y},
          {"scale", {p.scale.lo, p.scale.hi}},
          {"rotation_deg", {p.rotation_deg.lo, p.rotation_deg.hi}},
          {"translate_px", {p.translate_px.lo, p.translate_px.hi}}};
}

const char* ci_name(metrics::CiMode m) { return m == metrics::CiMode::TotalCount ? "total_count" : "per_class_count"; }

// Every leaf of `user` must exist in `schema` with a compatible type.
void check_keys(const json& user, const json& schema, const std::string& path, std::vector<std::string>& errors) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) {
      errors.push_back(key + ": unknown key");
      continue;
    }
    const json& expected = schema.at(it.key());
    const json& got = it.value();
    if (expected.is_object()) {
      if (!got.is_object()) {
        errors.push_back(key + ": expected an object");
      } else {
        check_keys(got, expected, key, errors);
      }
    } else if (expected.is_number() && !got.is_number()) {
      errors.push_back(key + ": expected a number");
    } else if (expected.is_boolean() && !got.is_boolean()) {
      errors.push_back(key + ": expected true or false");
    } else if (expected.is_string() && !got.is_string()) {
      errors.push_back(key + ": expected a string");
    } else if (expected.is_array() && (!got.is_array() || got.size() != expected.size())) {
      errors.push_back(key + ": expected an array of " + std::to_string(expected.size()) + " numbers");
    } else if (expected.is_number_integer() && got.is_number_float()) {
      errors.push_back(key + ": expected an integer");
    } else if (expected.is_number_unsigned() && got.is_number_integer() && got.get<std::int64_t>() < 0) {
      errors.push_back(key + ": expected a non-negative integer");
    }
  }
}

Hyperparams read_hp(const json& j, const Hyperparams& base) {
  Hyperparams hp = base;
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.max_epochs = j.value("max_epochs", hp.max_epochs);
  hp.learning_rate = j.value("learning_rate", hp.learning_rate);
  hp.l2 = j.value("l2", hp.l2);
  hp.validation_frequency = j.value("validation_frequency", hp.validation_frequency);
  hp.new_layer_lr_factor = j.value("new_layer_lr_factor", hp.new_layer_lr_factor);
  if (j.contains("class_weights")) hp.class_weights = j.at("class_weights").get<std::array<double, 3>>();
  hp.beta1 = j.value("beta1", hp.beta1);
  hp.beta2 = j.value("beta2", hp.beta2);
  hp.epsilon = j.value("epsilon", hp.epsilon);
  hp.augment = j.value("augment", hp.augment);
  hp.select_best = j.value("select_best", hp.select_best);
  hp.population_bn_stats = j.value("population_bn_stats", hp.population_bn_stats);
  if (j.contains("augmentation")) {
    const json& a = j.at("augmentation");
    auto range = [&](const char* key, data::Range r) {
      if (!a.contains(key)) return r;
      const auto v = a.at(key).get<std::array<double, 2>>();
      return data::Range{v[0], v[1]};
    };
    hp.augmentation.reflect_x = a.value("reflect_x", hp.augmentation.reflect_x);
    hp.augmentation.reflect_y = a.value("reflect_y", hp.augmentation.reflect_y);
    hp.augmentation.scale = range("scale", hp.augmentation.scale);
    hp.augmentation.rotation_deg = range("rotation_deg", hp.augmentation.rotation_deg);
    hp.augmentation.translate_px = range("translate_px", hp.augmentation.translate_px);
  }
  return hp;
}

void collect(std::vector<std::string>& errors, const std::string& key, const std::function<void()>& check) {
  try {
    check();
  } catch (const std::exception& e) {
    errors.push_back(key + ": " + e.what());
  }
}

}  // namespace

json to_json(const Hyperparams& hp) {
  return {{"batch_size", hp.batch_size},
          {"max_epochs", hp.max_epochs},
          {"learning_rate", hp.learning_rate},
          {"l2", hp.l2},
          {"validation_frequency", hp.validation_frequency},
          {"new_layer_lr_factor", hp.new_layer_lr_factor},
          {"class_weights", hp.class_weights},
          {"beta1", hp.beta1},
          {"beta2", hp.beta2},
          {"epsilon", hp.epsilon},
          {"augment", hp.augment},
          {"select_best", hp.select_best},
          {"population_bn_stats", hp.population_bn_stats},
          {"augmentation", policy_json(hp.augmentation)}};
}

std::string hex_digest(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::effective_run_id() const {
  return run_id.empty() ? variant + "-" + hex_digest(config_hash(*this)).substr(0, 8) : run_id;
}

std::filesystem::path ExperimentConfig::run_dir() const { return output_root / effective_run_id(); }

json to_json(const ExperimentConfig& c) {
  return {{"dataset", {{"root", c.dataset_root.generic_string()}}},
          {"output", {{"root", c.output_root.generic_string()}, {"run_id", c.run_id}}},
          {"folds", {{"k", c.folds_k}, {"seed", c.folds_seed}, {"validation_fraction", c.validation_fraction}}},
          {"seed", c.seed},
          {"variant", c.variant},
          {"finetune_per_fold", c.finetune_per_fold},
          {"shufflenet", {{"version", c.shufflenet_version}}},
          {"hyperparams", {{"single_model", to_json(c.single_model)}, {"ensemble", to_json(c.ensemble)}}},
          {"head", {{"kernel", c.head.kernel}, {"filters", c.head.filters}}},
          {"normalization", {{"name", c.normalization.name}, {"mean", c.normalization.mean}, {"std", c.normalization.std}}},
          {"weights",
           {{"init", c.weight_init == WeightInit::Pretrained ? "pretrained" : "random"},
            {"dir", c.weights_dir.generic_string()},
            {"calibration_images", c.calibration_images}}},
          {"bench", {{"warmup", c.bench_warmup}, {"repeats", c.bench_repeats}}},
          {"gradcam", {{"layer", c.gradcam_layer}, {"score", c.gradcam_score}, {"alpha", c.overlay_alpha}}},
          {"metrics", {{"ci_mode", ci_name(c.ci_mode)}}}};
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  const ExperimentConfig defaults;
  std::vector<std::string> errors;
  check_keys(j, to_json(defaults), "", errors);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(msg);
  }

  ExperimentConfig c;
  const json empty = json::object();
  auto section = [&](const char* key) -> const json& { return j.contains(key) ? j.at(key) : empty; };

  c.dataset_root = section("dataset").value("root", std::string());
  c.output_root = section("output").value("root", c.output_root.string());
  c.run_id = section("output").value("run_id", c.run_id);
  c.folds_k = section("folds").value("k", c.folds_k);
  c.folds_seed = section("folds").value("seed", c.folds_seed);
  c.validation_fraction = section("folds").value("validation_fraction", c.validation_fraction);
  c.seed = j.value("seed", c.seed);
  c.variant = j.value("variant", c.variant);
  c.finetune_per_fold = j.value("finetune_per_fold", c.finetune_per_fold);
  c.shufflenet_version = section("shufflenet").value("version", c.shufflenet_version);
  const json& hp = section("hyperparams");
  c.single_model = read_hp(hp.contains("single_model") ? hp.at("single_model") : empty, c.single_model);
  c.ensemble = read_hp(hp.contains("ensemble") ? hp.at("ensemble") : empty, c.ensemble);
  c.head.kernel = section("head").value("kernel", c.head.kernel);
  c.head.filters = section("head").value("filters", c.head.filters);
  c.head.class_weights = c.ensemble.class_weights;
  const json& norm = section("normalization");
  c.normalization.name = norm.value("name", c.normalization.name);
  if (norm.contains("mean")) c.normalization.mean = norm.at("mean").get<std::array<double, 3>>();
  if (norm.contains("std")) c.normalization.std = norm.at("std").get<std::array<double, 3>>();
  const std::string init = section("weights").value("init", std::string("pretrained"));
  c.weights_dir = section("weights").value("dir", c.weights_dir.string());
  c.calibration_images = section("weights").value("calibration_images", c.calibration_images);
  c.bench_warmup = section("bench").value("warmup", c.bench_warmup);
  c.bench_repeats = section("bench").value("repeats", c.bench_repeats);
  c.gradcam_layer = section("gradcam").value("layer", c.gradcam_layer);
  c.gradcam_score = section("gradcam").value("score", c.gradcam_score);
  c.overlay_alpha = section("gradcam").value("alpha", c.overlay_alpha);
  const std::string ci = section("metrics").value("ci_mode", std::string(ci_name(c.ci_mode)));

  if (c.folds_k < 2) errors.push_back("folds.k: must be at least 2");
  if (!(c.validation_fraction > 0 && c.validation_fraction < 1)) errors.push_back("folds.validation_fraction: must lie in (0, 1)");
  collect(errors, "variant", [&] { fusion::parse_variant(c.variant); });
  collect(errors, "hyperparams.single_model", [&] { c.single_model.validate(); });
  collect(errors, "hyperparams.ensemble", [&] { c.ensemble.validate(); });
  collect(errors, "head", [&] { c.head.validate(); });
  if (c.shufflenet_version != "v1") errors.push_back("shufflenet.version: only \"v1\" is implemented");
  for (double s : c.normalization.std) {
    if (!(s > 0)) errors.push_back("normalization.std: entries must be positive");
  }
  if (init == "pretrained") {
    c.weight_init = WeightInit::Pretrained;
  } else if (init == "random") {
    c.weight_init = WeightInit::Random;
  } else {
    errors.push_back("weights.init: expected \"pretrained\" or \"random\"");
  }
  if (c.calibration_images < 2) errors.push_back("weights.calibration_images: must be at least 2");
  if (c.bench_warmup < 0) errors.push_back("bench.warmup: must be >= 0");
  if (c.bench_repeats < 1) errors.push_back("bench.repeats: must be >= 1");
  if (c.gradcam_score != "logit" && c.gradcam_score != "softmax") errors.push_back("gradcam.score: expected \"logit\" or \"softmax\"");
  if (!(c.overlay_alpha >= 0 && c.overlay_alpha <= 1)) errors.push_back("gradcam.alpha: must lie in [0, 1]");
  if (ci == "total_count") {
    c.ci_mode = metrics::CiMode::TotalCount;
  } else if (ci == "per_class_count") {
    c.ci_mode = metrics::CiMode::PerClassCount;
  } else {
    errors.push_back("metrics.ci_mode: expected \"total_count\" or \"per_class_count\"");
  }
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(msg);
  }
  return c;
}

void apply_env_overrides(json& j, const std::map<std::string, std::string>& env) {
  for (const auto& [name, value] : env) {
    if (name.rfind(kEnvPrefix, 0) != 0 || name.size() == kEnvPrefix.size()) continue;
    std::string rest = name.substr(kEnvPrefix.size());
    std::vector<std::string> path;
    for (std::size_t pos; (pos = rest.find("__")) != std::string::npos; rest.erase(0, pos + 2)) {
      path.push_back(rest.substr(0, pos));
    }
    path.push_back(rest);
    json* node = &j;
    for (std::size_t i = 0; i < path.size(); ++i) {
      std::string key;
      for (char ch : path[i]) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      if (i + 1 == path.size()) {
        json parsed = json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      } else {
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
        node = &(*node)[key];
      }
    }
  }
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return env;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& env) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path.string());
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error("malformed config " + path.string() + ": " + e.what());
    }
  }
  apply_env_overrides(j, env);
  return config_from_json(j);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j["output"].erase("run_id");
  return fnv1a64(j.dump());
}

}  // namespace ecvd::train
