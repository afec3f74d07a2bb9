// Command-line front end: scan | folds | finetune | build | train | crossval | eval | gradcam | bench.
#include "ecvd/bench/bench.hpp"
#include "ecvd/explain/gradcam.hpp"
#include "ecvd/train/cross_validation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecvd;

namespace {

struct Common {
  std::string config;
  std::string root;
  std::string out;
  std::string run_id;
  std::string variant;
};

train::ExperimentConfig resolve_config(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw Error("cannot read config " + c.config);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error("malformed config " + c.config + ": " + e.what());
    }
  }
  train::apply_env_overrides(j, train::process_environment());
  if (!c.root.empty()) j["dataset"]["root"] = c.root;
  if (!c.out.empty()) j["output"]["root"] = c.out;
  if (!c.run_id.empty()) j["output"]["run_id"] = c.run_id;
  if (!c.variant.empty()) j["variant"] = c.variant;
  return train::config_from_json(j);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

data::DatasetIndex scan(const train::ExperimentConfig& cfg) {
  if (cfg.dataset_root.empty()) throw Error("no dataset root; pass --root or set dataset.root");
  return data::scan_dataset(cfg.dataset_root);
}

data::FoldPlan fold_plan(const train::ExperimentConfig& cfg, const data::DatasetIndex& index, bool create) {
  const fs::path path = train::RunLayout{cfg.run_dir()}.folds() / "fold_plan.json";
  if (fs::exists(path)) return data::load_fold_plan(path, index);
  if (!create) throw Error("no fold plan at " + path.string() + "; run `ecvd folds` first");
  auto plan = data::make_folds(index, cfg.folds_k, cfg.folds_seed);
  data::save_fold_plan(path, plan, index);
  return plan;
}

train::CheckpointMeta meta_for(const train::ExperimentConfig& cfg, const std::string& variant,
                               std::uint64_t digest, int fold) {
  return {variant, cfg.normalization, cfg.single_model, cfg.ensemble, digest, fold,
          cfg.weight_init == train::WeightInit::Pretrained ? "pretrained" : "random"};
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

int cmd_scan(const Common& c) {
  const auto cfg = resolve_config(c);
  const auto index = scan(cfg);
  json j = {{"root", cfg.dataset_root.generic_string()}, {"total", index.size()}};
  for (int k = 0; k < data::kNumClasses; ++k) j["class_counts"][std::string(data::class_name(k))] = index.class_counts[k];
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_folds(const Common& c, int k, long long seed) {
  auto cfg = resolve_config(c);
  if (k > 0) cfg.folds_k = k;
  if (seed >= 0) cfg.folds_seed = static_cast<std::uint64_t>(seed);
  const auto index = scan(cfg);
  const auto plan = data::make_folds(index, cfg.folds_k, cfg.folds_seed);
  const fs::path path = train::RunLayout{cfg.run_dir()}.folds() / "fold_plan.json";
  data::save_fold_plan(path, plan, index);
  json sizes = json::array();
  for (int f = 0; f < plan.k; ++f) sizes.push_back(plan.test(f).size());
  std::cout << json{{"fold_plan", path.generic_string()},
                    {"k", plan.k},
                    {"seed", plan.seed},
                    {"fold_sizes", sizes},
                    {"digest", train::hex_digest(data::fold_plan_digest(plan, index))}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_finetune(const Common& c, const std::string& name, int fold) {
  const auto cfg = resolve_config(c);
  const auto kind = backbone::parse_backbone(name);
  const auto index = scan(cfg);
  const auto plan = fold_plan(cfg, index, true);
  const data::FileImageSource source(index, cfg.normalization);
  const auto split = train::split_fold(plan, fold, cfg);
  train::check_fold_hygiene(source, split);
  const data::DataView train_view{&source, split.train}, val_view{&source, split.val};
  auto net = train::initial_backbone(kind, cfg, train_view);
  backbone::prepare_for_task(net, cfg.single_model, derive_seed(cfg.seed, "classifier", std::uint64_t(fold)));
  auto ft = backbone::finetune(std::move(net), train_view, val_view, cfg.single_model,
                               derive_seed(cfg.seed, "finetune", std::uint64_t(fold)));
  const auto& slug = backbone::backbone_spec(kind).slug;
  const fs::path stem = train::RunLayout{cfg.run_dir()}.checkpoints() / ("finetuned_" + slug + "_fold" + std::to_string(fold));
  const auto manifest = train::save_checkpoint(stem, ft.net, meta_for(cfg, slug, data::fold_plan_digest(plan, index), fold));
  json hist = json::array();
  for (const auto& e : ft.history.epochs) hist.push_back({{"epoch", e.epoch}, {"loss", e.train_loss}, {"accuracy", e.train_accuracy}});
  std::cout << json{{"checkpoint", manifest.generic_string()}, {"epochs", hist},
                    {"best_val_accuracy", ft.history.best_val_accuracy}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_build(const Common& c, int fold, bool from_initial) {
  const auto cfg = resolve_config(c);
  const auto variant = fusion::parse_variant(cfg.variant);
  const train::RunLayout layout{cfg.run_dir()};
  std::vector<backbone::FeatureMapGenerator<float>> gens;
  std::optional<data::DatasetIndex> index;
  std::optional<std::uint64_t> digest;
  for (auto kind : variant.backbones) {
    const auto& slug = backbone::backbone_spec(kind).slug;
    if (from_initial) {
      if (cfg.weight_init == train::WeightInit::Random) {
        if (!index) index = scan(cfg);
        const data::FileImageSource source(*index, cfg.normalization);
        gens.push_back(backbone::truncate_and_freeze(train::initial_backbone(kind, cfg, data::view_all(source))));
      } else {
        gens.push_back(backbone::truncate_and_freeze(train::initial_backbone(kind, cfg, {})));
      }
      continue;
    }
    const fs::path stem = layout.checkpoints() / ("finetuned_" + slug + "_fold" + std::to_string(fold));
    auto loaded = train::load_checkpoint(stem);
    if (!loaded.backbone) throw Error(stem.string() + " is not a backbone checkpoint");
    if (loaded.manifest.at("fold_plan_digest").is_string()) {
      digest = std::stoull(loaded.manifest.at("fold_plan_digest").get<std::string>(), nullptr, 16);
    }
    gens.push_back(backbone::truncate_and_freeze(*loaded.backbone));
  }
  if (variant.backbones.size() == 1 && !from_initial) {
    std::cerr << "note: single-backbone variants are evaluated as fine-tuned models; building a one-branch ensemble\n";
  }
  auto model = fusion::build_ensemble(std::move(gens), cfg.head, derive_seed(cfg.seed, "head", std::uint64_t(fold)));
  auto meta = meta_for(cfg, variant.name, 0, fold);
  meta.fold_plan_digest = digest;
  const fs::path stem = layout.checkpoints() / (variant.name + "_fold" + std::to_string(fold) + "_untrained");
  const auto manifest = train::save_checkpoint(stem, model, meta);
  const auto count = model.count_parameters();
  std::cout << json{{"checkpoint", manifest.generic_string()},
                    {"concat_order", model.branch_names()},
                    {"fused_shape", {model.fused_shape().h, model.fused_shape().w, model.fused_shape().c}},
                    {"parameters", {{"total", count.total}, {"trainable", count.trainable}}}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& checkpoint, int fold) {
  const auto cfg = resolve_config(c);
  auto loaded = train::load_checkpoint(checkpoint);
  if (!loaded.ensemble) throw Error("train expects an ensemble checkpoint (see `ecvd build`)");
  const auto index = scan(cfg);
  const auto plan = fold_plan(cfg, index, false);
  const data::FileImageSource source(index, loaded.normalization);
  const auto split = train::split_fold(plan, fold, cfg);
  train::check_fold_hygiene(source, split);
  auto& model = *loaded.ensemble;
  const auto history = train::train_ensemble(model, {&source, split.train}, {&source, split.val}, cfg.ensemble,
                                             derive_seed(cfg.seed, "train-head", std::uint64_t(fold)));
  const auto variant = loaded.manifest.value("variant", cfg.variant);
  const fs::path stem = train::RunLayout{cfg.run_dir()}.checkpoints() / (variant + "_fold" + std::to_string(fold));
  const auto manifest =
      train::save_checkpoint(stem, model, meta_for(cfg, variant, data::fold_plan_digest(plan, index), fold));
  json val = json::array();
  for (const auto& v : history.validations) val.push_back({{"iteration", v.iteration}, {"loss", v.loss}, {"accuracy", v.accuracy}});
  std::cout << json{{"checkpoint", manifest.generic_string()}, {"validations", val},
                    {"best_val_accuracy", history.best_val_accuracy}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_crossval(const Common& c) {
  const auto cfg = resolve_config(c);
  const auto report = train::run_cross_validation(cfg, log_line);
  std::cout << train::to_json(report).dump(2) << '\n';
  if (report.metrics) std::cerr << metrics::metrics_csv(*report.metrics);
  return report.complete ? 0 : 2;
}

int cmd_eval(const Common& c, const std::string& checkpoint, int fold) {
  const auto cfg = resolve_config(c);
  auto loaded = train::load_checkpoint(checkpoint);
  const auto index = scan(cfg);
  const auto plan = fold_plan(cfg, index, false);
  const data::FileImageSource source(index, loaded.normalization);
  const data::DataView test{&source, plan.test(fold - 1)};
  auto result = train::evaluate_fold(loaded.logits_fn(), test, fold);
  result.checkpoint_ref = checkpoint;
  json j = train::to_json(result);
  j["metrics"] = metrics::to_json(metrics::macro_average(result.confusion, metrics::F1Mode::FromMacroRates, cfg.ci_mode));
  write_json(train::RunLayout{cfg.run_dir()}.reports() / ("eval_fold" + std::to_string(fold) + ".json"), j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_gradcam(const Common& c, const std::string& checkpoint, const std::string& image, const std::string& cls,
                std::string layer, std::string score) {
  const auto cfg = resolve_config(c);
  auto loaded = train::load_checkpoint(checkpoint);
  if (score.empty()) score = cfg.gradcam_score;
  const auto mode = score == "softmax" ? explain::ScoreMode::Softmax : explain::ScoreMode::Logit;
  if (score != "softmax" && score != "logit") throw Error("--score must be logit or softmax");
  const data::ImageTensor rgb = data::resize_bilinear(data::read_image(image), data::kInputSize, data::kInputSize);
  const data::ImageTensor x = data::normalize(rgb, loaded.normalization);

  const auto pred = fusion::predictions_from_logits(loaded.logits(x)).front();
  const int target = cls.empty() || cls == "auto" ? pred.label : data::parse_class(cls);
  explain::GradCamMap map;
  if (loaded.ensemble) {
    map = explain::grad_cam(*loaded.ensemble, x, target, layer.empty() ? cfg.gradcam_layer : layer, mode);
  } else {
    map = explain::grad_cam(*loaded.backbone, x, target, layer, mode);
  }
  const fs::path dir = train::RunLayout{cfg.run_dir()}.heatmaps();
  const std::string base = fs::path(image).stem().string() + "_gradcam_" + std::string(data::class_name(target));
  data::write_png(dir / (base + ".png"), explain::render_overlay(map, rgb, cfg.overlay_alpha));
  json side = explain::gradcam_sidecar(map);
  side["image"] = image;
  side["class_name"] = data::class_name(target);
  side["predicted"] = data::class_name(pred.label);
  side["probs"] = pred.probs;
  side["checkpoint"] = checkpoint;
  write_json(dir / (base + ".json"), side);
  std::cout << json{{"overlay", (dir / (base + ".png")).generic_string()},
                    {"sidecar", (dir / (base + ".json")).generic_string()}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_bench(const Common& c, const std::string& checkpoint, int fold, int repeats, int warmup, long limit) {
  const auto cfg = resolve_config(c);
  auto loaded = train::load_checkpoint(checkpoint);
  const auto index = scan(cfg);
  const auto plan = fold_plan(cfg, index, false);
  const data::FileImageSource source(index, loaded.normalization);
  data::DataView view{&source, plan.test(fold - 1)};
  if (limit > 0 && view.size() > limit) view.indices.resize(static_cast<std::size_t>(limit));
  bench::BenchOptions opt;
  opt.repeats = repeats > 0 ? repeats : cfg.bench_repeats;
  opt.warmup = warmup >= 0 ? warmup : cfg.bench_warmup;
  opt.model_ref = checkpoint;
  const auto report = bench::benchmark_inference([&](const Tensor<float>& x) { loaded.logits(x); }, view, opt);
  const fs::path dir = train::RunLayout{cfg.run_dir()}.bench();
  write_json(dir / ("bench_fold" + std::to_string(fold) + ".json"), bench::to_json(report));
  std::ofstream(dir / ("bench_fold" + std::to_string(fold) + ".csv")) << bench::bench_csv(report);
  std::cout << bench::to_json(report).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fused lightweight-CNN chest X-ray classifier: data, training, evaluation, Grad-CAM, benchmark"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file (ECVD_* environment variables override keys)");
    sub->add_option("--root", common.root, "Dataset root (overrides dataset.root)");
    sub->add_option("--out", common.out, "Output root (overrides output.root)");
    sub->add_option("--run-id", common.run_id, "Run directory name under the output root");
  };

  auto* scan_cmd = app.add_subcommand("scan", "Index the dataset and print class counts");
  add_common(scan_cmd);

  int k = 0;
  long long seed = -1;
  auto* folds_cmd = app.add_subcommand("folds", "Write a stratified fold plan");
  add_common(folds_cmd);
  folds_cmd->add_option("--k", k, "Fold count (overrides folds.k)");
  folds_cmd->add_option("--seed", seed, "Fold seed (overrides folds.seed)");

  std::string backbone_name;
  int fold = 1;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune one backbone on a fold's training split");
  add_common(ft_cmd);
  ft_cmd->add_option("--backbone", backbone_name, "SqueezeNet | ShuffleNet | MobileNet-v2 | EfficientNet-B0")->required();
  ft_cmd->add_option("--fold", fold, "1-based fold id");

  bool from_initial = false;
  auto* build_cmd = app.add_subcommand("build", "Truncate fine-tuned backbones and assemble the fused model");
  add_common(build_cmd);
  build_cmd->add_option("--variant", common.variant, "cvdnet1 | cvdnet2 | cvdnet3 | <backbone>");
  build_cmd->add_option("--fold", fold, "Fold whose fine-tuned checkpoints are used");
  build_cmd->add_flag("--from-initial", from_initial, "Use the initial (not fine-tuned) backbones");

  std::string checkpoint;
  auto* train_cmd = app.add_subcommand("train", "Train the fused head of an ensemble checkpoint on a fold");
  add_common(train_cmd);
  train_cmd->add_option("--checkpoint", checkpoint, "Ensemble checkpoint manifest")->required();
  train_cmd->add_option("--fold", fold, "1-based fold id");

  auto* cv_cmd = app.add_subcommand("crossval", "Run the full k-fold protocol and write the CV report");
  add_common(cv_cmd);
  cv_cmd->add_option("--variant", common.variant, "cvdnet1 | cvdnet2 | cvdnet3 | <backbone>");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test fold");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
  eval_cmd->add_option("--fold", fold, "1-based fold id");

  std::string image, cls, layer, score;
  auto* cam_cmd = app.add_subcommand("gradcam", "Grad-CAM overlay and sidecar for one image");
  add_common(cam_cmd);
  cam_cmd->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
  cam_cmd->add_option("--image", image, "Input image")->required()->check(CLI::ExistingFile);
  cam_cmd->add_option("--class", cls, "Target class name, or auto for the prediction");
  cam_cmd->add_option("--layer", layer, "Layer id (default head.relu2 for ensembles)");
  cam_cmd->add_option("--score", score, "logit | softmax");

  int repeats = 0, warmup = -1;
  long limit = 0;
  auto* bench_cmd = app.add_subcommand("bench", "Per-image inference latency on a test fold");
  add_common(bench_cmd);
  bench_cmd->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
  bench_cmd->add_option("--fold", fold, "1-based fold id");
  bench_cmd->add_option("--repeats", repeats, "Passes over the fold (default bench.repeats)");
  bench_cmd->add_option("--warmup", warmup, "Untimed warmup passes (default bench.warmup)");
  bench_cmd->add_option("--limit", limit, "Use only the first N images of the fold");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scan_cmd) return cmd_scan(common);
    if (*folds_cmd) return cmd_folds(common, k, seed);
    if (*ft_cmd) return cmd_finetune(common, backbone_name, fold);
    if (*build_cmd) return cmd_build(common, fold, from_initial);
    if (*train_cmd) return cmd_train(common, checkpoint, fold);
    if (*cv_cmd) return cmd_crossval(common);
    if (*eval_cmd) return cmd_eval(common, checkpoint, fold);
    if (*cam_cmd) return cmd_gradcam(common, checkpoint, image, cls, layer, score);
    if (*bench_cmd) return cmd_bench(common, checkpoint, fold, repeats, warmup, limit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
