#include "ecvd/train/cross_validation.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <set>

namespace ecvd::train {

namespace fs = std::filesystem;
using nlohmann::json;

void RunLayout::create() const {
  for (const auto& d : {folds(), checkpoints(), reports(), heatmaps(), bench()}) fs::create_directories(d);
}

FoldSplit split_fold(const data::FoldPlan& plan, int fold_id, const ExperimentConfig& cfg) {
  if (fold_id < 1 || fold_id > plan.k) {
    throw Error("fold " + std::to_string(fold_id) + " out of range 1.." + std::to_string(plan.k));
  }
  FoldSplit s;
  s.fold_id = fold_id;
  s.test = plan.test(fold_id - 1);
  auto [train, val] = data::split_train_val(plan.train(fold_id - 1), cfg.validation_fraction,
                                            derive_seed(cfg.seed, "fold-validation", std::uint64_t(fold_id)));
  s.train = std::move(train);
  s.val = std::move(val);
  return s;
}

void check_fold_hygiene(const data::ImageSource& source, const FoldSplit& split) {
  std::set<std::string> seen;
  for (Index i : split.train) seen.insert(source.id(i));
  for (Index i : split.val) seen.insert(source.id(i));
  for (Index i : split.test) {
    if (seen.count(source.id(i))) {
      throw Error("fold " + std::to_string(split.fold_id) + ": test item " + source.id(i) +
                  " also appears in its training or validation data");
    }
  }
}

backbone::Backbone<float> initial_backbone(backbone::BackboneKind kind, const ExperimentConfig& cfg,
                                           const data::DataView& calibration) {
  if (cfg.weight_init == WeightInit::Pretrained) {
    return backbone::load_pretrained(backbone::backbone_spec(kind).name, {cfg.weights_dir});
  }
  auto net = backbone::build_backbone<float>(kind, 1000, derive_seed(cfg.seed, "random-init"));
  const Index n = std::min<Index>(calibration.size(), cfg.calibration_images);
  if (n < 2) throw Error("batch-norm calibration needs at least 2 images");
  std::vector<Tensor<float>> xs;
  for (Index k = 0; k < n; ++k) xs.push_back(calibration.load(k));
  backbone::recalibrate(net, stack_batch(xs));
  return net;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct FoldContext {
  const ExperimentConfig& cfg;
  const data::ImageSource& source;
  const data::FoldPlan& plan;
  const RunLayout& layout;
  const Logger& log;
  std::uint64_t plan_digest;
  // Shared fine-tunes when finetune_per_fold is off, keyed by backbone slug.
  std::map<std::string, backbone::Backbone<float>> shared;
};

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

backbone::Backbone<float> finetuned_backbone(FoldContext& ctx, backbone::BackboneKind kind, const FoldSplit& split) {
  const auto& spec = backbone::backbone_spec(kind);
  if (!ctx.cfg.finetune_per_fold) {
    auto it = ctx.shared.find(spec.slug);
    if (it != ctx.shared.end()) return it->second;
  }
  const data::DataView train{&ctx.source, split.train}, val{&ctx.source, split.val};
  auto net = initial_backbone(kind, ctx.cfg, train);
  const auto fold_tag = static_cast<std::uint64_t>(ctx.cfg.finetune_per_fold ? split.fold_id : 0);
  backbone::prepare_for_task(net, ctx.cfg.single_model, derive_seed(ctx.cfg.seed, "classifier", fold_tag));
  say(ctx.log, "fold " + std::to_string(split.fold_id) + ": fine-tuning " + spec.name + " on " +
                   std::to_string(train.size()) + " images");
  auto ft = backbone::finetune(std::move(net), train, val, ctx.cfg.single_model,
                               derive_seed(ctx.cfg.seed, "finetune", fold_tag));
  if (!ctx.cfg.finetune_per_fold) ctx.shared.emplace(spec.slug, ft.net);
  return std::move(ft.net);
}

FoldResult run_fold(FoldContext& ctx, int fold_id) {
  const auto t0 = std::chrono::steady_clock::now();
  const FoldSplit split = split_fold(ctx.plan, fold_id, ctx.cfg);
  check_fold_hygiene(ctx.source, split);
  const data::DataView train{&ctx.source, split.train}, val{&ctx.source, split.val}, test{&ctx.source, split.test};
  const fusion::Variant variant = fusion::parse_variant(ctx.cfg.variant);

  CheckpointMeta meta{variant.name,  ctx.cfg.normalization, ctx.cfg.single_model, ctx.cfg.ensemble,
                      ctx.plan_digest, fold_id,
                      ctx.cfg.weight_init == WeightInit::Pretrained ? "pretrained" : "random"};
  const fs::path stem = ctx.layout.checkpoints() / ("fold" + std::to_string(fold_id));

  if (variant.backbones.size() == 1) {
    auto net = finetuned_backbone(ctx, variant.backbones.front(), split);
    const double train_time = seconds_since(t0);
    FoldResult r = evaluate_fold(net, test, fold_id, ctx.cfg.single_model.batch_size);
    r.checkpoint_ref = save_checkpoint(stem, net, meta).string();
    r.train_time_s = train_time;
    return r;
  }

  std::vector<backbone::FeatureMapGenerator<float>> gens;
  for (auto kind : variant.backbones) gens.push_back(backbone::truncate_and_freeze(finetuned_backbone(ctx, kind, split)));
  auto model = fusion::build_ensemble(std::move(gens), ctx.cfg.head, derive_seed(ctx.cfg.seed, "head", std::uint64_t(fold_id)));

  std::vector<std::uint64_t> before;
  for (auto& b : model.branches()) before.push_back(nn::weights_digest(b.parameters()));
  say(ctx.log, "fold " + std::to_string(fold_id) + ": training the fused head (" + variant.name + ")");
  train_ensemble(model, train, val, ctx.cfg.ensemble, derive_seed(ctx.cfg.seed, "train-head", std::uint64_t(fold_id)));
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (nn::weights_digest(model.branches()[i].parameters()) != before[i]) {
      throw Error("branch " + model.branches()[i].spec().name + " changed during head training");
    }
  }
  const double train_time = seconds_since(t0);
  FoldResult r = evaluate_fold(model, test, fold_id, ctx.cfg.ensemble.batch_size);
  r.checkpoint_ref = save_checkpoint(stem, model, meta).string();
  r.train_time_s = train_time;
  return r;
}

}  // namespace

CVReport run_cross_validation(const ExperimentConfig& cfg, const data::ImageSource& source,
                              const data::FoldPlan& plan, const RunLayout& layout, const Logger& log) {
  data::check_partition(plan, source.size());
  layout.create();
  std::vector<data::DatasetEntry> entries;
  for (Index i = 0; i < source.size(); ++i) entries.push_back({source.id(i), source.label(i)});
  const auto index = data::DatasetIndex::from_entries(std::move(entries));

  FoldContext ctx{cfg, source, plan, layout, log, data::fold_plan_digest(plan, index), {}};
  CVReport report;
  report.variant = fusion::parse_variant(cfg.variant).name;
  report.run_id = cfg.effective_run_id();
  report.config_hash = hex_digest(config_hash(cfg));
  report.fold_plan_digest = hex_digest(ctx.plan_digest);
  if (!cfg.finetune_per_fold) {
    report.notes.push_back(
        "finetune_per_fold=false: backbones are fine-tuned once on fold 1's training split and reused, so later "
        "folds' test items were seen during fine-tuning");
  }
  if (cfg.weight_init == WeightInit::Random) {
    report.notes.push_back("backbones started from random initialization, not ImageNet weights");
  }

  std::vector<metrics::ConfusionMatrix3> ok;
  for (int f = 1; f <= plan.k; ++f) {
    FoldResult r;
    try {
      r = run_fold(ctx, f);
      ok.push_back(r.confusion);
      say(log, "fold " + std::to_string(f) + ": accuracy " + std::to_string(r.accuracy) + "%");
    } catch (const std::exception& e) {
      r.fold_id = f;
      r.error = e.what();
      say(log, "fold " + std::to_string(f) + " failed: " + r.error);
    }
    report.per_fold.push_back(r);
  }
  report.complete = static_cast<int>(ok.size()) == plan.k;
  if (!ok.empty()) {
    report.summed = metrics::sum_confusions(ok);
    report.metrics = metrics::macro_average(report.summed, metrics::F1Mode::FromMacroRates, cfg.ci_mode);
  }
  if (report.complete && report.summed.total() != source.size()) {
    throw Error("summed confusion covers " + std::to_string(report.summed.total()) + " items, dataset has " +
                std::to_string(source.size()));
  }
  save_cv_report(report, layout);
  return report;
}

CVReport run_cross_validation(const ExperimentConfig& cfg, const Logger& log) {
  if (cfg.dataset_root.empty()) throw Error("dataset.root is not set");
  const auto index = data::scan_dataset(cfg.dataset_root);
  const RunLayout layout{cfg.run_dir()};
  layout.create();
  const fs::path plan_path = layout.folds() / "fold_plan.json";
  data::FoldPlan plan;
  if (fs::exists(plan_path)) {
    plan = data::load_fold_plan(plan_path, index);
    if (plan.k != cfg.folds_k || plan.seed != cfg.folds_seed) {
      throw Error("existing fold plan " + plan_path.string() + " does not match folds.k/folds.seed");
    }
  } else {
    plan = data::make_folds(index, cfg.folds_k, cfg.folds_seed);
    data::save_fold_plan(plan_path, plan, index);
  }
  {
    std::ofstream out(layout.root / "config.json");
    out << to_json(cfg).dump(2) << '\n';
  }
  const data::FileImageSource source(index, cfg.normalization);
  return run_cross_validation(cfg, source, plan, layout, log);
}

json to_json(const FoldResult& r) {
  json j = {{"fold", r.fold_id}, {"ok", r.ok()}};
  if (r.ok()) {
    j["confusion"] = metrics::to_json(r.confusion);
    j["accuracy"] = r.accuracy;
    j["test_count"] = r.confusion.total();
    j["checkpoint"] = r.checkpoint_ref;
    j["train_time_s"] = r.train_time_s;
  } else {
    j["error"] = r.error;
  }
  return j;
}

json to_json(const CVReport& r) {
  json folds = json::array();
  for (const auto& f : r.per_fold) folds.push_back(to_json(f));
  json j = {{"variant", r.variant},     {"run_id", r.run_id},     {"config_hash", r.config_hash},
            {"fold_plan_digest", r.fold_plan_digest}, {"complete", r.complete}, {"per_fold", folds},
            {"notes", r.notes}};
  j["summed_confusion"] = metrics::to_json(r.summed);
  j["metrics"] = r.metrics ? metrics::to_json(*r.metrics) : json(nullptr);
  return j;
}

void save_cv_report(const CVReport& report, const RunLayout& layout) {
  fs::create_directories(layout.reports());
  {
    std::ofstream out(layout.reports() / "cv_report.json");
    out << to_json(report).dump(2) << '\n';
  }
  for (const auto& f : report.per_fold) {
    std::ofstream out(layout.reports() / ("fold_" + std::to_string(f.fold_id) + ".json"));
    out << to_json(f).dump(2) << '\n';
  }
  if (report.metrics) {
    std::ofstream out(layout.reports() / "metrics.csv");
    out << metrics::metrics_csv(*report.metrics);
  }
}

}  // namespace ecvd::train
