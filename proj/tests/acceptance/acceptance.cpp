// One PASS/FAIL/SKIP line per acceptance criterion; exits nonzero if any FAIL.
#include "ecvd/explain/gradcam.hpp"
#include "ecvd/train/ensemble_training.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace ecvd;
using backbone::BackboneKind;

namespace {

// Pinned tolerances and limits.
constexpr double kMetricTol = 0.05;        // percentage points
constexpr double kCiTol = 0.01;            // percentage points
constexpr double kParamTarget = 5.62e6;
constexpr double kParamBand = 0.10;        // relative
constexpr double kFdRelTol = 1e-3;
constexpr double kCamScaleTol = 1e-6;
constexpr double kReproTarget = 98.30;
constexpr double kReproBand = 1.5;
constexpr double kMetricsSeconds = 1.0;
constexpr double kShapeSeconds = 30.0;
constexpr double kSmokeSeconds = 120.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  enum Status { Pass, Fail, Skip } status;
  std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

template <typename S>
Tensor<S> random_images(Index n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<S> x({n, 3, data::kInputSize, data::kInputSize});
  for (Index i = 0; i < x.size(); ++i) x.vec()(i) = S(rng.normal());
  return x;
}

/// Randomly initialized backbone with calibrated batch-norm statistics, truncated and frozen.
template <typename S>
backbone::FeatureMapGenerator<S> random_generator(BackboneKind kind, std::uint64_t seed, const Tensor<S>& calib) {
  auto net = backbone::build_backbone<S>(kind, 1000, seed);
  backbone::recalibrate(net, calib);
  return backbone::truncate_and_freeze(net);
}

// 1 ----------------------------------------------------------------------

struct TableRow {
  const char* name;
  metrics::ConfusionMatrix3 cm;
  std::array<double, 5> expected;  // TPR, PPV, SPEC, F1, ACC
};

Outcome metrics_oracle() {
  const auto t0 = Clock::now();
  const std::vector<TableRow> rows = {
      {"EfficientNet-B0", {{213, 6, 0}, {3, 1314, 24}, {2, 77, 1266}}, {96.46, 96.63, 97.66, 96.55, 97.43}},
      {"Ensemble #1", {{215, 4, 0}, {2, 1322, 17}, {5, 74, 1266}}, {96.96, 96.65, 97.89, 96.81, 97.66}},
      {"Ensemble #3", {{216, 3, 0}, {2, 1324, 15}, {4, 50, 1291}}, {97.78, 97.43, 98.48, 97.61, 98.30}},
  };
  double worst = 0;
  for (const auto& r : rows) {
    const auto rep = metrics::macro_average(r.cm);
    const std::array<double, 5> got = {*rep.macro.tpr, *rep.macro.ppv, *rep.macro.spec, *rep.macro.f1,
                                       *rep.macro.acc};
    for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(got[i] - r.expected[i]));
  }
  const double dt = seconds_since(t0);
  return check(worst <= kMetricTol && dt < kMetricsSeconds,
               "max |delta| " + fmt(worst, 4) + " pp over 3 matrices x 5 metrics, " + fmt(dt, 4) + " s");
}

// 2 ----------------------------------------------------------------------

Outcome confidence_intervals() {
  const auto rep = metrics::macro_average({{216, 3, 0}, {2, 1324, 15}, {4, 50, 1291}});
  struct Case {
    const char* what;
    double got, expected;
  };
  const std::vector<Case> cases = {
      {"ACC", *rep.macro_ci.acc, 0.47},
      {"TPR", *rep.macro_ci.tpr, 0.53},
      {"F1", *rep.macro_ci.f1, 0.55},
      {"ACC n=581", metrics::confidence_interval(0.9908, 581), 0.77},
  };
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    ok = ok && std::abs(c.got - c.expected) <= kCiTol;
    detail += std::string(detail.empty() ? "" : ", ") + c.what + " " + fmt(c.got, 3);
  }
  return check(ok, detail);
}

// 3 ----------------------------------------------------------------------

Outcome shape_contract() {
  const auto t0 = Clock::now();
  const auto x = random_images<float>(1, 3);
  const std::vector<std::pair<BackboneKind, backbone::FeatureShape>> expected = {
      {BackboneKind::SqueezeNet, {7, 7, 512}},
      {BackboneKind::ShuffleNet, {7, 7, 544}},
      {BackboneKind::EfficientNetB0, {7, 7, 1280}},
  };
  bool ok = true;
  std::string detail;
  std::map<BackboneKind, backbone::FeatureMapGenerator<float>> gens;
  for (const auto& [kind, shape] : expected) {
    auto gen = random_generator<float>(kind, derive_seed(7, "shape", std::uint64_t(kind)), x);
    const auto y = gen.forward(x);
    const backbone::FeatureShape got{y.shape().h, y.shape().w, y.shape().c};
    ok = ok && got == shape && y.shape().n == 1;
    detail += gen.spec().slug + " " + got.str() + ", ";
    gens.emplace(kind, std::move(gen));
  }
  auto fused = [&](std::vector<BackboneKind> kinds, Index channels, const char* name) {
    std::vector<backbone::FeatureMapGenerator<float>> branches;
    for (auto k : kinds) branches.push_back(gens.at(k));
    auto model = fusion::build_ensemble(std::move(branches), {}, 11);
    const auto f = model.features(x);
    const auto logits = model.logits(x);
    ok = ok && f.shape() == Shape{1, channels, 7, 7} && logits.shape() == Shape{1, 3, 1, 1};
    detail += std::string(name) + " " + std::to_string(f.shape().h) + "x" + std::to_string(f.shape().w) + "x" +
              std::to_string(f.shape().c) + " -> " + std::to_string(logits.shape().c) + " logits, ";
  };
  fused({BackboneKind::EfficientNetB0, BackboneKind::ShuffleNet, BackboneKind::SqueezeNet}, 2336, "#3");
  fused({BackboneKind::EfficientNetB0, BackboneKind::SqueezeNet}, 1792, "#1");
  const double dt = seconds_since(t0);
  return check(ok && dt < kShapeSeconds, detail + fmt(dt, 1) + " s");
}

// 4 ----------------------------------------------------------------------

Outcome parameter_count() {
  std::vector<backbone::FeatureMapGenerator<float>> branches;
  for (auto kind : {BackboneKind::SqueezeNet, BackboneKind::ShuffleNet, BackboneKind::EfficientNetB0}) {
    branches.push_back(backbone::truncate_and_freeze(backbone::build_backbone<float>(kind, 1000, 1)));
  }
  const fusion::HeadConfig head;
  auto model = fusion::build_ensemble(std::move(branches), head, 1);
  const auto count = model.count_parameters();
  // Independent closed form for the (7, 7, 2336) fused map.
  const Index c = 2336, h = 7, w = 7, k = head.kernel, f = head.filters, classes = 3;
  const Index closed = 2 * c + (c * k * k * f + f) + 2 * f + (h * w * f * classes + classes);
  const double rel = std::abs(double(count.total) - kParamTarget) / kParamTarget;
  return check(rel <= kParamBand && count.trainable == closed,
               "total " + std::to_string(count.total) + " (" + fmt(100 * rel, 2) + "% from 5.62M), trainable " +
                   std::to_string(count.trainable) + " vs closed form " + std::to_string(closed));
}

// 5 ----------------------------------------------------------------------

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm() + b.norm(), 1e-12);
  return (a - b).norm() / scale;
}

/// Analytic d loss / d logits against central differences on random instances.
double loss_gradient_error(int instances) {
  Rng rng(2021);
  double worst = 0;
  for (int t = 0; t < instances; ++t) {
    const Index n = 1 + Index(rng.below(6));
    nn::RowMatrix<double> logits(n, 3);
    for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-4, 4);
    std::vector<int> labels;
    for (Index i = 0; i < n; ++i) labels.push_back(int(rng.below(3)));
    const Eigen::Vector3d w(rng.uniform(0.05, 1), rng.uniform(0.05, 1), rng.uniform(0.05, 1));
    const auto lg = nn::weighted_cross_entropy_logits(logits, labels, w);
    Eigen::VectorXd numeric(logits.size()), analytic(logits.size());
    const double h = 1e-6;
    for (Index i = 0; i < logits.size(); ++i) {
      auto plus = logits, minus = logits;
      plus.data()[i] += h;
      minus.data()[i] -= h;
      numeric(i) = (nn::weighted_cross_entropy_logits(plus, labels, w).loss -
                    nn::weighted_cross_entropy_logits(minus, labels, w).loss) / (2 * h);
      analytic(i) = lg.grad.data()[i];
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

/// Same check through a small fused head, covering every head parameter.
double head_gradient_error(int instances) {
  Rng rng(77);
  double worst = 0;
  for (int t = 0; t < instances; ++t) {
    const Index n = 2 + Index(rng.below(3));
    const backbone::FeatureShape in{3, 3, 2 + Index(rng.below(4))};
    fusion::HeadConfig cfg;
    cfg.kernel = rng.bernoulli() ? 1 : 3;
    auto head = fusion::make_head<double>(in, cfg, rng.next());
    auto params = nn::parameters(head);
    Tensor<double> x({n, in.c, in.h, in.w});
    for (Index i = 0; i < x.size(); ++i) x.vec()(i) = rng.normal();
    std::vector<int> labels;
    for (Index i = 0; i < n; ++i) labels.push_back(int(rng.below(3)));
    const Eigen::Vector3d w(0.75, 0.1, 0.15);
    auto loss_of = [&] {
      const auto logits = head.forward(x, nn::Mode::Train);
      head.clear_cache();
      return nn::weighted_cross_entropy_logits(logits.rows(), labels, w).loss;
    };
    nn::zero_grad(params);
    const auto logits = head.forward(x, nn::Mode::Train);
    const auto lg = nn::weighted_cross_entropy_logits(logits.rows(), labels, w);
    head.backward(Tensor<double>(logits.shape(), Eigen::Map<const Eigen::VectorXd>(lg.grad.data(), lg.grad.size())));
    head.clear_cache();
    std::vector<double> a, b;
    const double h = 1e-6;
    for (auto& p : params.params) {
      for (Index i = 0; i < p.param->size(); ++i) {
        const double v = p.param->value(i);
        p.param->value(i) = v + h;
        const double up = loss_of();
        p.param->value(i) = v - h;
        const double down = loss_of();
        p.param->value(i) = v;
        a.push_back(p.param->grad(i));
        b.push_back((up - down) / (2 * h));
      }
    }
    worst = std::max(worst, relative_error(Eigen::Map<Eigen::VectorXd>(a.data(), Index(a.size())),
                                           Eigen::Map<Eigen::VectorXd>(b.data(), Index(b.size()))));
  }
  return worst;
}

Outcome freeze_and_gradients() {
  auto source = data::make_synthetic_source(2, 5);
  const auto all = data::view_all(*source);
  std::vector<Tensor<float>> calib;
  for (Index i = 0; i < all.size(); ++i) calib.push_back(all.load(i));
  const auto batch = stack_batch(calib);
  std::vector<backbone::FeatureMapGenerator<float>> branches;
  for (auto kind : {BackboneKind::SqueezeNet, BackboneKind::ShuffleNet, BackboneKind::EfficientNetB0}) {
    branches.push_back(random_generator<float>(kind, derive_seed(5, "freeze", std::uint64_t(kind)), batch));
  }
  auto model = fusion::build_ensemble(std::move(branches), {}, 5);
  std::vector<Eigen::VectorXf> branch_before, head_before;
  std::vector<std::uint64_t> digests;
  for (auto& b : model.branches()) {
    const auto set = b.parameters();
    digests.push_back(nn::weights_digest(set));
    for (const auto& p : set.params) branch_before.push_back(p.param->value);
    for (const auto& bf : set.buffers) branch_before.push_back(bf.buffer->value);
  }
  for (const auto& p : model.head_parameters().params) head_before.push_back(p.param->value);

  auto hp = train::Hyperparams::ensemble();
  hp.batch_size = int(all.size());
  hp.max_epochs = 1;
  hp.augment = false;
  hp.select_best = false;
  const auto history = train::train_ensemble(model, all, data::DataView{source.get(), {}}, hp, 5);

  bool branches_same = history.iterations == 1;
  std::size_t i = 0, d = 0;
  for (auto& b : model.branches()) {
    const auto set = b.parameters();
    branches_same = branches_same && nn::weights_digest(set) == digests[d++];
    for (const auto& p : set.params) branches_same = branches_same && p.param->value == branch_before[i++];
    for (const auto& bf : set.buffers) branches_same = branches_same && bf.buffer->value == branch_before[i++];
  }
  bool head_changed = false;
  std::size_t j = 0;
  for (const auto& p : model.head_parameters().params) head_changed = head_changed || p.param->value != head_before[j++];

  const double loss_err = loss_gradient_error(20);
  const double head_err = head_gradient_error(20);
  return check(branches_same && head_changed && loss_err <= kFdRelTol && head_err <= kFdRelTol,
               std::string("branches ") + (branches_same ? "bitwise unchanged" : "CHANGED") + ", head " +
                   (head_changed ? "updated" : "NOT updated") + ", FD rel err loss " + sci(loss_err) + " head " + sci(head_err));
}

// 6 ----------------------------------------------------------------------

Outcome fold_hygiene() {
  const std::array<Index, 3> counts = {219, 1341, 1345};
  std::vector<data::DatasetEntry> entries;
  for (int c = 0; c < 3; ++c) {
    for (Index i = 0; i < counts[std::size_t(c)]; ++i) {
      entries.push_back({"synthetic/" + std::string(data::class_name(c)) + "/" + std::to_string(i) + ".png", c});
    }
  }
  const auto index = data::DatasetIndex::from_entries(std::move(entries));
  const auto plan = data::make_folds(index, 5, 42);
  bool ok = index.size() == 2905 && plan.k == 5;
  for (const auto& f : plan.folds) ok = ok && f.size() == 581;
  std::set<Index> seen;
  for (const auto& f : plan.folds) {
    for (Index i : f) ok = ok && seen.insert(i).second;
  }
  ok = ok && Index(seen.size()) == index.size();
  Index spread = 0;
  for (int c = 0; c < 3; ++c) {
    const double ideal = double(counts[std::size_t(c)]) / 5;
    for (const auto& f : plan.folds) {
      Index n = 0;
      for (Index i : f) n += index.entries[std::size_t(i)].label == c;
      spread = std::max<Index>(spread, Index(std::ceil(std::abs(double(n) - ideal))));
    }
  }
  ok = ok && spread <= 1;
  const bool same_seed = data::make_folds(index, 5, 42).folds == plan.folds;
  const bool other_seed = data::make_folds(index, 5, 43).folds != plan.folds;
  return check(ok && same_seed && other_seed,
               "5 x 581, disjoint and exhaustive, max per-class deviation " + std::to_string(spread) +
                   ", reproducible " + (same_seed ? "yes" : "no") + ", seed-sensitive " + (other_seed ? "yes" : "no"));
}

// 7 ----------------------------------------------------------------------

Outcome training_smoke() {
  const auto t0 = Clock::now();
  auto source = data::make_synthetic_source(50, 7);  // 150 images, 3 classes
  data::DataView train_view{source.get(), {}}, val_view{source.get(), {}};
  for (Index i = 0; i < source->size(); ++i) ((i / 3) % 5 == 4 ? val_view : train_view).indices.push_back(i);
  std::vector<Tensor<float>> calib;
  for (Index k = 0; k < 12; ++k) calib.push_back(train_view.load(k));
  const auto batch = stack_batch(calib);
  std::vector<backbone::FeatureMapGenerator<float>> branches;
  for (auto kind : {BackboneKind::SqueezeNet, BackboneKind::ShuffleNet, BackboneKind::EfficientNetB0}) {
    branches.push_back(random_generator<float>(kind, derive_seed(7, "smoke", std::uint64_t(kind)), batch));
  }
  auto model = fusion::build_ensemble(std::move(branches), {}, 7);
  auto hp = train::Hyperparams::ensemble();
  hp.max_epochs = 3;
  hp.batch_size = 8;
  hp.validation_frequency = 1000;
  hp.augment = false;
  hp.select_best = false;
  const auto history = train::train_ensemble(model, train_view, val_view, hp, 7);
  bool decreasing = history.epochs.size() == 3;
  std::string losses;
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    if (e > 0) decreasing = decreasing && history.epochs[e].train_loss < history.epochs[e - 1].train_loss;
    losses += (e ? " > " : "") + fmt(history.epochs[e].train_loss, 4);
  }
  const auto result = train::evaluate_fold(model, val_view, 1);
  const double dt = seconds_since(t0);
  return check(decreasing && result.accuracy == 100.0 && dt < kSmokeSeconds,
               std::to_string(train_view.size()) + " train / " + std::to_string(val_view.size()) +
                   " val images, epoch loss " + losses + ", val accuracy " + fmt(result.accuracy, 1) + "%, " +
                   fmt(dt, 1) + " s");
}

// 8 ----------------------------------------------------------------------

nn::Linear<double>& head_fc(fusion::EnsembleModel<double>& model) {
  auto& head = model.head();
  return dynamic_cast<nn::Linear<double>&>(head.child(std::size_t(head.find("fc"))));
}

Outcome gradcam_properties() {
  const auto x = random_images<double>(1, 8);
  std::vector<backbone::FeatureMapGenerator<double>> branches;
  branches.push_back(random_generator<double>(BackboneKind::SqueezeNet, 8, x));
  auto model = fusion::build_ensemble(std::move(branches), {}, 8);
  nn::recalibrate_batch_norm(model.head(), model.features(random_images<double>(2, 9)));
  const int target = 0;
  const auto base = explain::grad_cam(model, x, target);
  const bool shape_ok = base.raw.rows() == 7 && base.raw.cols() == 7 && base.raw.minCoeff() >= 0;

  // Scaling the target row of the final layer by a > 0 scales the target logit by a.
  auto& fc = head_fc(model);
  const Index in = fc.in_features();
  const double a = 3.7;
  const Eigen::VectorXd saved_w = fc.weight().value, saved_b = fc.bias().value;
  fc.weight().value.segment(target * in, in) *= a;
  fc.bias().value(target) *= a;
  const auto scaled = explain::grad_cam(model, x, target);
  const double scale_diff = (scaled.upsampled - base.upsampled).cwiseAbs().maxCoeff();
  const bool nontrivial = base.upsampled.maxCoeff() > 0;

  // Non-negative activations with all-negative weights: every channel contribution is <= 0.
  fc.weight().value = saved_w;
  fc.bias().value = saved_b;
  fc.weight().value.segment(target * in, in) = -fc.weight().value.segment(target * in, in).cwiseAbs();
  const auto negative = explain::grad_cam(model, x, target);
  const bool zero = negative.raw.isZero(0) && negative.upsampled.isZero(0);

  return check(shape_ok && nontrivial && scale_diff <= kCamScaleTol && zero,
               "raw " + std::to_string(base.raw.rows()) + "x" + std::to_string(base.raw.cols()) + " min " +
                   fmt(base.raw.minCoeff(), 4) + ", scaling max diff " + sci(scale_diff) + ", negative case " + (zero ? "all zero" : "NONZERO"));
}

// 9 ----------------------------------------------------------------------

Outcome full_reproduction() {
  const char* path = std::getenv("ECVD_FULL_CV_REPORT");
  if (!path || !*path) {
    return {Outcome::Skip,
            "needs the radiography dataset; set ECVD_FULL_CV_REPORT to a cv_report.json from `ecvd crossval`"};
  }
  std::ifstream in(path);
  if (!in) return check(false, std::string("cannot read ") + path);
  const auto report = nlohmann::json::parse(in);
  const auto cm = metrics::confusion_from_json(report.at("summed_confusion"));
  const double acc = *metrics::macro_average(cm).macro.acc;
  const bool full = report.at("complete").get<bool>() && report.at("per_fold").size() == 5 &&
                    report.at("variant").get<std::string>() == "cvdnet3";
  return check(full && std::abs(acc - kReproTarget) <= kReproBand,
               "macro accuracy " + fmt(acc) + " over " + std::to_string(cm.total()) + " images");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metrics oracle", metrics_oracle},
      {"confidence intervals", confidence_intervals},
      {"shape contract", shape_contract},
      {"parameter count", parameter_count},
      {"freeze and gradient contract", freeze_and_gradients},
      {"fold hygiene", fold_hygiene},
      {"training smoke test", training_smoke},
      {"grad-cam properties", gradcam_properties},
      {"full-scale reproduction", full_reproduction},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* status = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
    failures += o.status == Outcome::Fail;
    std::cout << "criterion " << i + 1 << " " << status << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
