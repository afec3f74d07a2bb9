#include "fixtures.hpp"

#include "ecvd/train/cross_validation.hpp"
#include "ecvd/train/ensemble_training.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace ecvd;
using backbone::BackboneKind;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ecvd_train_" + name);
  fs::remove_all(p);
  return p;
}

/// Linear softmax classifier over a 4-vector input, for exercising the loop.
struct LinearTarget {
  nn::Linear<double> fc{4, 3};
  train::TrainTarget<double> target() {
    train::TrainTarget<double> t;
    t.forward = [this](const Tensor<double>& x, nn::Mode m) { return fc.forward(x, m); };
    t.backward = [this](const Tensor<double>& g) { fc.backward(g); };
    t.clear_cache = [this] { fc.clear_cache(); };
    t.state = nn::parameters(fc);
    return t;
  }
};

train::ExampleSet<double> blobs(Index n, std::uint64_t seed) {
  auto data = std::make_shared<std::vector<Tensor<double>>>();
  train::ExampleSet<double> set;
  Rng rng(seed);
  for (Index i = 0; i < n; ++i) {
    const int y = int(i % 3);
    Tensor<double> x({1, 4, 1, 1});
    for (Index k = 0; k < 4; ++k) x.vec()(k) = 0.3 * rng.normal() + (k == y ? 2.0 : 0.0);
    data->push_back(x);
    set.labels.push_back(y);
  }
  set.input = [data](Index k, const data::AugmentDraw*) { return (*data)[std::size_t(k)]; };
  return set;
}

train::Hyperparams quick(int epochs, int batch) {
  auto hp = train::Hyperparams::ensemble();
  hp.max_epochs = epochs;
  hp.batch_size = batch;
  hp.augment = false;
  return hp;
}

/// Memory source whose images carry their label in every pixel.
std::unique_ptr<data::MemoryImageSource> labelled_source(std::array<Index, 3> counts) {
  auto src = std::make_unique<data::MemoryImageSource>();
  for (int c = 0; c < 3; ++c) {
    for (Index i = 0; i < counts[std::size_t(c)]; ++i) {
      src->add(data::ImageTensor({1, 3, 1, 1}, float(c)), c, std::to_string(c) + "/" + std::to_string(i));
    }
  }
  return src;
}

train::LogitsFn oracle_classifier() {
  return [](const Tensor<float>& x) {
    Tensor<float> z({x.shape().n, 3, 1, 1});
    for (Index n = 0; n < x.shape().n; ++n) z(n, Index(x(n, 0, 0, 0)), 0, 0) = 1;
    return z;
  };
}

/// Loads start failing after `budget` calls.
class FlakySource final : public data::ImageSource {
 public:
  FlakySource(const data::ImageSource& inner, long budget) : inner_(inner), budget_(budget) {}
  Index size() const override { return inner_.size(); }
  int label(Index i) const override { return inner_.label(i); }
  std::string id(Index i) const override { return inner_.id(i); }
  data::ImageTensor load(Index i) const override {
    if (--budget_ < 0) throw Error("disk went away");
    return inner_.load(i);
  }

 private:
  const data::ImageSource& inner_;
  mutable long budget_;
};

train::ExperimentConfig small_cv_config(const fs::path& out, const std::string& variant) {
  train::ExperimentConfig cfg;
  cfg.output_root = out;
  cfg.run_id = "test";
  cfg.variant = variant;
  cfg.folds_k = 3;
  cfg.weight_init = train::WeightInit::Random;
  cfg.calibration_images = 6;
  cfg.single_model.max_epochs = 1;
  cfg.single_model.batch_size = 4;
  cfg.single_model.augment = false;
  cfg.ensemble.max_epochs = 1;
  cfg.ensemble.batch_size = 4;
  return cfg;
}

}  // namespace

TEST_CASE("hyperparameter defaults follow the two training stages") {
  const auto s = train::Hyperparams::single_model();
  CHECK(s.batch_size == 32);
  CHECK(s.max_epochs == 10);
  CHECK(s.learning_rate == 1e-4);
  CHECK(s.l2 == 1e-4);
  CHECK(s.validation_frequency == 65);
  CHECK(s.new_layer_lr_factor == 10);
  CHECK(s.class_weights == std::array<double, 3>{0.75, 0.1, 0.15});
  const auto e = train::Hyperparams::ensemble();
  CHECK(e.learning_rate == 1e-3);
  CHECK(e.new_layer_lr_factor == 1);
  train::Hyperparams bad;
  bad.learning_rate = -1;
  bad.batch_size = 0;
  try {
    bad.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("learning_rate") != std::string::npos);
    CHECK(msg.find("batch_size") != std::string::npos);
  }
}

TEST_CASE("fit: zero epochs leaves the state untouched") {
  LinearTarget lt;
  auto t = lt.target();
  const Eigen::VectorXd before = lt.fc.weight().value;
  const auto h = train::fit(t, blobs(9, 1), blobs(3, 2), quick(0, 3), 1);
  CHECK(h.iterations == 0);
  CHECK(lt.fc.weight().value == before);
}

TEST_CASE("fit: drops the trailing partial batch and validates on schedule") {
  LinearTarget lt;
  auto t = lt.target();
  auto hp = quick(2, 32);
  hp.validation_frequency = 1;
  auto h = train::fit(t, blobs(70, 1), blobs(6, 2), hp, 1);
  CHECK(h.iterations == 4);
  LinearTarget lt2;
  auto t2 = lt2.target();
  hp = quick(2, 2);
  hp.validation_frequency = 3;
  h = train::fit(t2, blobs(20, 1), blobs(6, 2), hp, 1);
  std::vector<long> at;
  for (const auto& v : h.validations) at.push_back(v.iteration);
  CHECK(at == std::vector<long>{3, 6, 9, 10, 12, 15, 18, 20});
}

TEST_CASE("fit: learns separable data and restores the best validation state") {
  LinearTarget lt;
  auto t = lt.target();
  auto hp = quick(8, 6);
  hp.learning_rate = 0.05;
  const auto h = train::fit(t, blobs(60, 1), blobs(15, 2), hp, 3);
  CHECK(h.epochs.back().train_loss < h.epochs.front().train_loss);
  CHECK(h.restored_best);
  CHECK(h.best_val_accuracy == 100.0);
  const auto r = train::evaluate_examples(t, blobs(15, 2), hp);
  CHECK(r.accuracy == 100.0);
}

TEST_CASE("fit: identical seeds give identical runs") {
  auto run = [] {
    LinearTarget lt;
    auto t = lt.target();
    auto hp = quick(2, 4);
    hp.augment = true;
    train::fit(t, blobs(12, 1), blobs(3, 2), hp, 5);
    return Eigen::VectorXd(lt.fc.weight().value);
  };
  CHECK(run() == run());
}

TEST_CASE("fit: non-finite loss aborts with epoch and iteration") {
  LinearTarget lt;
  auto t = lt.target();
  t.forward = [](const Tensor<double>& x, nn::Mode) {
    return Tensor<double>({x.shape().n, 3, 1, 1}, std::numeric_limits<double>::quiet_NaN());
  };
  try {
    train::fit(t, blobs(6, 1), blobs(3, 2), quick(1, 3), 1);
    FAIL("expected divergence");
  } catch (const train::TrainingDiverged& e) {
    CHECK(e.epoch == 1);
    CHECK(e.iteration == 1);
  }
}

TEST_CASE("evaluate_fold: perfect and majority-class classifiers") {
  auto fold = labelled_source({44, 268, 269});
  const auto perfect = train::evaluate_fold(oracle_classifier(), data::view_all(*fold), 1);
  CHECK(perfect.confusion.total() == 581);
  CHECK(perfect.confusion.trace() == 581);
  CHECK(perfect.accuracy == 100.0);
  for (int c = 0; c < 3; ++c) CHECK(perfect.confusion.true_count(c) == fold->as_index().class_counts[std::size_t(c)]);

  auto full = labelled_source({219, 1341, 1345});
  const train::LogitsFn normal = [](const Tensor<float>& x) {
    Tensor<float> z({x.shape().n, 3, 1, 1});
    for (Index n = 0; n < x.shape().n; ++n) z(n, 1, 0, 0) = 1;
    return z;
  };
  const auto r = train::evaluate_fold(normal, data::view_all(*full), 1);
  CHECK(r.accuracy == doctest::Approx(100.0 * 1341 / 2905));
  CHECK(r.accuracy == doctest::Approx(46.16).epsilon(1e-4));
  CHECK_THROWS_AS(train::evaluate_fold(normal, data::DataView{full.get(), {}}, 3), Error);
}

TEST_CASE("train_ensemble: zero epochs leaves the head unchanged") {
  auto model = testing::ensemble<float>({BackboneKind::SqueezeNet});
  auto src = data::make_synthetic_source(2, 1);
  const auto before = nn::weights_digest(model.head_parameters());
  const auto h = train::train_ensemble(model, data::view_all(*src), data::view_all(*src), quick(0, 2), 1);
  CHECK(h.iterations == 0);
  CHECK(nn::weights_digest(model.head_parameters()) == before);
}

TEST_CASE("train_ensemble with augmentation trains the head only") {
  auto model = testing::ensemble<float>({BackboneKind::SqueezeNet});
  auto src = data::make_synthetic_source(2, 3);
  const auto branch = nn::weights_digest(model.branches()[0].parameters());
  const auto head = nn::weights_digest(model.head_parameters());
  auto hp = quick(1, 3);
  hp.augment = true;
  train::train_ensemble(model, data::view_all(*src), data::DataView{src.get(), {}}, hp, 1);
  CHECK(nn::weights_digest(model.branches()[0].parameters()) == branch);
  CHECK(nn::weights_digest(model.head_parameters()) != head);
}

TEST_CASE("fold splits are hygienic and deterministic") {
  auto src = labelled_source({10, 12, 11});
  const auto plan = data::make_folds(src->as_index(), 5, 3);
  train::ExperimentConfig cfg;
  for (int f = 1; f <= 5; ++f) {
    const auto s = train::split_fold(plan, f, cfg);
    CHECK_NOTHROW(train::check_fold_hygiene(*src, s));
    std::set<Index> all(s.train.begin(), s.train.end());
    for (Index i : s.val) CHECK(all.insert(i).second);
    for (Index i : s.test) CHECK(all.insert(i).second);
    CHECK(Index(all.size()) == src->size());
    CHECK(Index(s.val.size()) == Index(std::lround(0.1 * double(s.train.size() + s.val.size()))));
    CHECK(train::split_fold(plan, f, cfg).val == s.val);
  }
  auto leaky = train::split_fold(plan, 1, cfg);
  leaky.train.push_back(leaky.test.front());
  CHECK_THROWS_AS(train::check_fold_hygiene(*src, leaky), Error);
  CHECK_THROWS_AS(train::split_fold(plan, 6, cfg), Error);
}

TEST_CASE("cross-validation of a single backbone: complete, summed, persisted, reproducible") {
  auto src = data::make_synthetic_source(4, 2, 48);
  const auto plan = data::make_folds(src->as_index(), 3, 1);
  const auto out = scratch("cv_single");
  auto cfg = small_cv_config(out, "squeezenet");
  const train::RunLayout layout{cfg.run_dir()};
  const auto report = train::run_cross_validation(cfg, *src, plan, layout);
  CHECK(report.complete);
  REQUIRE(report.per_fold.size() == 3);
  std::vector<metrics::ConfusionMatrix3> folds;
  for (const auto& f : report.per_fold) {
    CHECK(f.ok());
    CHECK(f.confusion.total() == Index(plan.test(f.fold_id - 1).size()));
    CHECK(fs::exists(f.checkpoint_ref));
    folds.push_back(f.confusion);
  }
  CHECK(report.summed == metrics::sum_confusions(folds));
  for (int c = 0; c < 3; ++c) CHECK(report.summed.true_count(c) == 4);
  CHECK(fs::exists(layout.reports() / "cv_report.json"));
  CHECK(fs::exists(layout.reports() / "metrics.csv"));
  CHECK(fs::exists(layout.reports() / "fold_2.json"));
  const auto again = train::run_cross_validation(cfg, *src, plan, train::RunLayout{out / "again"});
  CHECK(again.summed == report.summed);
}

TEST_CASE("cross-validation of a fused variant keeps branches frozen") {
  auto src = data::make_synthetic_source(3, 4);
  const auto plan = data::make_folds(src->as_index(), 3, 2);
  auto cfg = small_cv_config(scratch("cv_fused"), "cvdnet1");
  cfg.single_model.max_epochs = 0;
  cfg.finetune_per_fold = false;
  const auto report = train::run_cross_validation(cfg, *src, plan, train::RunLayout{cfg.run_dir()});
  CHECK(report.complete);
  CHECK(report.summed.total() == 9);
  CHECK(!report.notes.empty());
  const auto loaded = train::load_checkpoint(report.per_fold.front().checkpoint_ref);
  REQUIRE(loaded.ensemble);
  CHECK(loaded.ensemble->fused_shape().c == 1792);
}

TEST_CASE("cross-validation records failing folds and continues") {
  auto inner = data::make_synthetic_source(4, 5, 48);
  const FlakySource src(*inner, 40);
  const auto plan = data::make_folds(inner->as_index(), 3, 1);
  auto cfg = small_cv_config(scratch("cv_flaky"), "squeezenet");
  const auto report = train::run_cross_validation(cfg, src, plan, train::RunLayout{cfg.run_dir()});
  CHECK(!report.complete);
  REQUIRE(report.per_fold.size() == 3);
  CHECK(report.per_fold.front().ok());
  CHECK(!report.per_fold.back().ok());
  CHECK(report.per_fold.back().error.find("disk went away") != std::string::npos);
  CHECK(report.metrics.has_value());
}
