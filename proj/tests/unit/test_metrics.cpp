#include "ecvd/metrics/metrics.hpp"

#include <doctest.h>

using namespace ecvd::metrics;
using doctest::Approx;

namespace {

const ConfusionMatrix3 kEnsemble3{{216, 3, 0}, {2, 1324, 15}, {4, 50, 1291}};

}  // namespace

TEST_CASE("one-vs-rest counts") {
  const auto& m = kEnsemble3;
  CHECK(m.total() == 2905);
  CHECK(m.tp(0) == 216);
  CHECK(m.fn(0) == 3);
  CHECK(m.fp(0) == 6);
  CHECK(m.tn(0) == 2905 - 216 - 3 - 6);
  CHECK(m.total() - m.trace() == 74);
  CHECK(m.true_count(1) == 1341);
}

TEST_CASE("per-class rates against hand computation") {
  const auto covid = per_class_metrics(kEnsemble3, 0);
  CHECK(*covid.tpr == Approx(100.0 * 216 / 219));
  CHECK(*covid.tpr == Approx(98.6).epsilon(0.0005));
  CHECK(*covid.spec == Approx(100.0 * 2680 / 2686));
  CHECK(*covid.spec == Approx(99.8).epsilon(0.0005));
  CHECK(*covid.ppv == Approx(100.0 * 216 / 222));
  CHECK(*covid.acc == Approx(100.0 * (216 + 2680) / 2905));
  CHECK(*covid.f1 == Approx(2 * *covid.tpr * *covid.ppv / (*covid.tpr + *covid.ppv)));
  const auto viral = per_class_metrics(kEnsemble3, 2);
  CHECK(*viral.tpr == Approx(100.0 * 1291 / 1345));
  CHECK(*viral.tpr == Approx(96.0).epsilon(0.0005));
}

TEST_CASE("macro averages reproduce the published rows") {
  struct Row {
    ConfusionMatrix3 cm;
    double tpr, ppv, spec, f1, acc;
  };
  const std::vector<Row> rows = {
      {{{213, 6, 0}, {3, 1314, 24}, {2, 77, 1266}}, 96.46, 96.63, 97.66, 96.55, 97.43},
      {{{215, 4, 0}, {2, 1322, 17}, {5, 74, 1266}}, 96.96, 96.65, 97.89, 96.81, 97.66},
      {kEnsemble3, 97.78, 97.43, 98.48, 97.61, 98.30},
  };
  for (const auto& r : rows) {
    const auto rep = macro_average(r.cm);
    CHECK(std::abs(*rep.macro.tpr - r.tpr) <= 0.05);
    CHECK(std::abs(*rep.macro.ppv - r.ppv) <= 0.05);
    CHECK(std::abs(*rep.macro.spec - r.spec) <= 0.05);
    CHECK(std::abs(*rep.macro.f1 - r.f1) <= 0.05);
    CHECK(std::abs(*rep.macro.acc - r.acc) <= 0.05);
  }
}

TEST_CASE("macro accuracy is the mean one-vs-rest accuracy; micro is reported apart") {
  const auto rep = macro_average(kEnsemble3);
  double mean = 0;
  for (int c = 0; c < 3; ++c) mean += double(kEnsemble3.tp(c) + kEnsemble3.tn(c)) / 2905.0 * 100 / 3;
  CHECK(*rep.macro.acc == Approx(mean));
  CHECK(rep.micro_accuracy == Approx(100.0 * 2831 / 2905));
  CHECK(rep.micro_accuracy == Approx(97.45).epsilon(0.0001));
}

TEST_CASE("F1 modes") {
  const auto a = macro_average(kEnsemble3, F1Mode::FromMacroRates);
  const double t = *a.macro.tpr, p = *a.macro.ppv;
  CHECK(*a.macro.f1 == Approx(2 * t * p / (t + p)));
  const auto b = macro_average(kEnsemble3, F1Mode::MeanOfClasses);
  double mean = 0;
  for (int c = 0; c < 3; ++c) mean += *per_class_metrics(kEnsemble3, c).f1 / 3;
  CHECK(*b.macro.f1 == Approx(mean));
  CHECK(*a.f1_mean_of_classes == Approx(mean));
}

TEST_CASE("perfect classifiers score 100 everywhere") {
  for (std::int64_t n : {1, 10}) {
    const ConfusionMatrix3 cm{{n, 0, 0}, {0, n, 0}, {0, 0, n}};
    const auto rep = macro_average(cm);
    for (const auto& v : {rep.macro.tpr, rep.macro.ppv, rep.macro.spec, rep.macro.f1, rep.macro.acc}) {
      CHECK(*v == Approx(100.0));
    }
    for (int c = 0; c < 3; ++c) CHECK(*per_class_metrics(cm, c).f1 == Approx(100.0));
  }
}

TEST_CASE("zero denominators are undefined and skipped with a warning") {
  const ConfusionMatrix3 cm{{0, 0, 0}, {0, 5, 1}, {0, 2, 4}};
  const auto covid = per_class_metrics(cm, 0);
  CHECK(!covid.tpr.has_value());
  CHECK(!covid.ppv.has_value());
  CHECK(covid.spec.has_value());
  const auto rep = macro_average(cm);
  CHECK(!rep.warnings.empty());
  const double expected = (*per_class_metrics(cm, 1).tpr + *per_class_metrics(cm, 2).tpr) / 2;
  CHECK(*rep.macro.tpr == Approx(expected));
}

TEST_CASE("permuting classes permutes per-class metrics and keeps macro values") {
  const std::array<int, 3> perm = {2, 0, 1};
  const auto p = kEnsemble3.permuted(perm);
  CHECK(p.total() == kEnsemble3.total());
  for (int c = 0; c < 3; ++c) {
    const auto a = per_class_metrics(kEnsemble3, c);
    const auto b = per_class_metrics(p, perm[std::size_t(c)]);
    CHECK(*a.tpr == Approx(*b.tpr));
    CHECK(*a.ppv == Approx(*b.ppv));
    CHECK(*a.spec == Approx(*b.spec));
  }
  const auto ra = macro_average(kEnsemble3), rb = macro_average(p);
  CHECK(*ra.macro.tpr == Approx(*rb.macro.tpr));
  CHECK(*ra.macro.f1 == Approx(*rb.macro.f1));
  CHECK(*ra.macro.acc == Approx(*rb.macro.acc));
}

TEST_CASE("confidence intervals: published values and monotonicity") {
  CHECK(confidence_interval(0.9830, 2905) == Approx(0.47).epsilon(0.01));
  CHECK(confidence_interval(0.9778, 2905) == Approx(0.536).epsilon(0.01));
  CHECK(confidence_interval(0.9908, 581) == Approx(0.776).epsilon(0.01));
  CHECK(confidence_interval(1.0, 17) == 0.0);
  CHECK(confidence_interval(0.0, 17) == 0.0);
  CHECK(normal_quantile(0.95) == Approx(1.959964).epsilon(1e-6));
  for (double p : {0.1, 0.5, 0.97}) {
    double prev = confidence_interval(p, 1);
    for (std::int64_t n : {2, 10, 100, 1000, 10000}) {
      const double cur = confidence_interval(p, n);
      CHECK(cur < prev);
      prev = cur;
    }
  }
  CHECK_THROWS_AS(confidence_interval(1.2, 10), ecvd::Error);
  CHECK_THROWS_AS(confidence_interval(0.5, 0), ecvd::Error);
}

TEST_CASE("CI modes: total count versus each rate's own denominator") {
  const auto published = macro_average(kEnsemble3, F1Mode::FromMacroRates, CiMode::TotalCount);
  CHECK(*published.per_class_ci[0].tpr == Approx(confidence_interval(216.0 / 219, 2905)));
  CHECK(*published.per_class_ci[0].tpr == Approx(0.42).epsilon(0.01));
  const auto conventional = macro_average(kEnsemble3, F1Mode::FromMacroRates, CiMode::PerClassCount);
  CHECK(*conventional.per_class_ci[0].tpr == Approx(confidence_interval(216.0 / 219, 219)));
  CHECK(*conventional.macro_ci.acc == Approx(*published.macro_ci.acc));
}

TEST_CASE("summing confusion matrices") {
  CHECK(sum_confusions({kEnsemble3}) == kEnsemble3);
  const auto doubled = sum_confusions({kEnsemble3, kEnsemble3});
  CHECK(doubled.matrix() == 2 * kEnsemble3.matrix());
  CHECK_THROWS_AS(sum_confusions({}), ecvd::Error);
}

TEST_CASE("json round trip and csv layout") {
  CHECK(confusion_from_json(to_json(kEnsemble3)) == kEnsemble3);
  const std::string csv = metrics_csv(macro_average(kEnsemble3));
  CHECK(csv.rfind("class,TPR,PPV,SPEC,F1,ACC\n", 0) == 0);
  CHECK(csv.find("Average,97.78 ±0.54,97.43 ±0.58,98.48 ±0.45,97.61 ±0.56,98.30 ±0.47") != std::string::npos);
  CHECK(csv.find("98.30 ±0.47") != std::string::npos);
}

TEST_CASE("invalid matrices are rejected") {
  CHECK_THROWS_AS((ConfusionMatrix3{{1, 2}, {3, 4}}), ecvd::Error);
  CHECK_THROWS_AS((ConfusionMatrix3{{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), ecvd::Error);
  CHECK_THROWS_AS(macro_average(ConfusionMatrix3{}), ecvd::Error);
}
