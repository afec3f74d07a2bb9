#include "ecvd/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace ecvd::metrics {

namespace {

constexpr std::array<const char*, kClasses> kNames = {"COVID-19", "Normal", "Viral-Pneumonia"};

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return 100.0 * double(num) / double(den);
}

std::optional<double> harmonic(std::optional<double> a, std::optional<double> b) {
  if (!a || !b) return std::nullopt;
  if (*a + *b == 0) return std::nullopt;
  return 2.0 * *a * *b / (*a + *b);
}

std::optional<double> interval(std::optional<double> value, std::int64_t n, double level) {
  if (!value || n <= 0) return std::nullopt;
  return confidence_interval(*value / 100.0, n, level);
}

}  // namespace

ConfusionMatrix3::ConfusionMatrix3(const Matrix& m) : m_(m) {
  if ((m_.array() < 0).any()) throw Error("confusion matrix entries must be non-negative");
}

ConfusionMatrix3::ConfusionMatrix3(std::initializer_list<std::initializer_list<std::int64_t>> rows)
    : m_(Matrix::Zero()) {
  if (rows.size() != kClasses) throw Error("confusion matrix needs 3 rows");
  int r = 0;
  for (const auto& row : rows) {
    if (row.size() != kClasses) throw Error("confusion matrix rows need 3 entries");
    int c = 0;
    for (std::int64_t v : row) {
      if (v < 0) throw Error("confusion matrix entries must be non-negative");
      m_(r, c++) = v;
    }
    ++r;
  }
}

void ConfusionMatrix3::add(int truth, int predicted, std::int64_t count) {
  if (truth < 0 || truth >= kClasses || predicted < 0 || predicted >= kClasses) {
    throw Error("confusion matrix class index out of range");
  }
  m_(truth, predicted) += count;
}

double ConfusionMatrix3::micro_accuracy() const {
  if (total() == 0) throw Error("micro accuracy of an empty confusion matrix");
  return 100.0 * double(trace()) / double(total());
}

ConfusionMatrix3 ConfusionMatrix3::permuted(const std::array<int, kClasses>& perm) const {
  Matrix out = Matrix::Zero();
  for (int i = 0; i < kClasses; ++i) {
    for (int j = 0; j < kClasses; ++j) out(perm[i], perm[j]) = m_(i, j);
  }
  return ConfusionMatrix3(out);
}

ConfusionMatrix3 sum_confusions(const std::vector<ConfusionMatrix3>& list) {
  if (list.empty()) throw Error("sum_confusions: empty list");
  ConfusionMatrix3 out;
  for (const auto& m : list) out += m;
  return out;
}

RateSet per_class_metrics(const ConfusionMatrix3& cm, int c) {
  if (c < 0 || c >= kClasses) throw Error("class index out of range");
  const auto tp = cm.tp(c), fn = cm.fn(c), fp = cm.fp(c), tn = cm.tn(c);
  RateSet r;
  r.tpr = ratio(tp, tp + fn);
  r.ppv = ratio(tp, tp + fp);
  r.spec = ratio(tn, tn + fp);
  r.acc = ratio(tp + tn, cm.total());
  r.f1 = harmonic(r.tpr, r.ppv);
  return r;
}

double normal_quantile(double level) {
  if (!(level > 0 && level < 1)) throw Error("confidence level must lie in (0, 1)");
  // Solve erf(z / sqrt 2) = level by Newton's method.
  double z = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double f = std::erf(z / std::sqrt(2.0)) - level;
    const double df = std::sqrt(2.0 / std::acos(-1.0)) * std::exp(-z * z / 2.0);
    const double step = f / df;
    z -= step;
    if (std::abs(step) < 1e-15) break;
  }
  return z;
}

double confidence_interval(double p, std::int64_t n, double level) {
  if (!(p >= 0 && p <= 1)) throw Error("confidence_interval: proportion outside [0, 1]");
  if (n < 1) throw Error("confidence_interval: n must be >= 1");
  return 100.0 * normal_quantile(level) * std::sqrt(p * (1.0 - p) / double(n));
}

MetricsReport macro_average(const ConfusionMatrix3& cm, F1Mode f1_mode, CiMode ci_mode, double level) {
  if (cm.total() < 1) throw Error("macro_average: empty confusion matrix");
  MetricsReport rep;
  rep.n = cm.total();
  rep.f1_mode = f1_mode;
  rep.ci_mode = ci_mode;

  std::array<std::vector<double>, 5> defined;
  std::vector<double> f1s;
  for (int c = 0; c < kClasses; ++c) {
    const RateSet r = per_class_metrics(cm, c);
    rep.per_class[c] = r;
    const auto tp = cm.tp(c), fn = cm.fn(c), fp = cm.fp(c), tn = cm.tn(c);
    const bool total = ci_mode == CiMode::TotalCount;
    rep.per_class_ci[c] = {interval(r.tpr, total ? rep.n : tp + fn, level),
                           interval(r.ppv, total ? rep.n : tp + fp, level),
                           interval(r.spec, total ? rep.n : tn + fp, level),
                           interval(r.acc, rep.n, level),
                           interval(r.f1, total ? rep.n : tp + fn + fp, level)};
    const std::array<std::pair<const char*, std::optional<double>>, 5> fields = {
        {{"TPR", r.tpr}, {"PPV", r.ppv}, {"SPEC", r.spec}, {"ACC", r.acc}, {"F1", r.f1}}};
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (fields[k].second) {
        defined[k].push_back(*fields[k].second);
      } else {
        rep.warnings.push_back(std::string(fields[k].first) + " undefined for class " + kNames[c] +
                               " (zero denominator); excluded from the macro average");
      }
    }
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  rep.macro.tpr = mean(defined[0]);
  rep.macro.ppv = mean(defined[1]);
  rep.macro.spec = mean(defined[2]);
  rep.macro.acc = mean(defined[3]);
  rep.f1_mean_of_classes = mean(defined[4]);
  rep.macro.f1 = f1_mode == F1Mode::FromMacroRates ? harmonic(rep.macro.tpr, rep.macro.ppv) : rep.f1_mean_of_classes;
  rep.macro_ci = {interval(rep.macro.tpr, rep.n, level), interval(rep.macro.ppv, rep.n, level),
                  interval(rep.macro.spec, rep.n, level), interval(rep.macro.acc, rep.n, level),
                  interval(rep.macro.f1, rep.n, level)};
  rep.micro_accuracy = cm.micro_accuracy();
  rep.micro_accuracy_ci = confidence_interval(rep.micro_accuracy / 100.0, rep.n, level);
  return rep;
}

std::string metrics_csv(const MetricsReport& report) {
  auto cell = [](std::optional<double> v, std::optional<double> ci) {
    if (!v) return std::string("undefined");
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f ±%.2f", *v, ci.value_or(0.0));
    return std::string(buf);
  };
  auto row = [&](const std::string& name, const RateSet& v, const RateSet& ci) {
    return name + "," + cell(v.tpr, ci.tpr) + "," + cell(v.ppv, ci.ppv) + "," + cell(v.spec, ci.spec) + "," +
           cell(v.f1, ci.f1) + "," + cell(v.acc, ci.acc) + "\n";
  };
  std::string out = "class,TPR,PPV,SPEC,F1,ACC\n";
  for (int c = 0; c < kClasses; ++c) out += row(kNames[c], report.per_class[c], report.per_class_ci[c]);
  out += row("Average", report.macro, report.macro_ci);
  return out;
}

nlohmann::json to_json(const ConfusionMatrix3& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < kClasses; ++r) rows.push_back({cm(r, 0), cm(r, 1), cm(r, 2)});
  return rows;
}

ConfusionMatrix3 confusion_from_json(const nlohmann::json& j) {
  ConfusionMatrix3::Matrix m;
  if (!j.is_array() || j.size() != kClasses) throw Error("confusion matrix JSON must be a 3x3 array");
  for (int r = 0; r < kClasses; ++r) {
    for (int c = 0; c < kClasses; ++c) m(r, c) = j.at(r).at(c).get<std::int64_t>();
  }
  return ConfusionMatrix3(m);
}

nlohmann::json to_json(const MetricsReport& report) {
  auto rates = [](const RateSet& v) {
    auto opt = [](std::optional<double> x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
    return nlohmann::json{{"TPR", opt(v.tpr)}, {"PPV", opt(v.ppv)}, {"SPEC", opt(v.spec)},
                          {"ACC", opt(v.acc)}, {"F1", opt(v.f1)}};
  };
  nlohmann::json j;
  j["n"] = report.n;
  j["f1_mode"] = report.f1_mode == F1Mode::FromMacroRates ? "from_macro_rates" : "mean_of_classes";
  j["ci_mode"] = report.ci_mode == CiMode::TotalCount ? "total_count" : "per_class_count";
  for (int c = 0; c < kClasses; ++c) {
    j["per_class"][kNames[c]] = {{"value", rates(report.per_class[c])}, {"ci95", rates(report.per_class_ci[c])}};
  }
  j["macro"] = {{"value", rates(report.macro)}, {"ci95", rates(report.macro_ci)}};
  j["macro_accuracy_is_one_vs_rest"] = true;
  j["f1_mean_of_classes"] = report.f1_mean_of_classes ? nlohmann::json(*report.f1_mean_of_classes) : nlohmann::json(nullptr);
  j["micro_accuracy"] = {{"value", report.micro_accuracy}, {"ci95", report.micro_accuracy_ci}};
  j["warnings"] = report.warnings;
  return j;
}

}  // namespace ecvd::metrics
