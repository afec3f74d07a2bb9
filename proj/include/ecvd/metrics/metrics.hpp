#pragma once

#include "ecvd/core/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace ecvd::metrics {

inline constexpr int kClasses = 3;

/// Rows are the true class, columns the predicted class, both in the order
/// COVID-19, Normal, Viral-Pneumonia.
class ConfusionMatrix3 {
 public:
  using Matrix = Eigen::Matrix<std::int64_t, kClasses, kClasses, Eigen::RowMajor>;

  ConfusionMatrix3() : m_(Matrix::Zero()) {}
  explicit ConfusionMatrix3(const Matrix& m);
  ConfusionMatrix3(std::initializer_list<std::initializer_list<std::int64_t>> rows);

  void add(int truth, int predicted, std::int64_t count = 1);

  std::int64_t operator()(int truth, int predicted) const { return m_(truth, predicted); }
  const Matrix& matrix() const { return m_; }

  std::int64_t total() const { return m_.sum(); }
  std::int64_t trace() const { return m_.trace(); }
  std::int64_t tp(int c) const { return m_(c, c); }
  std::int64_t fn(int c) const { return m_.row(c).sum() - m_(c, c); }
  std::int64_t fp(int c) const { return m_.col(c).sum() - m_(c, c); }
  std::int64_t tn(int c) const { return total() - tp(c) - fn(c) - fp(c); }
  std::int64_t true_count(int c) const { return m_.row(c).sum(); }

  /// trace / total, percent.
  double micro_accuracy() const;

  /// Relabels class i as perm[i] in both axes.
  ConfusionMatrix3 permuted(const std::array<int, kClasses>& perm) const;

  ConfusionMatrix3& operator+=(const ConfusionMatrix3& o) {
    m_ += o.m_;
    return *this;
  }
  friend ConfusionMatrix3 operator+(ConfusionMatrix3 a, const ConfusionMatrix3& b) { return a += b; }
  friend bool operator==(const ConfusionMatrix3& a, const ConfusionMatrix3& b) { return a.m_ == b.m_; }

 private:
  Matrix m_;
};

ConfusionMatrix3 sum_confusions(const std::vector<ConfusionMatrix3>& list);

/// One-vs-rest rates in percent. An empty optional marks a zero denominator.
struct RateSet {
  std::optional<double> tpr, ppv, spec, acc, f1;
};

RateSet per_class_metrics(const ConfusionMatrix3& cm, int c);

enum class F1Mode {
  FromMacroRates,  // 2 * mean(TPR) * mean(PPV) / (mean(TPR) + mean(PPV)); matches the published tables
  MeanOfClasses,   // mean of per-class F1
};

enum class CiMode {
  TotalCount,     // every interval uses n = total samples; matches the published tables
  PerClassCount,  // per-class intervals use each rate's own denominator
};

/// Normal-approximation half-width z * sqrt(p (1 - p) / n), in percent.
double confidence_interval(double p, std::int64_t n, double level = 0.95);

/// Two-sided standard normal quantile for a central coverage `level`.
double normal_quantile(double level);

struct MetricsReport {
  std::array<RateSet, kClasses> per_class;
  std::array<RateSet, kClasses> per_class_ci;
  RateSet macro;
  RateSet macro_ci;
  std::optional<double> f1_mean_of_classes;  // the alternative macro F1
  double micro_accuracy = 0;
  double micro_accuracy_ci = 0;
  std::int64_t n = 0;
  F1Mode f1_mode = F1Mode::FromMacroRates;
  CiMode ci_mode = CiMode::TotalCount;
  std::vector<std::string> warnings;
};

/// Macro TPR/PPV/SPEC/ACC are means over classes with a defined value;
/// undefined per-class values are skipped with a warning. Macro intervals use
/// n = total samples.
MetricsReport macro_average(const ConfusionMatrix3& cm, F1Mode f1_mode = F1Mode::FromMacroRates,
                            CiMode ci_mode = CiMode::TotalCount, double level = 0.95);

/// Per-class rows then an "Average" row; each cell "value ±ci" with two decimals.
std::string metrics_csv(const MetricsReport& report);

nlohmann::json to_json(const ConfusionMatrix3& cm);
ConfusionMatrix3 confusion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& report);

}  // namespace ecvd::metrics
