#pragma once

#include "ecvd/data/source.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ecvd::bench {

struct BenchOptions {
  int repeats = 10;
  int warmup = 3;           // untimed passes over the first image
  bool end_to_end = true;   // also time load + preprocess + forward
  std::string model_ref;
};

/// Mean and sample standard deviation over repeat-level per-image averages.
struct TimingSummary {
  double mean_ms = 0;
  double std_ms = 0;
  std::vector<double> per_repeat_ms;
};

struct BenchReport {
  std::string model_ref;
  Index n_images = 0;
  int repeats = 0;
  int warmup = 0;
  TimingSummary forward;                   // forward pass only, batch size 1
  std::optional<TimingSummary> end_to_end; // decode + preprocess + forward
  std::string boundary;
  std::string hardware;
};

TimingSummary summarize(std::vector<double> per_repeat_ms);

/// Times `forward` on each image of `images` individually. Images are
/// loaded before the forward-only timing, so decoding and preprocessing stay
/// outside that timed region.
BenchReport benchmark_inference(const std::function<void(const Tensor<float>&)>& forward,
                                const data::DataView& images, const BenchOptions& options);

/// CPU model and logical core count.
std::string hardware_description();

nlohmann::json to_json(const BenchReport& r);
std::string bench_csv(const BenchReport& r);

}  // namespace ecvd::bench
