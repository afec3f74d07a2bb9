#include "ecvd/bench/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace ecvd::bench {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

TimingSummary summarize(std::vector<double> per_repeat_ms) {
  TimingSummary s;
  s.per_repeat_ms = std::move(per_repeat_ms);
  const auto n = s.per_repeat_ms.size();
  if (n == 0) return s;
  s.mean_ms = std::accumulate(s.per_repeat_ms.begin(), s.per_repeat_ms.end(), 0.0) / double(n);
  if (n > 1) {
    double ss = 0;
    for (double v : s.per_repeat_ms) ss += (v - s.mean_ms) * (v - s.mean_ms);
    s.std_ms = std::sqrt(ss / double(n - 1));
  }
  return s;
}

BenchReport benchmark_inference(const std::function<void(const Tensor<float>&)>& forward,
                                const data::DataView& images, const BenchOptions& options) {
  if (images.size() == 0) throw Error("benchmark_inference: empty image set");
  if (options.repeats < 1) throw Error("benchmark_inference: repeats must be >= 1");
  if (options.warmup < 0) throw Error("benchmark_inference: warmup must be >= 0");

  BenchReport r;
  r.model_ref = options.model_ref;
  r.n_images = images.size();
  r.repeats = options.repeats;
  r.warmup = options.warmup;
  r.hardware = hardware_description();
  r.boundary = options.end_to_end
                   ? "forward: network forward pass only, batch size 1, inputs preloaded; end_to_end: image decode, "
                     "resize, normalization and forward pass"
                   : "forward: network forward pass only, batch size 1, inputs preloaded";

  std::vector<Tensor<float>> inputs;
  inputs.reserve(static_cast<std::size_t>(images.size()));
  for (Index k = 0; k < images.size(); ++k) inputs.push_back(images.load(k));
  for (int w = 0; w < options.warmup; ++w) forward(inputs.front());

  std::vector<double> per_repeat;
  for (int rep = 0; rep < options.repeats; ++rep) {
    double total = 0;
    for (const auto& x : inputs) {
      const auto t0 = Clock::now();
      forward(x);
      total += ms_since(t0);
    }
    per_repeat.push_back(total / double(inputs.size()));
  }
  r.forward = summarize(std::move(per_repeat));

  if (options.end_to_end) {
    std::vector<double> e2e;
    for (int rep = 0; rep < options.repeats; ++rep) {
      double total = 0;
      for (Index k = 0; k < images.size(); ++k) {
        const auto t0 = Clock::now();
        forward(images.load(k));
        total += ms_since(t0);
      }
      e2e.push_back(total / double(images.size()));
    }
    r.end_to_end = summarize(std::move(e2e));
  }
  return r;
}

std::string hardware_description() {
  std::string model = "unknown CPU";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " logical cores, CPU inference";
}

nlohmann::json to_json(const BenchReport& r) {
  auto timing = [](const TimingSummary& t) {
    return nlohmann::json{{"mean_ms", t.mean_ms}, {"std_ms", t.std_ms}, {"per_repeat_ms", t.per_repeat_ms}};
  };
  nlohmann::json j = {{"model_ref", r.model_ref}, {"n_images", r.n_images}, {"repeats", r.repeats},
                      {"warmup", r.warmup},       {"forward", timing(r.forward)}, {"boundary", r.boundary},
                      {"hardware", r.hardware}};
  j["end_to_end"] = r.end_to_end ? timing(*r.end_to_end) : nlohmann::json(nullptr);
  return j;
}

std::string bench_csv(const BenchReport& r) {
  std::string out = "timing,mean_ms,std_ms,n_images,repeats\n";
  auto row = [&](const char* name, const TimingSummary& t) {
    out += std::string(name) + "," + std::to_string(t.mean_ms) + "," + std::to_string(t.std_ms) + "," +
           std::to_string(r.n_images) + "," + std::to_string(r.repeats) + "\n";
  };
  row("forward", r.forward);
  if (r.end_to_end) row("end_to_end", *r.end_to_end);
  return out;
}

}  // namespace ecvd::bench
