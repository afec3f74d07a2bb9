#include "ecvd/bench/bench.hpp"

#include <doctest.h>

#include <cmath>

using namespace ecvd;

namespace {

const auto kNoop = [](const Tensor<float>&) {};

}  // namespace

TEST_CASE("summarize: mean and sample standard deviation") {
  const auto one = bench::summarize({4.0});
  CHECK(one.mean_ms == 4.0);
  CHECK(one.std_ms == 0.0);
  const auto s = bench::summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean_ms == doctest::Approx(2.5));
  CHECK(s.std_ms == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.per_repeat_ms.size() == 4);
  const auto empty = bench::summarize({});
  CHECK(empty.mean_ms == 0.0);
}

TEST_CASE("a single repeat over a single image has zero spread") {
  auto src = data::make_synthetic_source(1, 1, 16);
  data::DataView one{src.get(), {0}};
  int calls = 0;
  bench::BenchOptions o;
  o.repeats = 1;
  o.warmup = 2;
  o.model_ref = "model.json";
  const auto r = bench::benchmark_inference([&](const Tensor<float>&) { ++calls; }, one, o);
  CHECK(calls == 2 + 1 + 1);
  CHECK(r.n_images == 1);
  CHECK(r.forward.per_repeat_ms.size() == 1);
  CHECK(r.forward.mean_ms == r.forward.per_repeat_ms[0]);
  CHECK(r.forward.std_ms == 0.0);
  REQUIRE(r.end_to_end);
  CHECK(r.end_to_end->std_ms == 0.0);
}

TEST_CASE("repeats and images set the number of timed passes") {
  auto src = data::make_synthetic_source(2, 1, 16);
  int calls = 0;
  bench::BenchOptions o;
  o.repeats = 3;
  o.warmup = 0;
  o.end_to_end = false;
  const auto r = bench::benchmark_inference([&](const Tensor<float>&) { ++calls; }, data::view_all(*src), o);
  CHECK(calls == 3 * 6);
  CHECK(r.forward.per_repeat_ms.size() == 3);
  CHECK(!r.end_to_end);
  for (double v : r.forward.per_repeat_ms) CHECK(v >= 0.0);
}

TEST_CASE("benchmark rejects empty inputs and non-positive repeats") {
  auto src = data::make_synthetic_source(1, 1, 16);
  bench::BenchOptions o;
  CHECK_THROWS_AS(bench::benchmark_inference(kNoop, data::DataView{src.get(), {}}, o), Error);
  o.repeats = 0;
  CHECK_THROWS_AS(bench::benchmark_inference(kNoop, data::view_all(*src), o), Error);
  o.repeats = 1;
  o.warmup = -1;
  CHECK_THROWS_AS(bench::benchmark_inference(kNoop, data::view_all(*src), o), Error);
}

TEST_CASE("reports state the timed boundary and hardware") {
  auto src = data::make_synthetic_source(1, 1, 16);
  bench::BenchOptions o;
  o.repeats = 2;
  o.warmup = 0;
  const auto r = bench::benchmark_inference(kNoop, data::view_all(*src), o);
  const auto j = bench::to_json(r);
  CHECK(j["boundary"].get<std::string>().find("forward pass only") != std::string::npos);
  CHECK(j["repeats"] == 2);
  CHECK(j["forward"]["per_repeat_ms"].size() == 2);
  CHECK(!j["end_to_end"].is_null());
  CHECK(!j["hardware"].get<std::string>().empty());
  const auto csv = bench::bench_csv(r);
  CHECK(csv.rfind("timing,mean_ms,std_ms,n_images,repeats\nforward,", 0) == 0);
  CHECK(csv.find("\nend_to_end,") != std::string::npos);
}
