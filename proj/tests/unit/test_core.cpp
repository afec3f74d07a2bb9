#include "ecvd/core/rng.hpp"
#include "ecvd/core/tensor.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace ecvd;

TEST_CASE("tensor indexing is NCHW row-major") {
  Tensor<float> t({2, 3, 4, 5});
  t(1, 2, 3, 4) = 7;
  CHECK(t.data()[t.size() - 1] == 7);
  t(0, 1, 0, 0) = 3;
  CHECK(t.data()[20] == 3);
  CHECK(t.plane(0, 1)(0, 0) == 3);
  CHECK(t.sample(1)(2, 19) == 7);
}

TEST_CASE("reshape preserves data and rejects size changes") {
  Tensor<double> t({1, 2, 3, 4}, 1.5);
  const auto r = t.reshaped({1, 24, 1, 1});
  CHECK(r.vec() == t.vec());
  CHECK_THROWS_AS(t.reshaped({1, 5, 5, 1}), Error);
}

TEST_CASE("concat then slice recovers the parts") {
  Rng rng(1);
  Tensor<double> a({2, 3, 2, 2}), b({2, 5, 2, 2});
  for (Index i = 0; i < a.size(); ++i) a.vec()(i) = rng.normal();
  for (Index i = 0; i < b.size(); ++i) b.vec()(i) = rng.normal();
  const auto c = concat_channels<double>({&a, &b});
  CHECK(c.shape() == Shape{2, 8, 2, 2});
  CHECK(slice_channels(c, 0, 3).vec() == a.vec());
  CHECK(slice_channels(c, 3, 5).vec() == b.vec());
  Tensor<double> bad({2, 1, 3, 2});
  CHECK_THROWS_AS(concat_channels<double>({&a, &bad}), Error);
}

TEST_CASE("stack_batch and take_sample are inverse") {
  std::vector<Tensor<float>> xs;
  for (int i = 0; i < 3; ++i) xs.emplace_back(Shape{1, 2, 2, 2}, float(i));
  const auto s = stack_batch(xs);
  CHECK(s.shape().n == 3);
  for (int i = 0; i < 3; ++i) CHECK(take_sample(s, i).vec() == xs[std::size_t(i)].vec());
}

TEST_CASE("derived seeds are deterministic and tag-sensitive") {
  CHECK(derive_seed(1, "a", 0) == derive_seed(1, "a", 0));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "b", 0));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a", 0) != derive_seed(2, "a", 0));
}

TEST_CASE("rng streams reproduce and stay in range") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
}

TEST_CASE("rng normal has unit moments") {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.03);
  CHECK(std::abs(s2 / n - 1) < 0.05);
}

TEST_CASE("shuffle is a permutation") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng r(4);
  r.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[std::size_t(i)] == i);
  CHECK(!std::is_sorted(v.begin(), v.end()));
}
