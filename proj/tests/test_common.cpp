#include <doctest.h>

#include <chrono>
#include <cstdio>

#include "cpga/common.hpp"
#include "cpga/tensor.hpp"

using namespace cpga;

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) differs |= (a2.next_u64() != c.next_u64());
  CHECK(differs);

  Rng d1 = Rng::derive(7, "sample-001");
  Rng d2 = Rng::derive(7, "sample-001");
  Rng d3 = Rng::derive(7, "sample-002");
  CHECK(d1.next_u64() == d2.next_u64());
  CHECK(d1.next_u64() != d3.next_u64());
}

TEST_CASE("rng normal moments") {
  Rng r(1);
  double sum = 0, sum2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation") {
  Rng r(5);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  r.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("fnv1a64 stability") {
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(fnv1a64("a") != fnv1a64("b"));
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.0, 1.0, -0.5, 3.14159265358979, 1e-20, 6.02e23}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("gemm matches naive reference") {
  Rng r(11);
  const int m = 37, n = 53, k = 29;
  std::vector<float> a(m * k), b(k * n), c(m * n, 0.0f), ref(m * n, 0.0f);
  for (auto& x : a) x = static_cast<float>(r.uniform(-1, 1));
  for (auto& x : b) x = static_cast<float>(r.uniform(-1, 1));
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) ref[i * n + j] += a[i * k + p] * b[p * n + j];
  gemm_f32(m, n, k, a.data(), k, b.data(), n, c.data(), n);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));

  // accumulate path
  gemm_f32(m, n, k, a.data(), k, b.data(), n, c.data(), n, true);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(2.0f * ref[i]).epsilon(1e-4));
}

TEST_CASE("gemm double fallback matches naive") {
  Rng r(12);
  const int m = 13, n = 21, k = 17;
  std::vector<double> a(m * k), b(k * n), c(m * n, 0.0), ref(m * n, 0.0);
  for (auto& x : a) x = r.uniform(-1, 1);
  for (auto& x : b) x = r.uniform(-1, 1);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) ref[i * n + j] += a[i * k + p] * b[p * n + j];
  gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n);
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("gemm throughput probe") {
  // Shapes mirror the convolutions in the model trunk (forward and backward).
  struct Shape {
    int m, k, n;
  };
  for (auto [m, k, n] : {Shape{64, 864, 4096}, Shape{32, 27, 32768}, Shape{128, 1728, 512},
                         Shape{256, 3456, 64}, Shape{864, 64, 4096}, Shape{64, 4096, 864}}) {
    std::vector<float> a(static_cast<size_t>(m) * k, 0.5f), b(static_cast<size_t>(k) * n, 0.25f),
        c(static_cast<size_t>(m) * n);
    gemm_f32(m, n, k, a.data(), k, b.data(), n, c.data(), n);  // warm up
    const double flop = 2.0 * m * n * k;
    const int reps = std::max(1, static_cast<int>(3e9 / flop));
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) gemm_f32(m, n, k, a.data(), k, b.data(), n, c.data(), n);
    auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    std::printf("[bench] gemm m=%-4d k=%-4d n=%-6d: %6.1f GFLOP/s\n", m, k, n,
                flop * reps / secs / 1e9);
    CHECK(c[0] == doctest::Approx(0.5f * 0.25f * k));
  }
}
