#include <doctest.h>

#include "cpga/nn.hpp"

using namespace cpga;
using namespace cpga::nn;

namespace {

// central finite difference of a scalar functional
template <class F>
double fd(F&& f, double& x, double h = 1e-6) {
  const double x0 = x;
  x = x0 + h;
  const double up = f();
  x = x0 - h;
  const double dn = f();
  x = x0;
  return (up - dn) / (2 * h);
}

double rel_err(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  return m > 1e-12 ? std::abs(a - b) / m : 0.0;
}

}  // namespace

TEST_CASE("linear forward matches hand arithmetic") {
  Linear<double> fc("t", 2, 2, 0);
  fc.w.v = {1.0, 2.0, -0.5, 0.25};  // [[1,2],[-0.5,0.25]]
  fc.b.v = {0.1, -0.1};
  Tensor<double> x({2});
  x.v = {3.0, -1.0};
  const Tensor<double> y = fc.forward(x);
  CHECK(y[0] == doctest::Approx(1 * 3 + 2 * -1 + 0.1));
  CHECK(y[1] == doctest::Approx(-0.5 * 3 + 0.25 * -1 - 0.1));
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(2);
  Linear<double> fc("t", 5, 3, 7);
  Tensor<double> x({5});
  for (auto& v : x.v) v = rng.uniform(-1, 1);
  Tensor<double> gy({3});
  for (auto& v : gy.v) v = rng.uniform(-1, 1);

  auto loss = [&] {  // L = gy . fc(x)
    Linear<double> probe = fc;
    const Tensor<double> y = probe.forward(x);
    double acc = 0;
    for (int i = 0; i < 3; ++i) acc += gy[(std::size_t)i] * y[(std::size_t)i];
    return acc;
  };
  (void)fc.forward(x);
  const Tensor<double> gx = fc.backward(gy);
  for (std::size_t i = 0; i < 5; ++i) CHECK(rel_err(gx[i], fd(loss, x.v[i])) < 1e-6);
  for (std::size_t i = 0; i < fc.w.size(); ++i)
    CHECK(rel_err(fc.gw[i], fd(loss, fc.w.v[i])) < 1e-6);
  for (std::size_t i = 0; i < 3; ++i) CHECK(rel_err(fc.gb[i], fd(loss, fc.b.v[i])) < 1e-6);
}

TEST_CASE("conv3d forward matches a brute-force oracle") {
  Rng rng(3);
  const int C = 2, D = 4, H = 5, W = 3;
  Conv3d<double> conv("t", C, 3, 11);
  Tensor<double> x({C, D, H, W});
  for (auto& v : x.v) v = rng.uniform(-1, 1);
  const Tensor<double> y = conv.forward(x);
  REQUIRE(y.shape == std::vector<int>({3, D, H, W}));

  auto xat = [&](int c, int z, int yy, int xx) -> double {
    if (z < 0 || z >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
    return x[((static_cast<std::size_t>(c) * D + z) * H + yy) * W + xx];
  };
  for (int co = 0; co < 3; ++co)
    for (int z = 0; z < D; ++z)
      for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx) {
          double acc = conv.b[static_cast<std::size_t>(co)];
          int k = 0;
          for (int ci = 0; ci < C; ++ci)
            for (int dz = -1; dz <= 1; ++dz)
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx, ++k)
                  acc += conv.w[static_cast<std::size_t>(co) * (C * 27) + k] *
                         xat(ci, z + dz, yy + dy, xx + dx);
          CHECK(y[((static_cast<std::size_t>(co) * D + z) * H + yy) * W + xx] ==
                doctest::Approx(acc).epsilon(1e-10));
        }
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(4);
  Conv3d<double> conv("t", 2, 2, 5);
  Tensor<double> x({2, 3, 3, 3});
  for (auto& v : x.v) v = rng.uniform(-1, 1);
  Tensor<double> gy({2, 3, 3, 3});
  for (auto& v : gy.v) v = rng.uniform(-1, 1);

  auto loss = [&] {
    Conv3d<double> probe = conv;
    const Tensor<double> y = probe.forward(x);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += gy[i] * y[i];
    return acc;
  };
  (void)conv.forward(x);
  const Tensor<double> gx = conv.backward(gy, true);
  for (std::size_t i = 0; i < x.size(); i += 7)
    CHECK(rel_err(gx[i], fd(loss, x.v[i])) < 1e-6);
  for (std::size_t i = 0; i < conv.w.size(); i += 11)
    CHECK(rel_err(conv.gw[i], fd(loss, conv.w.v[i])) < 1e-6);
  CHECK(rel_err(conv.gb[0], fd(loss, conv.b.v[0])) < 1e-6);
}

TEST_CASE("instance norm: constant input normalizes to the bias") {
  InstanceNorm3d<double> norm("t", 3);
  norm.b.v = {0.5, -0.25, 0.0};
  Tensor<double> x({3, 2, 2, 2});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 8; ++i) x[static_cast<std::size_t>(c) * 8 + i] = 7.0 * (c + 1);
  const Tensor<double> y = norm.forward(x);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 8; ++i)
      CHECK(y[static_cast<std::size_t>(c) * 8 + i] ==
            doctest::Approx(norm.b.v[static_cast<std::size_t>(c)]));
  // post-norm activations (pre-affine) have zero per-channel mean
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (int i = 0; i < 8; ++i) mean += norm.xhat_cache[static_cast<std::size_t>(c) * 8 + i];
    CHECK(mean / 8 == doctest::Approx(0.0));
  }
}

TEST_CASE("instance norm gradients match finite differences") {
  Rng rng(5);
  InstanceNorm3d<double> norm("t", 2);
  norm.w.v = {1.3, 0.7};
  norm.b.v = {0.2, -0.4};
  Tensor<double> x({2, 2, 2, 2});
  for (auto& v : x.v) v = rng.uniform(-1, 1);
  Tensor<double> gy({2, 2, 2, 2});
  for (auto& v : gy.v) v = rng.uniform(-1, 1);

  auto loss = [&] {
    InstanceNorm3d<double> probe = norm;
    const Tensor<double> y = probe.forward(x);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += gy[i] * y[i];
    return acc;
  };
  (void)norm.forward(x);
  const Tensor<double> gx = norm.backward(gy);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(rel_err(gx[i], fd(loss, x.v[i], 1e-7)) < 1e-5);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rel_err(norm.gw[i], fd(loss, norm.w.v[i])) < 1e-6);
    CHECK(rel_err(norm.gb[i], fd(loss, norm.b.v[i])) < 1e-6);
  }
}

TEST_CASE("maxpool forward and gradient routing") {
  MaxPool3d<double> pool;
  Tensor<double> x({1, 2, 2, 2});
  x.v = {1, 2, 3, 4, 5, 6, 7, 8};
  const Tensor<double> y = pool.forward(x);
  REQUIRE(y.size() == 1);
  CHECK(y[0] == 8.0);
  Tensor<double> gy({1, 1, 1, 1});
  gy[0] = 3.5;
  const Tensor<double> gx = pool.backward(gy);
  for (int i = 0; i < 7; ++i) CHECK(gx[static_cast<std::size_t>(i)] == 0.0);
  CHECK(gx[7] == 3.5);
}

TEST_CASE("dropout: off at inference, masked and scaled in training") {
  Dropout<float> drop(0.4);
  Tensor<float> x({1000});
  x.fill(1.0f);
  const Tensor<float> off = drop.forward(x);
  CHECK(off.v == x.v);

  drop.training = true;
  drop.reseed(1, "t");
  const Tensor<float> on = drop.forward(x);
  int zeros = 0;
  for (float v : on.v) {
    if (v == 0.0f) ++zeros;
    else CHECK(v == doctest::Approx(1.0f / 0.6f));
  }
  CHECK(zeros > 300);
  CHECK(zeros < 500);

  // deterministic under the same seed
  drop.reseed(1, "t");
  const Tensor<float> again = drop.forward(x);
  CHECK(again.v == on.v);

  // backward uses the same mask
  Tensor<float> gy({1000});
  gy.fill(1.0f);
  const Tensor<float> gx = drop.backward(gy);
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(gx[i] == (again[i] == 0.0f ? 0.0f : doctest::Approx(1.0f / 0.6f)));
  }
}

TEST_CASE("film modulation: identities and hand-computed map") {
  Tensor<double> x({2, 1, 1, 2});
  x.v = {1.0, 2.0, 3.0, 4.0};
  Tensor<double> ones({2}), zeros({2});
  ones.fill(1.0);
  const Tensor<double> id = film_modulate(x, ones, zeros);
  CHECK(id.v == x.v);

  Tensor<double> g0({2});
  const Tensor<double> only_beta = film_modulate(x, g0, ones);
  for (double v : only_beta.v) CHECK(v == 1.0);

  Tensor<double> gamma({2}), beta({2});
  gamma.v = {2.0, -1.0};
  beta.v = {0.5, 0.0};
  const Tensor<double> y = film_modulate(x, gamma, beta);
  CHECK(y.v == std::vector<double>({2.5, 4.5, -3.0, -4.0}));

  Tensor<double> bad({3});
  CHECK_THROWS_AS(film_modulate(x, bad, beta), ConfigError);
}

TEST_CASE("film modulation is affine in the map") {
  // modulate(aF1 + bF2) = a modulate(F1) + b modulate(F2) - (a+b-1) beta
  Rng rng(8);
  Tensor<double> f1({3, 1, 2, 2}), f2({3, 1, 2, 2}), gamma({3}), beta({3});
  for (auto& v : f1.v) v = rng.uniform(-1, 1);
  for (auto& v : f2.v) v = rng.uniform(-1, 1);
  for (auto& v : gamma.v) v = rng.uniform(-2, 2);
  for (auto& v : beta.v) v = rng.uniform(-1, 1);
  const double a = 1.7, b = -0.6;

  Tensor<double> mix = f1;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * f1[i] + b * f2[i];
  const Tensor<double> lhs = film_modulate(mix, gamma, beta);
  const Tensor<double> m1 = film_modulate(f1, gamma, beta);
  const Tensor<double> m2 = film_modulate(f2, gamma, beta);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const int c = static_cast<int>(i / 4);
    const double rhs = a * m1[i] + b * m2[i] - (a + b - 1.0) * beta[static_cast<std::size_t>(c)];
    CHECK(lhs[i] == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("film backward matches finite differences") {
  Rng rng(9);
  Tensor<double> x({2, 1, 1, 3}), gamma({2}), beta({2}), gy({2, 1, 1, 3});
  for (auto& v : x.v) v = rng.uniform(-1, 1);
  for (auto& v : gamma.v) v = rng.uniform(-1, 1);
  for (auto& v : beta.v) v = rng.uniform(-1, 1);
  for (auto& v : gy.v) v = rng.uniform(-1, 1);

  auto loss = [&] {
    const Tensor<double> y = film_modulate(x, gamma, beta);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += gy[i] * y[i];
    return acc;
  };
  Tensor<double> ggamma({2}), gbeta({2});
  const Tensor<double> gx = film_backward(x, gamma, gy, ggamma, gbeta);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(rel_err(gx[i], fd(loss, x.v[i])) < 1e-7);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rel_err(ggamma[i], fd(loss, gamma.v[i])) < 1e-7);
    CHECK(rel_err(gbeta[i], fd(loss, beta.v[i])) < 1e-7);
  }
}

TEST_CASE("single-site attention: value path carries everything") {
  SingleSiteAttention<double> attn("a", 8, 2, 3);
  Rng rng(10);
  Tensor<double> q({8}), kv({8});
  for (auto& v : q.v) v = rng.uniform(-1, 1);
  for (auto& v : kv.v) v = rng.uniform(-1, 1);

  const Tensor<double> y = attn.forward(q, kv);
  // softmax over a single key is 1: output is wo(wv(kv)), independent of q
  Tensor<double> q2({8});
  for (auto& v : q2.v) v = rng.uniform(-1, 1);
  const Tensor<double> y2 = attn.forward(q2, kv);
  CHECK(y.v == y2.v);

  // zeroed value projection (and output bias) silences the attended vector
  attn.wv.w.fill(0.0);
  attn.wv.b.fill(0.0);
  attn.wo.b.fill(0.0);
  const Tensor<double> silent = attn.forward(q, kv);
  for (double v : silent.v) CHECK(v == 0.0);
}

TEST_CASE("matmul transpose variants agree with naive loops") {
  Rng rng(12);
  const int m = 9, n = 11, k = 7;
  std::vector<float> a(static_cast<std::size_t>(m) * k), at(a.size());
  std::vector<float> b(static_cast<std::size_t>(k) * n), bt(b.size());
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const float v = static_cast<float>(rng.uniform(-1, 1));
      a[static_cast<std::size_t>(i) * k + p] = v;
      at[static_cast<std::size_t>(p) * m + i] = v;
    }
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) {
      const float v = static_cast<float>(rng.uniform(-1, 1));
      b[static_cast<std::size_t>(p) * n + j] = v;
      bt[static_cast<std::size_t>(j) * k + p] = v;
    }
  std::vector<float> ref(static_cast<std::size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j)
        ref[static_cast<std::size_t>(i) * n + j] +=
            a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];

  std::vector<float> c(static_cast<std::size_t>(m) * n);
  matmul<float>(m, n, k, a.data(), k, false, b.data(), n, false, c.data(), n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));

  matmul<float>(m, n, k, at.data(), m, true, b.data(), n, false, c.data(), n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));

  matmul<float>(m, n, k, a.data(), k, false, bt.data(), k, true, c.data(), n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));
}
