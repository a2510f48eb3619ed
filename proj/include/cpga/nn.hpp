#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cpga/common.hpp"
#include "cpga/tensor.hpp"

namespace cpga::nn {

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <class T>
inline void init_uniform_fan_in(Tensor<T>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
}

// ------------------------------------------------------------------ linear

template <class T>
struct Linear {
  int in = 0, out = 0;
  std::string name;
  Tensor<T> w, b, gw, gb;
  Tensor<T> x_cache;

  Linear() = default;
  Linear(std::string n, int in_dim, int out_dim, std::uint64_t seed)
      : in(in_dim), out(out_dim), name(std::move(n)) {
    w.resize({out, in});
    b.resize({out});
    gw.resize({out, in});
    gb.resize({out});
    Rng rng = Rng::derive(seed, name);
    init_uniform_fan_in(w, in, rng);
    init_uniform_fan_in(b, in, rng);
  }

  /// x: [in] -> y: [out]
  Tensor<T> forward(const Tensor<T>& x) {
    x_cache = x;
    Tensor<T> y({out});
    matmul<T>(out, 1, in, w.data(), in, false, x.data(), 1, false, y.data(), 1);
    for (int o = 0; o < out; ++o) y[static_cast<std::size_t>(o)] += b[static_cast<std::size_t>(o)];
    return y;
  }

  /// gy: [out] -> gx: [in]; accumulates parameter gradients.
  Tensor<T> backward(const Tensor<T>& gy) {
    for (int o = 0; o < out; ++o) {
      gb[static_cast<std::size_t>(o)] += gy[static_cast<std::size_t>(o)];
      const T g = gy[static_cast<std::size_t>(o)];
      T* grow = &gw.v[static_cast<std::size_t>(o) * in];
      const T* xr = x_cache.data();
      for (int i = 0; i < in; ++i) grow[i] += g * xr[i];
    }
    Tensor<T> gx({in});
    matmul<T>(1, in, out, gy.data(), out, false, w.data(), in, false, gx.data(), in);
    return gx;
  }

  void params(std::vector<ParamRef<T>>& out_list) {
    out_list.push_back({name + ".w", &w, &gw});
    out_list.push_back({name + ".b", &b, &gb});
  }
  std::size_t param_count() const { return w.size() + b.size(); }
};

// -------------------------------------------------------------------- relu

template <class T>
struct ReLU {
  Tensor<T> y_cache;

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.v) v = v > T(0) ? v : T(0);
    y_cache = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(y_cache[i] > T(0))) gx[i] = T(0);
    return gx;
  }
};

// ------------------------------------------------------------------ conv3d

/// 3x3x3, stride 1, pad 1. Input [cin, D, H, W], output [cout, D, H, W].
template <class T>
struct Conv3d {
  int cin = 0, cout = 0;
  std::string name;
  Tensor<T> w, b, gw, gb;  // w: [cout, cin*27]
  Tensor<T> col_cache;     // [K, N] from the last forward
  Tensor<T> gcol_buf;      // scratch for the input-gradient columns
  int D = 0, H = 0, W = 0;

  Conv3d() = default;
  Conv3d(std::string n, int cin_, int cout_, std::uint64_t seed)
      : cin(cin_), cout(cout_), name(std::move(n)) {
    w.resize({cout, cin * 27});
    b.resize({cout});
    gw.resize({cout, cin * 27});
    gb.resize({cout});
    Rng rng = Rng::derive(seed, name);
    init_uniform_fan_in(w, cin * 27, rng);
    init_uniform_fan_in(b, cin * 27, rng);
  }

  void im2col(const Tensor<T>& x, Tensor<T>& col) const {
    const int N = D * H * W;
    col.resize({cin * 27, N});
    int k = 0;
    for (int ci = 0; ci < cin; ++ci) {
      const T* chan = x.data() + static_cast<std::size_t>(ci) * N;
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            T* dst = col.data() + static_cast<std::size_t>(k) * N;
            for (int z = 0; z < D; ++z) {
              const int sz = z + dz;
              for (int y = 0; y < H; ++y) {
                const int sy = y + dy;
                T* drow = dst + (static_cast<std::size_t>(z) * H + y) * W;
                if (sz < 0 || sz >= D || sy < 0 || sy >= H) {
                  for (int xx = 0; xx < W; ++xx) drow[xx] = T(0);
                  continue;
                }
                const T* srow = chan + (static_cast<std::size_t>(sz) * H + sy) * W;
                for (int xx = 0; xx < W; ++xx) {
                  const int sx = xx + dx;
                  drow[xx] = (sx < 0 || sx >= W) ? T(0) : srow[sx];
                }
              }
            }
          }
        }
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    D = x.shape[1];
    H = x.shape[2];
    W = x.shape[3];
    const int N = D * H * W;
    im2col(x, col_cache);
    Tensor<T> y({cout, D, H, W});
    matmul<T>(cout, N, cin * 27, w.data(), cin * 27, false, col_cache.data(), N, false, y.data(),
              N);
    for (int co = 0; co < cout; ++co) {
      T* row = y.data() + static_cast<std::size_t>(co) * N;
      const T bias = b[static_cast<std::size_t>(co)];
      for (int i = 0; i < N; ++i) row[i] += bias;
    }
    return y;
  }

  /// gy: [cout, D, H, W] -> gx (when want_input_grad).
  Tensor<T> backward(const Tensor<T>& gy, bool want_input_grad = true) {
    const int N = D * H * W;
    const int K = cin * 27;
    // bias
    for (int co = 0; co < cout; ++co) {
      const T* row = gy.data() + static_cast<std::size_t>(co) * N;
      T acc = T(0);
      for (int i = 0; i < N; ++i) acc += row[i];
      gb[static_cast<std::size_t>(co)] += acc;
    }
    // weights: gw[cout,K] += gy[cout,N] * col[K,N]^T
    matmul<T>(cout, K, N, gy.data(), N, false, col_cache.data(), N, true, gw.data(), K, true);

    Tensor<T> gx;
    if (want_input_grad) {
      // gcol[K,N] = w^T[K,cout] * gy[cout,N], then scatter back
      Tensor<T>& gcol = gcol_buf;
      gcol.resize({K, N});
      matmul<T>(K, N, cout, w.data(), K, true, gy.data(), N, false, gcol.data(), N);
      gx.resize({cin, D, H, W});
      int k = 0;
      for (int ci = 0; ci < cin; ++ci) {
        T* chan = gx.data() + static_cast<std::size_t>(ci) * N;
        for (int dz = -1; dz <= 1; ++dz) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx, ++k) {
              const T* src = gcol.data() + static_cast<std::size_t>(k) * N;
              for (int z = 0; z < D; ++z) {
                const int sz = z + dz;
                if (sz < 0 || sz >= D) continue;
                for (int y = 0; y < H; ++y) {
                  const int sy = y + dy;
                  if (sy < 0 || sy >= H) continue;
                  const T* srow = src + (static_cast<std::size_t>(z) * H + y) * W;
                  T* drow = chan + (static_cast<std::size_t>(sz) * H + sy) * W;
                  for (int xx = 0; xx < W; ++xx) {
                    const int sx = xx + dx;
                    if (sx >= 0 && sx < W) drow[sx] += srow[xx];
                  }
                }
              }
            }
          }
        }
      }
    }
    return gx;
  }

  void params(std::vector<ParamRef<T>>& out_list) {
    out_list.push_back({name + ".w", &w, &gw});
    out_list.push_back({name + ".b", &b, &gb});
  }
  std::size_t param_count() const { return w.size() + b.size(); }
};

// ------------------------------------------------------------ 1x1x1 conv

template <class T>
struct Conv1x1 {
  int cin = 0, cout = 0;
  std::string name;
  Tensor<T> w, b, gw, gb;  // w: [cout, cin]
  Tensor<T> x_cache;
  int N = 0;

  Conv1x1() = default;
  Conv1x1(std::string n, int cin_, int cout_, std::uint64_t seed)
      : cin(cin_), cout(cout_), name(std::move(n)) {
    w.resize({cout, cin});
    b.resize({cout});
    gw.resize({cout, cin});
    gb.resize({cout});
    Rng rng = Rng::derive(seed, name);
    init_uniform_fan_in(w, cin, rng);
    init_uniform_fan_in(b, cin, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    N = x.shape[1] * x.shape[2] * x.shape[3];
    x_cache = x;
    Tensor<T> y({cout, x.shape[1], x.shape[2], x.shape[3]});
    matmul<T>(cout, N, cin, w.data(), cin, false, x.data(), N, false, y.data(), N);
    for (int co = 0; co < cout; ++co) {
      T* row = y.data() + static_cast<std::size_t>(co) * N;
      for (int i = 0; i < N; ++i) row[i] += b[static_cast<std::size_t>(co)];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    for (int co = 0; co < cout; ++co) {
      const T* row = gy.data() + static_cast<std::size_t>(co) * N;
      T acc = T(0);
      for (int i = 0; i < N; ++i) acc += row[i];
      gb[static_cast<std::size_t>(co)] += acc;
    }
    matmul<T>(cout, cin, N, gy.data(), N, false, x_cache.data(), N, true, gw.data(), cin, true);
    Tensor<T> gx({cin, x_cache.shape[1], x_cache.shape[2], x_cache.shape[3]});
    matmul<T>(cin, N, cout, w.data(), cin, true, gy.data(), N, false, gx.data(), N);
    return gx;
  }

  void params(std::vector<ParamRef<T>>& out_list) {
    out_list.push_back({name + ".w", &w, &gw});
    out_list.push_back({name + ".b", &b, &gb});
  }
  std::size_t param_count() const { return w.size() + b.size(); }
};

// ---------------------------------------------------------- instance norm

/// Per-(channel) normalization over the spatial sites of one sample, with
/// learned affine parameters.
template <class T>
struct InstanceNorm3d {
  int channels = 0;
  std::string name;
  Tensor<T> w, b, gw, gb;
  Tensor<T> xhat_cache;
  std::vector<T> istd_cache;
  static constexpr double kEps = 1e-5;

  InstanceNorm3d() = default;
  InstanceNorm3d(std::string n, int c) : channels(c), name(std::move(n)) {
    w.resize({c});
    b.resize({c});
    gw.resize({c});
    gb.resize({c});
    w.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const int N = x.shape[1] * x.shape[2] * x.shape[3];
    xhat_cache.resize(x.shape);
    istd_cache.assign(static_cast<std::size_t>(channels), T(0));
    Tensor<T> y(x.shape);
    for (int c = 0; c < channels; ++c) {
      const T* src = x.data() + static_cast<std::size_t>(c) * N;
      T mean = T(0);
      for (int i = 0; i < N; ++i) mean += src[i];
      mean /= static_cast<T>(N);
      T var = T(0);
      for (int i = 0; i < N; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<T>(N);
      const T istd = T(1) / std::sqrt(var + static_cast<T>(kEps));
      istd_cache[static_cast<std::size_t>(c)] = istd;
      T* xh = xhat_cache.data() + static_cast<std::size_t>(c) * N;
      T* dst = y.data() + static_cast<std::size_t>(c) * N;
      const T wc = w[static_cast<std::size_t>(c)], bc = b[static_cast<std::size_t>(c)];
      for (int i = 0; i < N; ++i) {
        xh[i] = (src[i] - mean) * istd;
        dst[i] = wc * xh[i] + bc;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const int N = gy.shape[1] * gy.shape[2] * gy.shape[3];
    Tensor<T> gx(gy.shape);
    for (int c = 0; c < channels; ++c) {
      const T* g = gy.data() + static_cast<std::size_t>(c) * N;
      const T* xh = xhat_cache.data() + static_cast<std::size_t>(c) * N;
      T sum_g = T(0), sum_gx = T(0);
      for (int i = 0; i < N; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
      gb[static_cast<std::size_t>(c)] += sum_g;
      gw[static_cast<std::size_t>(c)] += sum_gx;
      const T wc = w[static_cast<std::size_t>(c)];
      const T istd = istd_cache[static_cast<std::size_t>(c)];
      const T mean_g = sum_g / static_cast<T>(N);
      const T mean_gx = sum_gx / static_cast<T>(N);
      T* dst = gx.data() + static_cast<std::size_t>(c) * N;
      for (int i = 0; i < N; ++i) {
        dst[i] = wc * istd * (g[i] - mean_g - xh[i] * mean_gx);
      }
    }
    return gx;
  }

  void params(std::vector<ParamRef<T>>& out_list) {
    out_list.push_back({name + ".w", &w, &gw});
    out_list.push_back({name + ".b", &b, &gb});
  }
  std::size_t param_count() const { return w.size() + b.size(); }
};

// ---------------------------------------------------------------- maxpool

template <class T>
struct MaxPool3d {
  std::vector<std::int32_t> argmax;
  std::vector<int> in_shape;

  Tensor<T> forward(const Tensor<T>& x) {
    const int C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OD = D / 2, OH = H / 2, OW = W / 2;
    if (OD < 1 || OH < 1 || OW < 1) throw ConfigError("maxpool: spatial dims too small");
    in_shape = x.shape;
    Tensor<T> y({C, OD, OH, OW});
    argmax.assign(y.size(), 0);
    const std::size_t in_hw = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
      const T* chan = x.data() + static_cast<std::size_t>(c) * D * in_hw;
      for (int z = 0; z < OD; ++z)
        for (int yy = 0; yy < OH; ++yy)
          for (int xx = 0; xx < OW; ++xx) {
            T best = -std::numeric_limits<T>::infinity();
            std::int32_t best_idx = 0;
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const int sz = 2 * z + dz, sy = 2 * yy + dy, sx = 2 * xx + dx;
                  const std::size_t idx = static_cast<std::size_t>(sz) * in_hw +
                                          static_cast<std::size_t>(sy) * W + sx;
                  if (chan[idx] > best) {
                    best = chan[idx];
                    best_idx = static_cast<std::int32_t>(idx);
                  }
                }
            const std::size_t oidx = ((static_cast<std::size_t>(c) * OD + z) * OH + yy) * OW + xx;
            y[oidx] = best;
            argmax[oidx] = best_idx;
          }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const int C = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
    Tensor<T> gx({C, D, H, W});
    const std::size_t chan_size = static_cast<std::size_t>(D) * H * W;
    const std::size_t out_chan = gy.size() / static_cast<std::size_t>(C);
    for (int c = 0; c < C; ++c) {
      const T* g = gy.data() + static_cast<std::size_t>(c) * out_chan;
      T* dst = gx.data() + static_cast<std::size_t>(c) * chan_size;
      const std::int32_t* am = argmax.data() + static_cast<std::size_t>(c) * out_chan;
      for (std::size_t i = 0; i < out_chan; ++i) dst[am[i]] += g[i];
    }
    return gx;
  }
};

// ---------------------------------------------------------------- dropout

template <class T>
struct Dropout {
  double p = 0.4;
  bool training = false;
  std::vector<std::uint8_t> mask;
  Rng rng{0};

  explicit Dropout(double prob = 0.4) : p(prob) {}

  void reseed(std::uint64_t seed, const std::string& tag) { rng = Rng::derive(seed, tag); }

  Tensor<T> forward(const Tensor<T>& x) {
    if (!training || p <= 0.0) {
      mask.clear();
      return x;
    }
    Tensor<T> y = x;
    mask.assign(x.size(), 1);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (rng.uniform() < p) {
        mask[i] = 0;
        y[i] = T(0);
      } else {
        y[i] *= scale;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (mask.empty()) return gy;
    Tensor<T> gx = gy;
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = mask[i] ? gx[i] * scale : T(0);
    return gx;
  }
};

// ------------------------------------------------------------------- film

/// out[c, s] = gamma[c] * x[c, s] + beta[c]
template <class T>
Tensor<T> film_modulate(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (x.shape.empty() || gamma.size() != static_cast<std::size_t>(x.shape[0]) ||
      beta.size() != gamma.size())
    throw ConfigError("film_modulate: gamma/beta length must equal the channel count");
  const int C = x.shape[0];
  const int N = static_cast<int>(x.size()) / C;
  Tensor<T> y(x.shape);
  for (int c = 0; c < C; ++c) {
    const T g = gamma[static_cast<std::size_t>(c)], bt = beta[static_cast<std::size_t>(c)];
    const T* src = x.data() + static_cast<std::size_t>(c) * N;
    T* dst = y.data() + static_cast<std::size_t>(c) * N;
    for (int i = 0; i < N; ++i) dst[i] = g * src[i] + bt;
  }
  return y;
}

/// Gradients of film_modulate; returns gx and accumulates ggamma/gbeta.
template <class T>
Tensor<T> film_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& gy,
                        Tensor<T>& ggamma, Tensor<T>& gbeta) {
  const int C = x.shape[0];
  const int N = static_cast<int>(x.size()) / C;
  Tensor<T> gx(x.shape);
  for (int c = 0; c < C; ++c) {
    const T* xs = x.data() + static_cast<std::size_t>(c) * N;
    const T* gs = gy.data() + static_cast<std::size_t>(c) * N;
    T* dst = gx.data() + static_cast<std::size_t>(c) * N;
    T sg = T(0), sgx = T(0);
    const T g = gamma[static_cast<std::size_t>(c)];
    for (int i = 0; i < N; ++i) {
      sg += gs[i];
      sgx += gs[i] * xs[i];
      dst[i] = g * gs[i];
    }
    ggamma[static_cast<std::size_t>(c)] += sgx;
    gbeta[static_cast<std::size_t>(c)] += sg;
  }
  return gx;
}

// -------------------------------------------------- single-site attention

/// Multi-head attention where the key/value sequence is a single vector:
/// the softmax over one key is identically 1, so the query modulates
/// nothing in the forward value and receives no gradient. Kept faithful to
/// the reference wiring.
template <class T>
struct SingleSiteAttention {
  int dim = 256, heads = 8;
  Linear<T> wq, wk, wv, wo;
  Tensor<T> v_cache;  // value input (the visual vector)

  SingleSiteAttention() = default;
  SingleSiteAttention(const std::string& n, int d, int h, std::uint64_t seed)
      : dim(d),
        heads(h),
        wq(n + ".wq", d, d, seed),
        wk(n + ".wk", d, d, seed),
        wv(n + ".wv", d, d, seed),
        wo(n + ".wo", d, d, seed) {}

  /// query [dim], kv [dim] -> attended [dim]
  Tensor<T> forward(const Tensor<T>& query, const Tensor<T>& kv) {
    v_cache = kv;
    (void)wq.forward(query);  // scores feed a length-1 softmax == 1
    (void)wk.forward(kv);
    Tensor<T> v = wv.forward(kv);
    return wo.forward(v);
  }

  /// Returns gradient w.r.t. the kv input (query gradient is exactly zero).
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gv = wo.backward(gy);
    return wv.backward(gv);
  }

  void params(std::vector<ParamRef<T>>& out_list) {
    wq.params(out_list);
    wk.params(out_list);
    wv.params(out_list);
    wo.params(out_list);
  }
  std::size_t param_count() const {
    return wq.param_count() + wk.param_count() + wv.param_count() + wo.param_count();
  }
};

}  // namespace cpga::nn
