#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <vector>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

#include "cpga/common.hpp"

namespace cpga {

/// Dense row-major tensor. Shapes are small, data can be large.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  std::size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  /// Reshape; contents are unspecified afterwards (kept when the shape is
  /// unchanged, zeroed when storage is reallocated).
  void resize(std::vector<int> s) {
    if (s == shape && v.size() == count(s)) return;
    shape = std::move(s);
    v.assign(count(shape), T(0));
  }

  T& operator[](std::size_t i) { return v[i]; }
  const T& operator[](std::size_t i) const { return v[i]; }
};

namespace detail {

// Panel-packed single-precision GEMM. A is MxK row-major, B is KxN
// row-major, C is MxN row-major; C = A*B (+C when accumulate).
//
// The microkernel works on an 8xNR tile with NR = 32 (AVX-512) or
// 16 (AVX2); B is consumed through a k-major packed panel so the inner
// loop is pure loads + broadcasts + FMAs.

inline constexpr int kGemmMR = 12;

#if defined(__AVX512F__)
inline constexpr int kGemmNR = 32;

inline void micro_f32(int kc, const float* apack, const float* bpanel, float* c, int ldc, int mr,
                      int nr, bool accumulate) {
  __m512 acc[kGemmMR][2];
  for (int i = 0; i < kGemmMR; ++i) {
    acc[i][0] = _mm512_setzero_ps();
    acc[i][1] = _mm512_setzero_ps();
  }
  for (int k = 0; k < kc; ++k) {
    const __m512 b0 = _mm512_loadu_ps(bpanel + k * kGemmNR);
    const __m512 b1 = _mm512_loadu_ps(bpanel + k * kGemmNR + 16);
    const float* arow = apack + k * kGemmMR;
    for (int i = 0; i < kGemmMR; ++i) {
      const __m512 a = _mm512_set1_ps(arow[i]);
      acc[i][0] = _mm512_fmadd_ps(a, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_ps(a, b1, acc[i][1]);
    }
  }
  alignas(64) float tmp[kGemmNR];
  for (int i = 0; i < mr; ++i) {
    _mm512_store_ps(tmp, acc[i][0]);
    _mm512_store_ps(tmp + 16, acc[i][1]);
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (accumulate) {
      for (int j = 0; j < nr; ++j) crow[j] += tmp[j];
    } else {
      for (int j = 0; j < nr; ++j) crow[j] = tmp[j];
    }
  }
}
#elif defined(__AVX2__)
inline constexpr int kGemmNR = 16;

inline void micro_f32(int kc, const float* apack, const float* bpanel, float* c, int ldc, int mr,
                      int nr, bool accumulate) {
  __m256 acc[kGemmMR][2];
  for (int i = 0; i < kGemmMR; ++i) {
    acc[i][0] = _mm256_setzero_ps();
    acc[i][1] = _mm256_setzero_ps();
  }
  for (int k = 0; k < kc; ++k) {
    const __m256 b0 = _mm256_loadu_ps(bpanel + k * kGemmNR);
    const __m256 b1 = _mm256_loadu_ps(bpanel + k * kGemmNR + 8);
    const float* arow = apack + k * kGemmMR;
    for (int i = 0; i < kGemmMR; ++i) {
      const __m256 a = _mm256_set1_ps(arow[i]);
      acc[i][0] = _mm256_fmadd_ps(a, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_ps(a, b1, acc[i][1]);
    }
  }
  alignas(32) float tmp[kGemmNR];
  for (int i = 0; i < mr; ++i) {
    _mm256_store_ps(tmp, acc[i][0]);
    _mm256_store_ps(tmp + 8, acc[i][1]);
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (accumulate) {
      for (int j = 0; j < nr; ++j) crow[j] += tmp[j];
    } else {
      for (int j = 0; j < nr; ++j) crow[j] = tmp[j];
    }
  }
}
#else
inline constexpr int kGemmNR = 16;

inline void micro_f32(int kc, const float* apack, const float* bpanel, float* c, int ldc, int mr,
                      int nr, bool accumulate) {
  float acc[kGemmMR][kGemmNR] = {};
  for (int k = 0; k < kc; ++k) {
    const float* brow = bpanel + k * kGemmNR;
    const float* arow = apack + k * kGemmMR;
    for (int i = 0; i < mr; ++i) {
      const float a = arow[i];
      for (int j = 0; j < nr; ++j) acc[i][j] += a * brow[j];
    }
  }
  for (int i = 0; i < mr; ++i) {
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (accumulate) {
      for (int j = 0; j < nr; ++j) crow[j] += acc[i][j];
    } else {
      for (int j = 0; j < nr; ++j) crow[j] = acc[i][j];
    }
  }
}
#endif

inline void pack_b_f32(const float* b, int ldb, int k0, int kc, int n0, int nr, float* bpanel) {
  for (int k = 0; k < kc; ++k) {
    const float* src = b + static_cast<std::ptrdiff_t>(k0 + k) * ldb + n0;
    float* dst = bpanel + k * kGemmNR;
    int j = 0;
    for (; j < nr; ++j) dst[j] = src[j];
    for (; j < kGemmNR; ++j) dst[j] = 0.0f;
  }
}

// B supplied transposed: bt is N x K row-major, panel still k-major.
inline void pack_bt_f32(const float* bt, int ldbt, int k0, int kc, int n0, int nr, float* bpanel) {
  for (int k = 0; k < kc; ++k) {
    float* dst = bpanel + k * kGemmNR;
    int j = 0;
    for (; j < nr; ++j) dst[j] = bt[static_cast<std::ptrdiff_t>(n0 + j) * ldbt + (k0 + k)];
    for (; j < kGemmNR; ++j) dst[j] = 0.0f;
  }
}

}  // namespace detail

/// Weights packed once per call; layout [mblock][k][kGemmMR].
struct GemmPackedA {
  std::vector<float> data;
  int m = 0, k = 0;
};

inline void gemm_pack_a(int m, int k, const float* a, int lda, GemmPackedA& out,
                        bool transpose_a = false) {
  using detail::kGemmMR;
  const int mblocks = (m + kGemmMR - 1) / kGemmMR;
  out.m = m;
  out.k = k;
  out.data.assign(static_cast<std::size_t>(mblocks) * k * kGemmMR, 0.0f);
  for (int mb = 0; mb < mblocks; ++mb) {
    const int m0 = mb * kGemmMR;
    const int mr = std::min(kGemmMR, m - m0);
    float* dst = out.data.data() + static_cast<std::size_t>(mb) * k * kGemmMR;
    for (int kk = 0; kk < k; ++kk) {
      for (int i = 0; i < mr; ++i) {
        dst[kk * kGemmMR + i] =
            transpose_a ? a[static_cast<std::ptrdiff_t>(kk) * lda + (m0 + i)]
                        : a[static_cast<std::ptrdiff_t>(m0 + i) * lda + kk];
      }
    }
  }
}

/// C[m,n] = Apacked * B[k,n] (+C when accumulating). When transpose_b is
/// set, b points at the N x K row-major transpose instead.
inline void gemm_f32_packed(const GemmPackedA& ap, int n, const float* b, int ldb, float* c,
                            int ldc, bool accumulate = false, bool transpose_b = false) {
  using namespace detail;
  const int m = ap.m, k = ap.k;
  constexpr int KC = 192;  // B panel chunk stays L1-resident across M blocks
  const int ntiles = (n + kGemmNR - 1) / kGemmNR;
  const int mblocks = (m + kGemmMR - 1) / kGemmMR;

  parallel_for(ntiles, [&](std::int64_t t0, std::int64_t t1) {
    std::vector<float> bpanel(static_cast<std::size_t>(KC) * kGemmNR);
    for (std::int64_t t = t0; t < t1; ++t) {
      const int n0 = static_cast<int>(t) * kGemmNR;
      const int nr = std::min(kGemmNR, n - n0);
      for (int k0 = 0; k0 < k; k0 += KC) {
        const int kc = std::min(KC, k - k0);
        if (transpose_b) {
          pack_bt_f32(b, ldb, k0, kc, n0, nr, bpanel.data());
        } else {
          pack_b_f32(b, ldb, k0, kc, n0, nr, bpanel.data());
        }
        const bool acc = accumulate || k0 > 0;
        for (int mb = 0; mb < mblocks; ++mb) {
          const int m0 = mb * kGemmMR;
          const int mr = std::min(kGemmMR, m - m0);
          micro_f32(kc,
                    ap.data.data() + (static_cast<std::size_t>(mb) * k + k0) * kGemmMR,
                    bpanel.data(), c + static_cast<std::ptrdiff_t>(m0) * ldc + n0, ldc, mr, nr,
                    acc);
        }
      }
    }
  });
}

/// C[m,n] = A[m,k] * B[k,n], row-major, optionally accumulating into C.
inline void gemm_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                     float* c, int ldc, bool accumulate = false) {
  GemmPackedA ap;
  gemm_pack_a(m, k, a, lda, ap);
  gemm_f32_packed(ap, n, b, ldb, c, ldc, accumulate);
}

/// General matrix multiply with optional transposes:
/// C[m,n] = op(A) * op(B), fast path for float, straightforward loops for
/// other scalar types (used by the double-precision gradient checks).
template <class T>
void matmul(int m, int n, int k, const T* a, int lda, bool trans_a, const T* b, int ldb,
            bool trans_b, T* c, int ldc, bool accumulate = false) {
  if constexpr (std::is_same_v<T, float>) {
    GemmPackedA ap;
    gemm_pack_a(m, k, a, lda, ap, trans_a);
    gemm_f32_packed(ap, n, b, ldb, c, ldc, accumulate, trans_b);
  } else {
    auto A = [&](int i, int p) { return trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                                                : a[static_cast<std::ptrdiff_t>(i) * lda + p]; };
    auto B = [&](int p, int j) { return trans_b ? b[static_cast<std::ptrdiff_t>(j) * ldb + p]
                                                : b[static_cast<std::ptrdiff_t>(p) * ldb + j]; };
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) {
        for (int j = 0; j < n; ++j) {
          T acc = accumulate ? c[i * ldc + j] : T(0);
          for (int p = 0; p < k; ++p) acc += A(static_cast<int>(i), p) * B(p, j);
          c[i * ldc + j] = acc;
        }
      }
    });
  }
}

/// Generic fallback (used for double-precision gradient checking).
template <class T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate = false) {
  if constexpr (std::is_same_v<T, float>) {
    gemm_f32(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
      std::vector<T> row(static_cast<std::size_t>(n));
      for (std::int64_t i = i0; i < i1; ++i) {
        if (accumulate) {
          std::memcpy(row.data(), c + i * ldc, sizeof(T) * static_cast<std::size_t>(n));
        } else {
          std::fill(row.begin(), row.end(), T(0));
        }
        for (int p = 0; p < k; ++p) {
          const T av = a[i * lda + p];
          if (av == T(0)) continue;
          const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
          for (int j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * brow[j];
        }
        std::memcpy(c + i * ldc, row.data(), sizeof(T) * static_cast<std::size_t>(n));
      }
    });
  }
}

}  // namespace cpga
