#pragma once

#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "smvp/common.hpp"

namespace smvp::diff::detail {

// C[M,N] (+)= A[M,K] * B[K,N], row-major. Each output element is produced by
// exactly one thread with a fixed accumulation order, so results do not
// depend on the thread count. Wide-but-short products parallelize over
// column blocks instead of rows.
template <class T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
          bool accumulate) {
  const bool parallel = M * N * K > 16384;
  if (parallel && M < 8 && N >= 64) {
    const int64_t n_blocks = std::min<int64_t>(N / 32, 64);
    const int64_t block = (N + n_blocks - 1) / n_blocks;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t b0 = 0; b0 < N; b0 += block) {
      const int64_t b1 = std::min(N, b0 + block);
      for (int64_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        if (!accumulate)
          for (int64_t j = b0; j < b1; ++j) c[j] = T(0);
        const T* a = A + i * K;
        for (int64_t k = 0; k < K; ++k) {
          const T aik = a[k];
          if (aik == T(0)) continue;
          const T* b = B + k * N;
          for (int64_t j = b0; j < b1; ++j) c[j] += aik * b[j];
        }
      }
    }
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (int64_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    if (!accumulate)
      for (int64_t j = 0; j < N; ++j) c[j] = T(0);
    const T* a = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const T aik = a[k];
      if (aik == T(0)) continue;
      const T* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[M,N] (+)= A^T[M,K] * B[K,N] where A is stored [K,M].
template <class T>
void gemm_at(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  const bool parallel = M * N * K > 16384;
  if (parallel && M < 8 && N >= 64) {
    const int64_t n_blocks = std::min<int64_t>(N / 32, 64);
    const int64_t block = (N + n_blocks - 1) / n_blocks;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t b0 = 0; b0 < N; b0 += block) {
      const int64_t b1 = std::min(N, b0 + block);
      for (int64_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        if (!accumulate)
          for (int64_t j = b0; j < b1; ++j) c[j] = T(0);
        for (int64_t k = 0; k < K; ++k) {
          const T aik = A[k * M + i];
          if (aik == T(0)) continue;
          const T* b = B + k * N;
          for (int64_t j = b0; j < b1; ++j) c[j] += aik * b[j];
        }
      }
    }
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (int64_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    if (!accumulate)
      for (int64_t j = 0; j < N; ++j) c[j] = T(0);
    for (int64_t k = 0; k < K; ++k) {
      const T aik = A[k * M + i];
      if (aik == T(0)) continue;
      const T* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B^T[K,N] where B is stored [N,K].
template <class T>
void gemm_bt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > 16384)
#endif
  for (int64_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = accumulate ? c[j] : T(0);
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] = acc;
    }
  }
}

// Unpacks conv patches in patch-major order: src[C,H,W] ->
// cols[Ho*Wo, C*k*k]. Row-contiguous patches feed dot-product kernels.
template <class T>
void im2col_pm(const T* src, int64_t C, int64_t H, int64_t W, int64_t k,
               int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* cols) {
  const int64_t CKK = C * k * k;
  for (int64_t oy = 0; oy < Ho; ++oy) {
    for (int64_t ox = 0; ox < Wo; ++ox) {
      T* dst = cols + (oy * Wo + ox) * CKK;
      for (int64_t c = 0; c < C; ++c) {
        const T* plane = src + c * H * W;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t iy = oy * stride - pad + ky;
          for (int64_t kx = 0; kx < k; ++kx) {
            const int64_t ix = ox * stride - pad + kx;
            *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? plane[iy * W + ix]
                         : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds patch-major cols[Ho*Wo, C*k*k] back into dst[C,H,W].
template <class T>
void col2im_pm(const T* cols, int64_t C, int64_t H, int64_t W, int64_t k,
               int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* dst) {
  const int64_t CKK = C * k * k;
  for (int64_t oy = 0; oy < Ho; ++oy) {
    for (int64_t ox = 0; ox < Wo; ++ox) {
      const T* src = cols + (oy * Wo + ox) * CKK;
      for (int64_t c = 0; c < C; ++c) {
        T* plane = dst + c * H * W;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t iy = oy * stride - pad + ky;
          for (int64_t kx = 0; kx < k; ++kx, ++src) {
            const int64_t ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              plane[iy * W + ix] += *src;
          }
        }
      }
    }
  }
}

}  // namespace smvp::diff::detail
