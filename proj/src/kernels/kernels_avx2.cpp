// Compiled with -mavx2 -mfma. Nothing in this file may run unless
// avx2_table() returned non-null, which checks the CPU first.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "geodistill/kernels/kernels.hpp"

namespace geodistill::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
  }
  for (; i + 4 <= n; i += 4)
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C += op(A) * B with op(A)[m,k] = A[m*sm + k*sk]. Register block of
// ROWS x 8 outputs; column tails fall back to 4-wide then scalar.
template <int ROWS>
inline void gemm_rows(std::size_t m0, std::size_t N, std::size_t K, const double* A,
                      std::size_t sm, std::size_t sk, const double* B, double* C) {
  std::size_t n = 0;
  for (; n + 8 <= N; n += 8) {
    __m256d acc[ROWS][2];
    for (int r = 0; r < ROWS; ++r) acc[r][0] = acc[r][1] = _mm256_setzero_pd();
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d b0 = _mm256_loadu_pd(B + k * N + n);
      const __m256d b1 = _mm256_loadu_pd(B + k * N + n + 4);
      for (int r = 0; r < ROWS; ++r) {
        const __m256d a = _mm256_broadcast_sd(A + (m0 + r) * sm + k * sk);
        acc[r][0] = _mm256_fmadd_pd(a, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(a, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < ROWS; ++r) {
      double* c = C + (m0 + r) * N + n;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), acc[r][0]));
      _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), acc[r][1]));
    }
  }
  for (; n + 4 <= N; n += 4) {
    __m256d acc[ROWS];
    for (int r = 0; r < ROWS; ++r) acc[r] = _mm256_setzero_pd();
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d b0 = _mm256_loadu_pd(B + k * N + n);
      for (int r = 0; r < ROWS; ++r)
        acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(A + (m0 + r) * sm + k * sk), b0, acc[r]);
    }
    for (int r = 0; r < ROWS; ++r) {
      double* c = C + (m0 + r) * N + n;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), acc[r]));
    }
  }
  for (; n < N; ++n) {
    for (int r = 0; r < ROWS; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += A[(m0 + r) * sm + k * sk] * B[k * N + n];
      C[(m0 + r) * N + n] += s;
    }
  }
}

void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t sm,
                  std::size_t sk, const double* B, double* C) {
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) gemm_rows<4>(m, N, K, A, sm, sk, B, C);
  for (; m < M; ++m) gemm_rows<1>(m, N, K, A, sm, sk, B, C);
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  gemm_strided(M, N, K, A, K, 1, B, C);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  gemm_strided(M, N, K, A, 1, M, B, C);
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t m = 0; m < M; ++m) {
    const double* a = A + m * K;
    std::size_t n = 0;
    for (; n + 4 <= N; n += 4) {
      const double* b0 = B + n * K;
      const double* b1 = b0 + K;
      const double* b2 = b1 + K;
      const double* b3 = b2 + K;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const __m256d va = _mm256_loadu_pd(a + k);
        s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + k), s0);
        s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + k), s1);
        s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + k), s2);
        s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + k), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; k < K; ++k) {
        r0 += a[k] * b0[k];
        r1 += a[k] * b1[k];
        r2 += a[k] * b2[k];
        r3 += a[k] * b3[k];
      }
      double* c = C + m * N + n;
      c[0] += r0;
      c[1] += r1;
      c[2] += r2;
      c[3] += r3;
    }
    for (; n < N; ++n) C[m * N + n] += dot(a, B + n * K, K);
  }
}

// Valid correlation with an explicit output row stride.
void xcorr_strided(const double* src, std::size_t src_w, const double* ker, std::size_t kh,
                   std::size_t kw, double* out, std::size_t out_h, std::size_t out_w,
                   std::size_t out_stride) {
  for (std::size_t a = 0; a < out_h; ++a) {
    double* o = out + a * out_stride;
    std::size_t b = 0;
    for (; b + 16 <= out_w; b += 16) {
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t i = 0; i < kh; ++i) {
        const double* row = src + (a + i) * src_w + b;
        const double* k = ker + i * kw;
        for (std::size_t j = 0; j < kw; ++j) {
          const __m256d vk = _mm256_broadcast_sd(k + j);
          s0 = _mm256_fmadd_pd(vk, _mm256_loadu_pd(row + j), s0);
          s1 = _mm256_fmadd_pd(vk, _mm256_loadu_pd(row + j + 4), s1);
          s2 = _mm256_fmadd_pd(vk, _mm256_loadu_pd(row + j + 8), s2);
          s3 = _mm256_fmadd_pd(vk, _mm256_loadu_pd(row + j + 12), s3);
        }
      }
      _mm256_storeu_pd(o + b, _mm256_add_pd(_mm256_loadu_pd(o + b), s0));
      _mm256_storeu_pd(o + b + 4, _mm256_add_pd(_mm256_loadu_pd(o + b + 4), s1));
      _mm256_storeu_pd(o + b + 8, _mm256_add_pd(_mm256_loadu_pd(o + b + 8), s2));
      _mm256_storeu_pd(o + b + 12, _mm256_add_pd(_mm256_loadu_pd(o + b + 12), s3));
    }
    for (; b + 4 <= out_w; b += 4) {
      __m256d s0 = _mm256_setzero_pd();
      for (std::size_t i = 0; i < kh; ++i) {
        const double* row = src + (a + i) * src_w + b;
        const double* k = ker + i * kw;
        for (std::size_t j = 0; j < kw; ++j)
          s0 = _mm256_fmadd_pd(_mm256_broadcast_sd(k + j), _mm256_loadu_pd(row + j), s0);
      }
      _mm256_storeu_pd(o + b, _mm256_add_pd(_mm256_loadu_pd(o + b), s0));
    }
    for (; b < out_w; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < kh; ++i) {
        const double* row = src + (a + i) * src_w + b;
        const double* k = ker + i * kw;
        for (std::size_t j = 0; j < kw; ++j) s += k[j] * row[j];
      }
      o[b] += s;
    }
  }
}

void xcorr_valid(const double* src, std::size_t /*src_h*/, std::size_t src_w, const double* ker,
                 std::size_t kh, std::size_t kw, double* out, std::size_t out_h,
                 std::size_t out_w) {
  xcorr_strided(src, src_w, ker, kh, kw, out, out_h, out_w, out_w);
}

// The scatter is a full correlation of grad with the flipped kernel, so it is
// computed as a gather over a zero-padded copy of grad.
void xcorr_scatter(const double* grad, std::size_t grad_h, std::size_t grad_w, const double* ker,
                   std::size_t kh, std::size_t kw, double* dst, std::size_t dst_h,
                   std::size_t dst_w, std::size_t row0, std::size_t col0) {
  const std::size_t full_h = grad_h + kh - 1;
  const std::size_t full_w = grad_w + kw - 1;
  if (row0 >= full_h || col0 >= full_w) return;
  const std::size_t out_h = std::min(dst_h, full_h - row0);
  const std::size_t out_w = std::min(dst_w, full_w - col0);
  const std::size_t pad_h = grad_h + 2 * (kh - 1);
  const std::size_t pad_w = grad_w + 2 * (kw - 1);

  thread_local std::vector<double> padded;
  thread_local std::vector<double> flipped;
  padded.assign(pad_h * pad_w, 0.0);
  for (std::size_t a = 0; a < grad_h; ++a)
    std::copy_n(grad + a * grad_w, grad_w, padded.data() + (a + kh - 1) * pad_w + kw - 1);
  flipped.resize(kh * kw);
  for (std::size_t i = 0; i < kh; ++i)
    for (std::size_t j = 0; j < kw; ++j)
      flipped[i * kw + j] = ker[(kh - 1 - i) * kw + (kw - 1 - j)];

  xcorr_strided(padded.data() + row0 * pad_w + col0, pad_w, flipped.data(), kh, kw, dst, out_h,
                out_w, dst_w);
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Backend::Avx2, "avx2", dot,         axpy,
                                 gemm_nn,       gemm_tn, gemm_nt,    xcorr_valid,
                                 xcorr_scatter};
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &table : nullptr;
}

}  // namespace geodistill::kernels
