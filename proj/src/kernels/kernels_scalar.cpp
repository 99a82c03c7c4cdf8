#include "geodistill/kernels/kernels.hpp"

namespace geodistill::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t m = 0; m < M; ++m) {
    double* c = C + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[m * K + k];
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += a * b[n];
    }
  }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t m = 0; m < M; ++m) {
    double* c = C + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[k * M + m];
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += a * b[n];
    }
  }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n) C[m * N + n] += dot(A + m * K, B + n * K, K);
}

void xcorr_valid(const double* src, std::size_t /*src_h*/, std::size_t src_w, const double* ker,
                 std::size_t kh, std::size_t kw, double* out, std::size_t out_h,
                 std::size_t out_w) {
  for (std::size_t a = 0; a < out_h; ++a) {
    for (std::size_t b = 0; b < out_w; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < kh; ++i) {
        const double* row = src + (a + i) * src_w + b;
        const double* k = ker + i * kw;
        for (std::size_t j = 0; j < kw; ++j) s += k[j] * row[j];
      }
      out[a * out_w + b] += s;
    }
  }
}

void xcorr_scatter(const double* grad, std::size_t grad_h, std::size_t grad_w, const double* ker,
                   std::size_t kh, std::size_t kw, double* dst, std::size_t dst_h,
                   std::size_t dst_w, std::size_t row0, std::size_t col0) {
  for (std::size_t a = 0; a < grad_h; ++a) {
    for (std::size_t b = 0; b < grad_w; ++b) {
      const double g = grad[a * grad_w + b];
      for (std::size_t i = 0; i < kh; ++i) {
        if (a + i < row0 || a + i >= row0 + dst_h) continue;
        double* row = dst + (a + i - row0) * dst_w;
        for (std::size_t j = 0; j < kw; ++j) {
          if (b + j < col0 || b + j >= col0 + dst_w) continue;
          row[b + j - col0] += g * ker[i * kw + j];
        }
      }
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Backend::Scalar, "scalar", dot,         axpy,
                                 gemm_nn,         gemm_tn,  gemm_nt,     xcorr_valid,
                                 xcorr_scatter};
  return table;
}

}  // namespace geodistill::kernels
