#pragma once

// Dense inner loops used by the autodiff core. Every entry has a portable
// scalar reference implementation; an AVX2+FMA variant is selected at
// runtime when the CPU supports it. The two tables must agree to rounding.

#include <cstddef>
#include <string_view>

namespace geodistill::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  Backend backend;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // C[m,n] += sum_k A[m,k] * B[k,n]; A is M x K, B is K x N, all row-major.
  void (*gemm_nn)(std::size_t M, std::size_t N, std::size_t K, const double* A,
                  const double* B, double* C);

  // C[m,n] += sum_k A[k,m] * B[k,n]; A is K x M.
  void (*gemm_tn)(std::size_t M, std::size_t N, std::size_t K, const double* A,
                  const double* B, double* C);

  // C[m,n] += sum_k A[m,k] * B[n,k]; B is N x K.
  void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K, const double* A,
                  const double* B, double* C);

  // Single-channel valid cross-correlation, accumulated:
  // out[a,b] += sum_{i<kh, j<kw} ker[i,j] * src[(a+i)*src_w + b+j]
  // for a < out_h, b < out_w. Requires out_h+kh-1 <= src_h, out_w+kw-1 <= src_w.
  void (*xcorr_valid)(const double* src, std::size_t src_h, std::size_t src_w,
                      const double* ker, std::size_t kh, std::size_t kw, double* out,
                      std::size_t out_h, std::size_t out_w);

  // Adjoint of xcorr_valid with respect to src, restricted to a window:
  // dst[(y-row0)*dst_w + x-col0] += ker[i,j] * grad[a,b] with y = a+i, x = b+j,
  // for y in [row0, row0+dst_h) and x in [col0, col0+dst_w). Contributions
  // falling outside the window are dropped.
  void (*xcorr_scatter)(const double* grad, std::size_t grad_h, std::size_t grad_w,
                        const double* ker, std::size_t kh, std::size_t kw, double* dst,
                        std::size_t dst_h, std::size_t dst_w, std::size_t row0,
                        std::size_t col0);
};

const KernelTable& scalar_table();

// Null when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

// The table used by the numerics core. Chosen once on first use: AVX2 when
// available, unless GEODISTILL_KERNELS=scalar is set in the environment.
const KernelTable& active();

// Overrides the runtime choice (tests and benchmarks). Throws InvalidArgument
// when the requested backend is unavailable.
void set_backend(Backend b);

Backend default_backend();
std::string_view backend_name(Backend b);

}  // namespace geodistill::kernels
