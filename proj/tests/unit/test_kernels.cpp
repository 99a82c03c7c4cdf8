// Scalar and AVX2 kernel tables must agree to rounding on random inputs,
// including shapes that exercise every vector tail path.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "geodistill/kernels/kernels.hpp"

namespace geodistill::kernels {
namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return worst;
}

class KernelEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    simd_ = avx2_table();
    if (simd_ == nullptr) GTEST_SKIP() << "AVX2 not available";
  }
  const KernelTable& ref_ = scalar_table();
  const KernelTable* simd_ = nullptr;
  std::mt19937_64 rng_{1234};
};

TEST_F(KernelEquivalence, DotAndAxpy) {
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 17u, 33u, 1000u}) {
    auto a = random_vec(rng_, n), b = random_vec(rng_, n);
    EXPECT_NEAR(ref_.dot(a.data(), b.data(), n), simd_->dot(a.data(), b.data(), n), 1e-12);
    auto y1 = random_vec(rng_, n);
    auto y2 = y1;
    ref_.axpy(0.37, a.data(), y1.data(), n);
    simd_->axpy(0.37, a.data(), y2.data(), n);
    EXPECT_LT(max_rel_diff(y1, y2), 1e-14);
  }
}

TEST_F(KernelEquivalence, GemmVariants) {
  for (auto [M, N, K] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {4, 8, 3}, {5, 13, 7}, {16, 4096, 27}, {3, 11, 144}, {16, 144, 1024}}) {
    auto A = random_vec(rng_, M * K), B = random_vec(rng_, K * N);
    auto C1 = random_vec(rng_, M * N);
    auto C2 = C1;
    ref_.gemm_nn(M, N, K, A.data(), B.data(), C1.data());
    simd_->gemm_nn(M, N, K, A.data(), B.data(), C2.data());
    EXPECT_LT(max_rel_diff(C1, C2), 1e-12) << "nn " << M << "x" << N << "x" << K;

    auto At = random_vec(rng_, K * M);
    C2 = C1;
    ref_.gemm_tn(M, N, K, At.data(), B.data(), C1.data());
    simd_->gemm_tn(M, N, K, At.data(), B.data(), C2.data());
    EXPECT_LT(max_rel_diff(C1, C2), 1e-12) << "tn";

    auto Bt = random_vec(rng_, N * K);
    C2 = C1;
    ref_.gemm_nt(M, N, K, A.data(), Bt.data(), C1.data());
    simd_->gemm_nt(M, N, K, A.data(), Bt.data(), C2.data());
    EXPECT_LT(max_rel_diff(C1, C2), 1e-12) << "nt";
  }
}

TEST_F(KernelEquivalence, CorrelationAndScatter) {
  for (auto [oh, ow, kh, kw] : std::vector<std::array<std::size_t, 4>>{
           {1, 1, 1, 1}, {5, 7, 3, 2}, {8, 21, 4, 5}, {64, 64, 32, 32}, {32, 32, 64, 64}}) {
    const std::size_t sh = oh + kh - 1, sw = ow + kw - 1;
    auto src = random_vec(rng_, sh * sw), ker = random_vec(rng_, kh * kw);
    auto o1 = random_vec(rng_, oh * ow);
    auto o2 = o1;
    ref_.xcorr_valid(src.data(), sh, sw, ker.data(), kh, kw, o1.data(), oh, ow);
    simd_->xcorr_valid(src.data(), sh, sw, ker.data(), kh, kw, o2.data(), oh, ow);
    EXPECT_LT(max_rel_diff(o1, o2), 1e-12) << "xcorr " << oh << "x" << ow;

    auto grad = random_vec(rng_, oh * ow);
    auto d1 = random_vec(rng_, sh * sw);
    auto d2 = d1;
    ref_.xcorr_scatter(grad.data(), oh, ow, ker.data(), kh, kw, d1.data(), sh, sw, 0, 0);
    simd_->xcorr_scatter(grad.data(), oh, ow, ker.data(), kh, kw, d2.data(), sh, sw, 0, 0);
    EXPECT_LT(max_rel_diff(d1, d2), 1e-12) << "scatter " << oh << "x" << ow;

    // Interior window, as used by the normalized correlation backward pass.
    const std::size_t r0 = kh / 2, c0 = kw / 3;
    auto w1 = random_vec(rng_, oh * ow);
    auto w2 = w1;
    ref_.xcorr_scatter(grad.data(), oh, ow, ker.data(), kh, kw, w1.data(), oh, ow, r0, c0);
    simd_->xcorr_scatter(grad.data(), oh, ow, ker.data(), kh, kw, w2.data(), oh, ow, r0, c0);
    EXPECT_LT(max_rel_diff(w1, w2), 1e-12) << "window scatter " << oh << "x" << ow;
  }
}

// The scatter is the adjoint of the correlation: <xcorr(s, k), g> == <s, scatter(g, k)>.
TEST(KernelScalar, ScatterIsAdjointOfCorrelation) {
  std::mt19937_64 rng(99);
  const std::size_t oh = 6, ow = 9, kh = 3, kw = 4, sh = oh + kh - 1, sw = ow + kw - 1;
  auto src = random_vec(rng, sh * sw), ker = random_vec(rng, kh * kw), g = random_vec(rng, oh * ow);
  const auto& k = scalar_table();
  std::vector<double> out(oh * ow, 0.0), back(sh * sw, 0.0);
  k.xcorr_valid(src.data(), sh, sw, ker.data(), kh, kw, out.data(), oh, ow);
  k.xcorr_scatter(g.data(), oh, ow, ker.data(), kh, kw, back.data(), sh, sw, 0, 0);
  EXPECT_NEAR(k.dot(out.data(), g.data(), out.size()), k.dot(src.data(), back.data(), src.size()),
              1e-12);
}

TEST(KernelDispatch, ScalarAlwaysSelectable) {
  const Backend before = active().backend;
  set_backend(Backend::Scalar);
  EXPECT_EQ(active().backend, Backend::Scalar);
  if (avx2_table() != nullptr) {
    set_backend(Backend::Avx2);
    EXPECT_EQ(active().backend, Backend::Avx2);
  } else {
    EXPECT_ANY_THROW(set_backend(Backend::Avx2));
  }
  set_backend(before);
}

}  // namespace
}  // namespace geodistill::kernels
