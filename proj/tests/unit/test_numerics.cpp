#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "geodistill/error.hpp"
#include "geodistill/numerics/adam.hpp"
#include "geodistill/numerics/gdtn.hpp"
#include "geodistill/numerics/grad_check.hpp"
#include "geodistill/numerics/ops.hpp"
#include "geodistill/numerics/param_store.hpp"

namespace geodistill::nx {
namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor probs(std::initializer_list<double> v) {
  return Tensor(Shape{v.size()}, std::vector<double>(v));
}

// Weighted sum with fixed random weights turns any tensor into a scalar loss
// whose gradient exercises every output element.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape())));
}

TEST(SoftmaxTemp, Examples) {
  const double ln3 = std::log(3.0);
  auto p1 = softmax_temp(probs({0.0, ln3}), 1.0);
  EXPECT_NEAR(p1.at(0), 0.25, 1e-15);
  EXPECT_NEAR(p1.at(1), 0.75, 1e-15);
  auto p2 = softmax_temp(probs({0.0, ln3}), 0.5);
  EXPECT_NEAR(p2.at(0), 0.1, 1e-15);
  EXPECT_NEAR(p2.at(1), 0.9, 1e-15);
  auto u = softmax_temp(Tensor(Shape{4, 4}, 3.7), 0.06);
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 16.0);
  EXPECT_EQ(u.shape(), (Shape{4, 4}));
}

TEST(SoftmaxTemp, Errors) {
  EXPECT_THROW(softmax_temp(probs({0.0, 1.0}), 0.0), InvalidArgument);
  EXPECT_THROW(softmax_temp(probs({0.0, 1.0}), -1.0), InvalidArgument);
  EXPECT_THROW(softmax_temp(probs({0.0, std::nan("")}), 1.0), NumericError);
  EXPECT_THROW(softmax_temp(probs({0.0, INFINITY}), 1.0), NumericError);
}

TEST(CrossEntropy, Examples) {
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(cross_entropy(probs({0.5, 0.5}), probs({0.5, 0.5})).item(), ln2, 1e-15);
  EXPECT_NEAR(cross_entropy(probs({0.9, 0.1}), probs({0.5, 0.5})).item(), ln2, 1e-15);
  EXPECT_NEAR(cross_entropy(probs({0.0, 1.0, 0.0}), probs({0.2, 0.3, 0.5})).item(),
              -std::log(0.3), 1e-15);
  EXPECT_THROW(cross_entropy(probs({0.5, 0.5}), probs({0.2, 0.3, 0.5})), InvalidArgument);
}

TEST(KlDivergence, Examples) {
  EXPECT_NEAR(kl_divergence(probs({0.3, 0.7}), probs({0.3, 0.7})).item(), 0.0, 1e-15);
  EXPECT_NEAR(kl_divergence(probs({0.0, 1.0, 0.0}), probs({0.2, 0.3, 0.5})).item(),
              -std::log(0.3), 1e-15);
  EXPECT_NEAR(kl_divergence(probs({0.75, 0.25}), probs({0.25, 0.75})).item(),
              0.5 * std::log(3.0), 1e-15);
  EXPECT_NEAR(0.5 * std::log(3.0), 0.549306, 1e-6);
  EXPECT_THROW(kl_divergence(probs({1.0}), probs({0.5, 0.5})), InvalidArgument);
}

TEST(DistributionProperties, RandomHeatmaps) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> log_tau(std::log(1e-3), std::log(1e3));
  for (int trial = 0; trial < 100; ++trial) {
    Tensor z = random_tensor(rng, {8, 8}, -3.0, 3.0);
    const double tau = std::exp(log_tau(rng));
    Tensor p = softmax_temp(z, tau);
    const double s = std::accumulate(p.values().begin(), p.values().end(), 0.0);
    EXPECT_NEAR(s, 1.0, 1e-9);
    const auto zarg = std::max_element(z.values().begin(), z.values().end()) - z.values().begin();
    const auto parg = std::max_element(p.values().begin(), p.values().end()) - p.values().begin();
    EXPECT_EQ(zarg, parg);
    // Entropy grows with temperature.
    const double t1 = 0.2 + 0.5 * (trial % 5), t2 = t1 * 1.5;
    EXPECT_LT(entropy(softmax_temp(z, t1)), entropy(softmax_temp(z, t2)));
    // CE = KL + H, KL >= 0.
    Tensor q = softmax_temp(random_tensor(rng, {8, 8}, -3.0, 3.0), 1.0);
    Tensor t = softmax_temp(z, 1.0);
    const double ce = cross_entropy(t, q).item();
    const double kl = kl_divergence(t, q).item();
    EXPECT_NEAR(ce, kl + entropy(t), 1e-9);
    EXPECT_GE(kl, 0.0);
  }
}

TEST(GradCheck, Examples) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(rng, {5, 3});
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x), 1e-7);

  Tensor logits = random_tensor(rng, {16}, -2.0, 2.0);
  Tensor target = softmax_temp(random_tensor(rng, {16}), 1.0);
  EXPECT_LT(grad_check([&](const Tensor& t) { return cross_entropy(target, softmax_temp(t, 0.5)); },
                       logits),
            1e-4);
}

// Every differentiable primitive passes a finite-difference check over ten seeds.
TEST(GradCheck, Primitives) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = random_tensor(rng, {2, 3, 4});
    Tensor b = random_tensor(rng, {2, 3, 4});
    auto ws = [seed](const Tensor& y) { return weighted_sum(y, seed + 100); };

    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(add(t, b)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(sub(b, t)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(mul(t, b)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(mul(t, t)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(scale(t, -1.7)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(relu(t)); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(reshape(t, {6, 4})); }, a), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return mean(mul(t, t)); }, a), 1e-4);

    Tensor m1 = random_tensor(rng, {3, 5}), m2 = random_tensor(rng, {5, 4});
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(matmul(t, m2)); }, m1), 1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(matmul(m1, t)); }, m2), 1e-4);

    Tensor img = random_tensor(rng, {3, 9, 8});
    Tensor w = random_tensor(rng, {4, 3, 3, 3});
    Tensor bias = random_tensor(rng, {4});
    for (std::size_t stride : {1u, 2u}) {
      EXPECT_LT(grad_check([&](const Tensor& t) { return ws(conv2d(t, w, bias, stride, 1)); }, img),
                1e-4);
      EXPECT_LT(grad_check([&](const Tensor& t) { return ws(conv2d(img, t, bias, stride, 1)); }, w),
                1e-4);
      EXPECT_LT(grad_check([&](const Tensor& t) { return ws(conv2d(img, w, t, stride, 0)); }, bias),
                1e-4);
    }
    Tensor even = random_tensor(rng, {2, 4, 6});
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(avg_pool2(t)); }, even), 1e-4);
    Tensor other = random_tensor(rng, {3, 4, 6});
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(concat_channels(t, other)); }, even),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(concat_channels(other, t)); }, even),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(spatial_mean(t)); }, even), 1e-4);

    std::uniform_real_distribution<double> ux(-3.0, 9.0), uy(-1.0, 5.0);
    std::vector<double> xs(15), ys(15);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xs[i] = ux(rng);
      ys[i] = uy(rng);
    }
    SampleGrid grid(4, 6, 3, 5, xs, ys, seed % 2 == 0);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(grid_sample(t, grid)); }, even), 1e-4);

    Tensor logits = random_tensor(rng, {4, 4}, -2.0, 2.0);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(softmax_temp(t, 0.3)); }, logits), 1e-4);
    Tensor target = softmax_temp(random_tensor(rng, {4, 4}), 1.0);
    EXPECT_LT(grad_check([&](const Tensor& t) { return cross_entropy(target, softmax_temp(t, 0.7)); },
                         logits),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return kl_divergence(target, softmax_temp(t, 0.7)); },
                         logits),
              1e-4);

    Tensor tmpl = random_tensor(rng, {2, 3, 4});
    Tensor image = random_tensor(rng, {2, 6, 7});
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(normalized_xcorr(t, image, 1, 2)); }, tmpl),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(normalized_xcorr(tmpl, t, 1, 2)); }, image),
              1e-4);
    std::vector<std::uint8_t> valid(12, 1);
    valid[seed % 12] = 0;
    valid[(seed * 5 + 3) % 12] = 0;
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(normalized_xcorr(t, image, 1, 2, valid)); }, tmpl),
              1e-4);
    EXPECT_LT(grad_check([&](const Tensor& t) { return ws(normalized_xcorr(tmpl, t, 1, 2, valid)); }, image),
              1e-4);
  }
}

// Direct per-placement evaluation of the zero-padded normalized correlation.
// Template cells with valid[i*w+j] == 0 take no part anywhere.
std::vector<double> ncc_oracle(const Tensor& tmpl, const Tensor& image, std::size_t ar,
                               std::size_t ac, const std::vector<std::uint8_t>& valid = {}) {
  const std::size_t C = tmpl.dim(0), h = tmpl.dim(1), w = tmpl.dim(2);
  const std::size_t H = image.dim(1), W = image.dim(2);
  auto keep = [&](std::size_t i, std::size_t j) { return valid.empty() || valid[i * w + j]; };
  std::vector<double> t;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        if (keep(i, j)) t.push_back(tmpl.values()[(c * h + i) * w + j]);
  const std::size_t N = t.size();
  const double tm = std::accumulate(t.begin(), t.end(), 0.0) / N;
  double tn = 0.0;
  for (double v : t) tn += (v - tm) * (v - tm);
  tn = std::sqrt(tn + kNccEps);
  std::vector<double> out(H * W);
  for (std::size_t a = 0; a < H; ++a)
    for (std::size_t b = 0; b < W; ++b) {
      std::vector<double> win;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            if (!keep(i, j)) continue;
            const long y = static_cast<long>(a + i) - static_cast<long>(ar);
            const long x = static_cast<long>(b + j) - static_cast<long>(ac);
            const bool in = y >= 0 && y < static_cast<long>(H) && x >= 0 && x < static_cast<long>(W);
            win.push_back(in ? image.values()[(c * H + y) * W + x] : 0.0);
          }
      const double wm = std::accumulate(win.begin(), win.end(), 0.0) / N;
      double num = 0.0, wv = 0.0;
      for (std::size_t k = 0; k < N; ++k) {
        num += (t[k] - tm) / tn * (win[k] - wm);
        wv += (win[k] - wm) * (win[k] - wm);
      }
      out[a * W + b] = num / std::sqrt(wv + kNccEps);
    }
  return out;
}

TEST(NormalizedXcorr, MatchesDirectEvaluation) {
  std::mt19937_64 rng(11);
  Tensor tmpl = random_tensor(rng, {3, 4, 5});
  Tensor image = random_tensor(rng, {3, 9, 10});
  Tensor got = normalized_xcorr(tmpl, image, 2, 2);
  auto want = ncc_oracle(tmpl, image, 2, 2);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.at(i), want[i], 1e-12);
  for (double v : got.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(NormalizedXcorr, MaskedMatchesDirectEvaluation) {
  std::mt19937_64 rng(12);
  Tensor tmpl = random_tensor(rng, {3, 4, 5});
  Tensor image = random_tensor(rng, {3, 9, 10});
  std::vector<std::uint8_t> valid(20, 1);
  for (std::size_t k : {0, 1, 5, 6, 13, 19}) valid[k] = 0;
  Tensor got = normalized_xcorr(tmpl, image, 2, 2, valid);
  auto want = ncc_oracle(tmpl, image, 2, 2, valid);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.at(i), want[i], 1e-12);

  // Values under masked cells are irrelevant; an all-ones mask is the plain op.
  Tensor scrambled = tmpl.clone();
  for (std::size_t c = 0; c < 3; ++c) scrambled.mutable_values()[c * 20 + 13] = 1e3;
  Tensor again = normalized_xcorr(scrambled, image, 2, 2, valid);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(again.at(i), got.at(i), 1e-12);
  Tensor plain = normalized_xcorr(tmpl, image, 2, 2);
  Tensor ones = normalized_xcorr(tmpl, image, 2, 2, std::vector<std::uint8_t>(20, 1));
  EXPECT_EQ(std::vector<double>(plain.values().begin(), plain.values().end()),
            std::vector<double>(ones.values().begin(), ones.values().end()));
  EXPECT_THROW(normalized_xcorr(tmpl, image, 2, 2, std::vector<std::uint8_t>(19, 1)), InvalidArgument);
}

TEST(NormalizedXcorr, ConstantInputsGiveConstantMap) {
  Tensor out = normalized_xcorr(Tensor({2, 4, 4}, 0.5), Tensor({2, 8, 8}, 0.3), 2, 2);
  for (double v : out.values()) EXPECT_EQ(v, out.at(0));
}

TEST(Tape, NoGradGuardRecordsNothing) {
  Tensor p = Tensor::parameter({3}, {1.0, 2.0, 3.0});
  {
    NoGradGuard g;
    Tensor y = sum(mul(p, p));
    EXPECT_FALSE(y.requires_grad());
  }
  Tensor y = sum(mul(p, p));
  EXPECT_TRUE(y.requires_grad());
  backward(y);
  EXPECT_DOUBLE_EQ(p.grad()[2], 6.0);
}

TEST(Tape, NonFiniteForwardIsAnError) {
  Tensor big({2}, std::vector<double>{1e300, 1e300});
  EXPECT_THROW(mul(big, big), NumericError);
}

TEST(Gdtn, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape;
    const int rank = trial % 4;
    for (int r = 0; r < rank; ++r) shape.push_back(1 + rng() % 5);
    Tensor t = random_tensor(rng, shape, -1e10, 1e10);
    auto bytes = encode_gdtn(t);
    Tensor back = decode_gdtn(bytes);
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_EQ(encode_gdtn(back), bytes);
  }
  Tensor t({2, 1}, std::vector<double>{1.5, -2.0});
  auto bytes = encode_gdtn(t);
  ASSERT_EQ(bytes.size(), 4u + 8u * 3u + 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GDTN");
  EXPECT_EQ(bytes[4], 2);  // rank, little-endian
  bytes.pop_back();
  EXPECT_THROW(decode_gdtn(bytes), InvalidArgument);
  bytes[0] = 'X';
  EXPECT_THROW(decode_gdtn(bytes), InvalidArgument);
}

TEST(ParamStoreTest, CompatibilityAndClone) {
  ParamStore a;
  a.add("w", {2, 2}, {1, 2, 3, 4});
  a.add("b", {2}, {0, 0});
  ParamStore b = a.clone();
  EXPECT_TRUE(a.compatible(b));
  EXPECT_EQ(ParamStore::max_abs_diff(a, b), 0.0);
  b.at("w").mutable_values()[0] = 10.0;
  EXPECT_EQ(a.at("w").at(0), 1.0);
  EXPECT_EQ(ParamStore::max_abs_diff(a, b), 9.0);
  ParamStore c;
  c.add("w", {4}, {1, 2, 3, 4});
  c.add("b", {2}, {0, 0});
  EXPECT_FALSE(a.compatible(c));
  EXPECT_THROW(a.add("w", {1}, {0}), InvalidArgument);
}

TEST(AdamTest, MinimizesQuadratic) {
  ParamStore s;
  s.add("x", {2}, {3.0, -2.0});
  Adam opt(s, {.lr = 0.1});
  for (int i = 0; i < 500; ++i) {
    s.zero_grad();
    backward(sum(mul(s.at("x"), s.at("x"))));
    opt.step(s);
  }
  EXPECT_NEAR(s.at("x").at(0), 0.0, 1e-2);
  EXPECT_NEAR(s.at("x").at(1), 0.0, 1e-2);
  // First step moves each coordinate by lr in the direction of -sign(grad).
  ParamStore t;
  t.add("x", {1}, {1.0});
  Adam one(t, {.lr = 0.01});
  backward(sum(mul(t.at("x"), t.at("x"))));
  one.step(t);
  EXPECT_NEAR(t.at("x").at(0), 0.99, 1e-9);
}

}  // namespace
}  // namespace geodistill::nx
