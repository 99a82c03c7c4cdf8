#include "geodistill/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "geodistill/error.hpp"
#include "geodistill/kernels/kernels.hpp"

namespace geodistill::nx {

using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank)
    throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_str(a.shape()));
}

std::vector<double> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Integral image with a zero first row/column: I[(y+1)*(W+1) + x+1] = sum over [0,y]x[0,x].
std::vector<double> integral(const std::vector<double>& m, std::size_t H, std::size_t W) {
  std::vector<double> I((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < W; ++x) {
      row += m[y * W + x];
      I[(y + 1) * (W + 1) + x + 1] = I[y * (W + 1) + x + 1] + row;
    }
  }
  return I;
}

// Sum of m over rows [y0, y1) and cols [x0, x1) from its integral image.
inline double box(const std::vector<double>& I, std::size_t W, std::size_t y0, std::size_t y1,
                  std::size_t x0, std::size_t x1) {
  const std::size_t s = W + 1;
  return I[y1 * s + x1] - I[y0 * s + x1] - I[y1 * s + x0] + I[y0 * s + x0];
}

// Output columns [lo, hi) read input columns inside [0, W) for tap offset j.
void valid_cols(std::size_t W, std::size_t Wo, std::size_t stride, std::size_t pad, std::size_t j,
                std::size_t& lo, std::size_t& hi) {
  lo = 0;
  while (lo < Wo && lo * stride + j < pad) ++lo;
  hi = lo;
  while (hi < Wo && hi * stride + j < W + pad) ++hi;
}

void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            double* cols) {
  const std::size_t n = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols + ((c * kh + i) * kw + j) * n;
        std::size_t lo, hi;
        valid_cols(W, Wo, stride, pad, j, lo, hi);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                   static_cast<std::ptrdiff_t>(pad);
          double* out = row + oy * Wo;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + static_cast<std::size_t>(y)) * W + j - pad;
          std::fill(out, out + lo, 0.0);
          if (stride == 1) {
            std::copy(src + lo, src + hi, out + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[ox * stride];
          }
          std::fill(out + hi, out + Wo, 0.0);
        }
      }
}

void col2im(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            double* dx) {
  const std::size_t n = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const double* row = cols + ((c * kh + i) * kw + j) * n;
        std::size_t lo, hi;
        valid_cols(W, Wo, stride, pad, j, lo, hi);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                   static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
          double* dst = dx + (c * H + static_cast<std::size_t>(y)) * W + j - pad;
          const double* src = row + oy * Wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
}

void check_distribution(const char* op, const Tensor& p) {
  double s = 0.0;
  for (double v : p.values()) {
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidArgument(std::string(op) + ": not a probability map");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6)
    throw InvalidArgument(std::string(op) + ": probabilities sum to " + std::to_string(s));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) kernels::active().axpy(1.0, self.grad.data(), p->grad.data(), self.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& k = kernels::active();
    if (self.parents[0]->requires_grad)
      k.axpy(1.0, self.grad.data(), self.parents[0]->grad.data(), self.grad.size());
    if (self.parents[1]->requires_grad)
      k.axpy(-1.0, self.grad.data(), self.parents[1]->grad.data(), self.grad.size());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.values[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](Node& self) {
    kernels::active().axpy(s, self.grad.data(), self.parents[0]->grad.data(), self.grad.size());
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw InvalidArgument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_result("reshape", std::move(shape), copy_values(a), {a}, [](Node& self) {
    kernels::active().axpy(1.0, self.grad.data(), self.parents[0]->grad.data(), self.grad.size());
  });
}

Tensor sum(const Tensor& a) {
  const double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  return make_result("sum", Shape{1}, {s}, {a}, [](Node& self) {
    for (double& g : self.parents[0]->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw InvalidArgument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw InvalidArgument("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  kernels::active().gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data());
  return make_result("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& kt = kernels::active();
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kt.gemm_nt(m, k, n, self.grad.data(), pb.values.data(), pa.grad.data());
    if (pb.requires_grad) kt.gemm_tn(k, n, m, pa.values.data(), self.grad.data(), pb.grad.data());
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw InvalidArgument("conv2d: input channels " + shape_str(x.shape()) + " vs weights " +
                          shape_str(w.shape()));
  if (stride == 0 || H + 2 * pad < kh || W + 2 * pad < kw)
    throw InvalidArgument("conv2d: invalid stride/padding for input " + shape_str(x.shape()));
  if (bias.defined() && bias.shape() != Shape{O})
    throw InvalidArgument("conv2d: bias shape " + shape_str(bias.shape()));
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t K = C * kh * kw, N = Ho * Wo;

  std::shared_ptr<double[]> cols(new double[K * N]);
  im2col(x.values().data(), C, H, W, kh, kw, stride, pad, Ho, Wo, cols.get());
  std::vector<double> out(O * N, 0.0);
  if (bias.defined()) {
    for (std::size_t o = 0; o < O; ++o) std::fill_n(out.begin() + o * N, N, bias.at(o));
  }
  kernels::active().gemm_nn(O, N, K, w.values().data(), cols.get(), out.data());

  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  const bool need_cols = grad_enabled() && w.requires_grad();
  return make_result(
      "conv2d", Shape{O, Ho, Wo}, std::move(out), std::move(parents),
      [cols = need_cols ? std::move(cols) : nullptr, C, H, W, O, kh, kw, stride, pad,
       Ho, Wo, K, N](Node& self) {
        const auto& kt = kernels::active();
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        if (pw.requires_grad) kt.gemm_nt(O, K, N, self.grad.data(), cols.get(), pw.grad.data());
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          Node& pb = *self.parents[2];
          for (std::size_t o = 0; o < O; ++o) {
            const double* g = self.grad.data() + o * N;
            pb.grad[o] += std::accumulate(g, g + N, 0.0);
          }
        }
        if (px.requires_grad) {
          std::vector<double> dcols(K * N, 0.0);
          kt.gemm_tn(K, N, O, pw.values.data(), self.grad.data(), dcols.data());
          col2im(dcols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo, px.grad.data());
        }
      });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank("avg_pool2", x, 3);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 || W % 2) throw InvalidArgument("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(C * Ho * Wo);
  const auto v = x.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const std::size_t base = (c * H + 2 * y) * W + 2 * xx;
        out[(c * Ho + y) * Wo + xx] = 0.25 * (v[base] + v[base + 1] + v[base + W] + v[base + W + 1]);
      }
  return make_result("avg_pool2", Shape{C, Ho, Wo}, std::move(out), {x},
                     [C, H, W, Ho, Wo](Node& self) {
                       auto& g = self.parents[0]->grad;
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t y = 0; y < Ho; ++y)
                           for (std::size_t xx = 0; xx < Wo; ++xx) {
                             const double d = 0.25 * self.grad[(c * Ho + y) * Wo + xx];
                             const std::size_t base = (c * H + 2 * y) * W + 2 * xx;
                             g[base] += d;
                             g[base + 1] += d;
                             g[base + W] += d;
                             g[base + W + 1] += d;
                           }
                     });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 3);
  require_rank("concat_channels", b, 3);
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw InvalidArgument("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.numel();
  return make_result("concat_channels", Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)},
                     std::move(out), {a, b}, [na](Node& self) {
                       const auto& kt = kernels::active();
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (pa.requires_grad) kt.axpy(1.0, self.grad.data(), pa.grad.data(), na);
                       if (pb.requires_grad)
                         kt.axpy(1.0, self.grad.data() + na, pb.grad.data(), pb.values.size());
                     });
}

Tensor spatial_mean(const Tensor& x) {
  require_rank("spatial_mean", x, 3);
  const std::size_t C = x.dim(0), n = x.dim(1) * x.dim(2);
  if (n == 0) throw InvalidArgument("spatial_mean: empty spatial extent");
  std::vector<double> out(C);
  const auto v = x.values();
  for (std::size_t c = 0; c < C; ++c)
    out[c] = std::accumulate(v.begin() + c * n, v.begin() + (c + 1) * n, 0.0) / static_cast<double>(n);
  return make_result("spatial_mean", Shape{C}, std::move(out), {x}, [C, n](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = self.grad[c] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) g[c * n + i] += d;
    }
  });
}

SampleGrid::SampleGrid(std::size_t src_h, std::size_t src_w, std::size_t out_h, std::size_t out_w,
                       const std::vector<double>& xs, const std::vector<double>& ys, bool wrap_x)
    : src_h_(src_h), src_w_(src_w), out_h_(out_h), out_w_(out_w) {
  if (src_h == 0 || src_w == 0 || xs.size() != out_h * out_w || ys.size() != xs.size())
    throw InvalidArgument("SampleGrid: inconsistent dimensions");
  auto taps = std::make_shared<std::vector<Taps>>(xs.size());
  const auto H = static_cast<std::ptrdiff_t>(src_h);
  const auto W = static_cast<std::ptrdiff_t>(src_w);
  for (std::size_t o = 0; o < xs.size(); ++o) {
    if (!std::isfinite(xs[o]) || !std::isfinite(ys[o]))
      throw InvalidArgument("SampleGrid: non-finite coordinate");
    const double fx = std::floor(xs[o]);
    const double fy = std::floor(ys[o]);
    const double tx = xs[o] - fx;
    const double ty = ys[o] - fy;
    auto col = [&](std::ptrdiff_t c) {
      if (wrap_x) return static_cast<std::size_t>(((c % W) + W) % W);
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c, 0, W - 1));
    };
    auto row = [&](std::ptrdiff_t r) {
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r, 0, H - 1));
    };
    const auto x0 = static_cast<std::ptrdiff_t>(fx);
    const auto y0 = static_cast<std::ptrdiff_t>(fy);
    Taps& t = (*taps)[o];
    t.index[0] = row(y0) * src_w + col(x0);
    t.index[1] = row(y0) * src_w + col(x0 + 1);
    t.index[2] = row(y0 + 1) * src_w + col(x0);
    t.index[3] = row(y0 + 1) * src_w + col(x0 + 1);
    t.weight[0] = (1 - ty) * (1 - tx);
    t.weight[1] = (1 - ty) * tx;
    t.weight[2] = ty * (1 - tx);
    t.weight[3] = ty * tx;
  }
  taps_ = std::move(taps);
}

Tensor grid_sample(const Tensor& src, const SampleGrid& grid) {
  require_rank("grid_sample", src, 3);
  if (src.dim(1) != grid.src_h() || src.dim(2) != grid.src_w())
    throw InvalidArgument("grid_sample: source " + shape_str(src.shape()) +
                          " does not match grid");
  const std::size_t C = src.dim(0), n_in = grid.src_h() * grid.src_w();
  const std::size_t n_out = grid.out_h() * grid.out_w();
  const auto& taps = grid.taps();
  std::vector<double> out(C * n_out);
  const auto v = src.values();
  for (std::size_t c = 0; c < C; ++c) {
    const double* s = v.data() + c * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      const auto& t = taps[o];
      out[c * n_out + o] = t.weight[0] * s[t.index[0]] + t.weight[1] * s[t.index[1]] +
                           t.weight[2] * s[t.index[2]] + t.weight[3] * s[t.index[3]];
    }
  }
  return make_result("grid_sample", Shape{C, grid.out_h(), grid.out_w()}, std::move(out), {src},
                     [shared = grid.shared_taps(), C, n_in, n_out](Node& self) {
                       const auto& taps = *shared;
                       auto& g = self.parents[0]->grad;
                       for (std::size_t c = 0; c < C; ++c) {
                         double* d = g.data() + c * n_in;
                         for (std::size_t o = 0; o < n_out; ++o) {
                           const double go = self.grad[c * n_out + o];
                           const auto& t = taps[o];
                           for (int q = 0; q < 4; ++q) d[t.index[q]] += t.weight[q] * go;
                         }
                       }
                     });
}

Tensor softmax_temp(const Tensor& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw InvalidArgument("softmax_temp: temperature must be positive");
  if (logits.numel() == 0) throw InvalidArgument("softmax_temp: empty logits");
  detail::check_finite("softmax_temp", logits.values());
  const auto z = logits.values();
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - zmax) / tau);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return make_result("softmax_temp", logits.shape(), std::move(out), {logits}, [tau](Node& self) {
    const auto& y = self.values;
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += self.grad[i] * y[i];
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (self.grad[i] - dot) / tau;
  });
}

Tensor cross_entropy(const Tensor& target, const Tensor& pred) {
  require_same_shape("cross_entropy", target, pred);
  check_distribution("cross_entropy", target);
  check_distribution("cross_entropy", pred);
  const auto t = target.values(), p = pred.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] > 0.0) loss -= t[i] * std::log(std::max(p[i], kLogClamp));
  std::vector<double> tv(t.begin(), t.end());
  return make_result("cross_entropy", Shape{1}, {loss}, {pred},
                     [tv = std::move(tv)](Node& self) {
                       Node& pp = *self.parents[0];
                       const double g = self.grad[0];
                       for (std::size_t i = 0; i < tv.size(); ++i)
                         if (tv[i] > 0.0 && pp.values[i] > kLogClamp)
                           pp.grad[i] -= g * tv[i] / pp.values[i];
                     });
}

Tensor kl_divergence(const Tensor& target, const Tensor& pred) {
  require_same_shape("kl_divergence", target, pred);
  check_distribution("kl_divergence", target);
  check_distribution("kl_divergence", pred);
  const auto t = target.values(), p = pred.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] > 0.0)
      loss += t[i] * (std::log(std::max(t[i], kLogClamp)) - std::log(std::max(p[i], kLogClamp)));
  std::vector<double> tv(t.begin(), t.end());
  return make_result("kl_divergence", Shape{1}, {loss}, {pred},
                     [tv = std::move(tv)](Node& self) {
                       Node& pp = *self.parents[0];
                       const double g = self.grad[0];
                       for (std::size_t i = 0; i < tv.size(); ++i)
                         if (tv[i] > 0.0 && pp.values[i] > kLogClamp)
                           pp.grad[i] -= g * tv[i] / pp.values[i];
                     });
}

double entropy(const Tensor& p) {
  double h = 0.0;
  for (double v : p.values())
    if (v > 0.0) h -= v * std::log(std::max(v, kLogClamp));
  return h;
}

Tensor normalized_xcorr(const Tensor& tmpl, const Tensor& image, std::size_t anchor_r,
                        std::size_t anchor_c, std::span<const std::uint8_t> tmpl_valid) {
  require_rank("normalized_xcorr", tmpl, 3);
  require_rank("normalized_xcorr", image, 3);
  const std::size_t C = tmpl.dim(0), h = tmpl.dim(1), w = tmpl.dim(2);
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (image.dim(0) != C)
    throw InvalidArgument("normalized_xcorr: channel mismatch " + shape_str(tmpl.shape()) +
                          " vs " + shape_str(image.shape()));
  if (h == 0 || w == 0 || H == 0 || W == 0 || anchor_r >= h || anchor_c >= w)
    throw InvalidArgument("normalized_xcorr: invalid template anchor or empty input");
  if (!tmpl_valid.empty() && tmpl_valid.size() != h * w)
    throw InvalidArgument("normalized_xcorr: validity mask must have h*w entries");

  // Spatial weights of the template cells; empty means every cell counts.
  std::vector<double> weight;
  std::size_t n_valid = h * w;
  if (!tmpl_valid.empty() &&
      std::any_of(tmpl_valid.begin(), tmpl_valid.end(), [](std::uint8_t v) { return v == 0; })) {
    weight.resize(h * w);
    n_valid = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      weight[i] = tmpl_valid[i] ? 1.0 : 0.0;
      n_valid += tmpl_valid[i] ? 1 : 0;
    }
  }
  const bool masked = !weight.empty();
  auto wt = [&](std::size_t i) { return masked ? weight[i % (h * w)] : 1.0; };

  const std::size_t N = C * h * w;
  const double n_eff = static_cast<double>(C * n_valid);
  const auto tv = tmpl.values();
  double gmean = 0.0;
  for (std::size_t i = 0; i < N; ++i) gmean += wt(i) * tv[i];
  gmean = n_valid ? gmean / n_eff : 0.0;
  std::vector<double> centered(N);
  double ss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    centered[i] = wt(i) * (tv[i] - gmean);
    ss += centered[i] * centered[i];
  }
  // Below the rounding floor the template is constant; score it as zero.
  double tmax = 0.0;
  for (std::size_t i = 0; i < N; ++i) tmax = std::max(tmax, wt(i) * std::abs(tv[i]));
  const double tfloor = 64.0 * std::numeric_limits<double>::epsilon() * tmax;
  if (ss <= n_eff * tfloor * tfloor) {
    std::fill(centered.begin(), centered.end(), 0.0);
    ss = 0.0;
  }
  const double gnorm = std::sqrt(ss + kNccEps);
  std::vector<double> unit(N);
  for (std::size_t i = 0; i < N; ++i) unit[i] = centered[i] / gnorm;

  // Zero-padded image so every placement is a valid window.
  const std::size_t Hp = H + h - 1, Wp = W + w - 1;
  std::vector<double> padded(C * Hp * Wp, 0.0);
  const auto iv = image.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      std::copy_n(iv.begin() + (c * H + y) * W, W,
                  padded.begin() + (c * Hp + y + anchor_r) * Wp + anchor_c);

  const auto& kt = kernels::active();
  std::vector<double> num(H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    kt.xcorr_valid(padded.data() + c * Hp * Wp, Hp, Wp, unit.data() + c * h * w, h, w, num.data(),
                   H, W);

  // Window statistics over the (valid part of the) template footprint,
  // summed over channels.
  std::vector<double> s1(Hp * Wp, 0.0), s2(Hp * Wp, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Hp * Wp; ++i) {
      const double v = padded[c * Hp * Wp + i];
      s1[i] += v;
      s2[i] += v * v;
    }
  std::vector<double> Pw(H * W, 0.0), Qw(H * W, 0.0);
  if (masked) {
    kt.xcorr_valid(s1.data(), Hp, Wp, weight.data(), h, w, Pw.data(), H, W);
    kt.xcorr_valid(s2.data(), Hp, Wp, weight.data(), h, w, Qw.data(), H, W);
  } else {
    const auto I1 = integral(s1, Hp, Wp);
    const auto I2 = integral(s2, Hp, Wp);
    for (std::size_t a = 0; a < H; ++a)
      for (std::size_t b = 0; b < W; ++b) {
        Pw[a * W + b] = box(I1, Wp, a, a + h, b, b + w);
        Qw[a * W + b] = box(I2, Wp, a, a + h, b, b + w);
      }
  }
  std::vector<double> den(H * W), out(H * W);
  const double inv_n = n_valid ? 1.0 / n_eff : 0.0;
  for (std::size_t o = 0; o < H * W; ++o) {
    double var = Qw[o] - Pw[o] * Pw[o] * inv_n;
    if (var <= 64.0 * std::numeric_limits<double>::epsilon() * Qw[o]) var = 0.0;
    den[o] = std::sqrt(var + kNccEps);
    out[o] = num[o] / den[o];
  }

  if (!grad_enabled() || !(tmpl.requires_grad() || image.requires_grad())) {
    return make_result("normalized_xcorr", Shape{H, W}, std::move(out), {tmpl, image}, nullptr);
  }

  auto backward_fn = [C, h, w, H, W, Hp, Wp, n_eff, anchor_r, anchor_c, gnorm,
                      centered = std::move(centered), unit = std::move(unit),
                      weight = std::move(weight), padded = std::move(padded),
                      wsum = std::move(Pw), den = std::move(den)](Node& self) {
    const auto& kt = kernels::active();
    const std::size_t N = C * h * w;
    const bool masked = !weight.empty();
    const auto& score = self.values;
    std::vector<double> dnum(H * W), dq(H * W), dp(H * W);
    for (std::size_t o = 0; o < H * W; ++o) {
      const double g = self.grad[o];
      dnum[o] = g / den[o];
      const double dden = -g * score[o] / den[o];
      dq[o] = dden / (2.0 * den[o]);
      dp[o] = n_eff > 0 ? -dden * wsum[o] / (n_eff * den[o]) : 0.0;
    }

    Node& pt = *self.parents[0];
    Node& pi = *self.parents[1];
    if (pi.requires_grad) {
      for (std::size_t c = 0; c < C; ++c)
        kt.xcorr_scatter(dnum.data(), H, W, unit.data() + c * h * w, h, w,
                         pi.grad.data() + c * H * W, H, W, anchor_r, anchor_c);
      // Window statistics: every image cell collects dq/dp from the
      // placements whose (valid) footprint covers it.
      std::vector<double> bq(H * W, 0.0), bp(H * W, 0.0);
      if (masked) {
        kt.xcorr_scatter(dq.data(), H, W, weight.data(), h, w, bq.data(), H, W, anchor_r, anchor_c);
        kt.xcorr_scatter(dp.data(), H, W, weight.data(), h, w, bp.data(), H, W, anchor_r, anchor_c);
      } else {
        const auto Iq = integral(dq, H, W);
        const auto Ip = integral(dp, H, W);
        for (std::size_t y = 0; y < H; ++y) {
          const std::size_t py = y + anchor_r;
          const std::size_t a0 = py + 1 >= h ? py + 1 - h : 0;
          const std::size_t a1 = std::min(py + 1, H);
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t px = x + anchor_c;
            const std::size_t b0 = px + 1 >= w ? px + 1 - w : 0;
            const std::size_t b1 = std::min(px + 1, W);
            bq[y * W + x] = box(Iq, W, a0, a1, b0, b1);
            bp[y * W + x] = box(Ip, W, a0, a1, b0, b1);
          }
        }
      }
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t pidx = (c * Hp + y + anchor_r) * Wp + x + anchor_c;
            pi.grad[(c * H + y) * W + x] += 2.0 * padded[pidx] * bq[y * W + x] + bp[y * W + x];
          }
    }
    if (pt.requires_grad) {
      std::vector<double> dunit(N, 0.0);
      for (std::size_t c = 0; c < C; ++c)
        kt.xcorr_valid(padded.data() + c * Hp * Wp, Hp, Wp, dnum.data(), H, W,
                       dunit.data() + c * h * w, h, w);
      auto wt = [&](std::size_t i) { return masked ? weight[i % (h * w)] : 1.0; };
      double proj = 0.0;
      for (std::size_t i = 0; i < N; ++i) proj += dunit[i] * centered[i];
      const double g3 = gnorm * gnorm * gnorm;
      std::vector<double> dc(N);
      double dmean = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        dc[i] = wt(i) * (dunit[i] / gnorm - centered[i] * proj / g3);
        dmean += dc[i];
      }
      dmean = n_eff > 0 ? dmean / n_eff : 0.0;
      for (std::size_t i = 0; i < N; ++i) pt.grad[i] += wt(i) * (dc[i] - dmean);
    }
  };
  return make_result("normalized_xcorr", Shape{H, W}, std::move(out), {tmpl, image},
                     std::move(backward_fn));
}

}  // namespace geodistill::nx
