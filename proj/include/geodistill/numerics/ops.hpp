#pragma once

// Differentiable whole-tensor operations. Images and feature maps are laid
// out channel-first: [C, H, W].

#include <cstdint>
#include <span>
#include <cstddef>
#include <memory>
#include <vector>

#include "geodistill/numerics/tensor.hpp"

namespace geodistill::nx {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [C, H, W], w: [O, C, kh, kw], bias: [O] or undefined.
// Symmetric zero padding; output [O, (H+2p-kh)/s+1, (W+2p-kw)/s+1].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad);

// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& x);

// [C1, H, W] ++ [C2, H, W] -> [C1 + C2, H, W]
Tensor concat_channels(const Tensor& a, const Tensor& b);

// [C, H, W] -> [C]
Tensor spatial_mean(const Tensor& x);

// Precomputed bilinear sampling positions. Coordinates are in source pixel
// index units (pixel i has its center at i). The x axis optionally wraps.
class SampleGrid {
 public:
  SampleGrid(std::size_t src_h, std::size_t src_w, std::size_t out_h, std::size_t out_w,
             const std::vector<double>& xs, const std::vector<double>& ys, bool wrap_x);

  std::size_t src_h() const { return src_h_; }
  std::size_t src_w() const { return src_w_; }
  std::size_t out_h() const { return out_h_; }
  std::size_t out_w() const { return out_w_; }

  struct Taps {
    std::size_t index[4];
    double weight[4];
  };
  const std::vector<Taps>& taps() const { return *taps_; }
  std::shared_ptr<const std::vector<Taps>> shared_taps() const { return taps_; }

 private:
  std::size_t src_h_, src_w_, out_h_, out_w_;
  std::shared_ptr<const std::vector<Taps>> taps_;
};

// [C, src_h, src_w] -> [C, out_h, out_w]. Differentiable w.r.t. src only.
Tensor grid_sample(const Tensor& src, const SampleGrid& grid);

// Softmax of logits / tau over all elements (the tensor is treated as one
// flattened categorical distribution). Output keeps the input shape.
Tensor softmax_temp(const Tensor& logits, double tau);

// -sum_i target_i * log(max(pred_i, eps)). target is treated as constant.
Tensor cross_entropy(const Tensor& target, const Tensor& pred);

// sum_i target_i * log(target_i / pred_i), both clamped below by eps.
Tensor kl_divergence(const Tensor& target, const Tensor& pred);

// Shannon entropy (nats) of a probability tensor; not differentiable.
double entropy(const Tensor& p);

inline constexpr double kLogClamp = 1e-12;

// Zero-mean unit-norm cross-correlation of `tmpl` [C, h, w] against every
// placement over `image` [C, H, W]. Output cell (a, b) places the template's
// top-left corner at image cell (a - anchor_r, b - anchor_c); cells outside
// the image count as zeros. Output [H, W], values in [-1, 1].
// A nonempty tmpl_valid [h * w] drops the template cells marked 0 (all
// channels) from the template statistics and from every window's statistics.
Tensor normalized_xcorr(const Tensor& tmpl, const Tensor& image, std::size_t anchor_r,
                        std::size_t anchor_c, std::span<const std::uint8_t> tmpl_valid = {});

inline constexpr double kNccEps = 1e-9;

}  // namespace geodistill::nx
