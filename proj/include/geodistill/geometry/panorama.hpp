#pragma once

// Panorama geometry. Images are [C, H, W] tensors. Panorama column c sits at
// azimuth 360*c/W - 180 degrees (0 = camera heading, clockwise positive) and
// row r at pitch 90 - 180*r/H degrees.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "geodistill/numerics/ops.hpp"
#include "geodistill/numerics/rng.hpp"

namespace geodistill::geom {

using nx::Tensor;

double column_azimuth(double c, std::size_t W);
double azimuth_column(double azimuth_deg, std::size_t W);
double row_pitch(double r, std::size_t H);
double pitch_row(double pitch_deg, std::size_t H);

// Number of columns a yaw of theta degrees shifts by: round(theta*W/360) mod W.
std::size_t yaw_shift_columns(double theta_deg, std::size_t W);

// Output column c = input column (c + shift) mod W.
Tensor rotate_panorama(const Tensor& pano, double theta_deg);

struct FovMask {
  double fov_deg = 360.0;
  double center_deg = 0.0;
  std::vector<std::uint8_t> columns;  // length W, 1 = visible

  std::size_t count() const;
  // Broadcast down rows into an [H, W] 0/1 tensor.
  Tensor to_image(std::size_t H) const;
};

FovMask build_fov_mask(double fov_deg, double center_deg, std::size_t W);

// Elementwise product of [C, H, W] with an [H, W] mask.
Tensor apply_mask(const Tensor& pano, const Tensor& mask);

// [H, W] mask of patch x patch cells each kept with probability keep_ratio.
Tensor random_patch_mask(Rng& rng, std::size_t H, std::size_t W, std::size_t patch,
                         double keep_ratio);

// Zeroes the drop_ratio fraction of pixels with the highest saliency. Among
// equal scores the lower row-major index is kept.
Tensor max_activation_mask(const Tensor& pano, const Tensor& saliency, double drop_ratio);

}  // namespace geodistill::geom
