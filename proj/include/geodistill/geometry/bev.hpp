#pragma once

#include <cstddef>
#include <vector>

#include "geodistill/numerics/ops.hpp"

namespace geodistill::geom {

using nx::Tensor;

struct BevSpec {
  double camera_height = 1.6;  // meters
  double side_m = 35.0;        // BEV extent L
  std::size_t size = 64;       // S
};

// Ground-plane warp of an equirectangular panorama into an S x S top-down
// image, camera at the center, heading up. The sampling grid is built once.
class BevWarp {
 public:
  BevWarp(std::size_t pano_h, std::size_t pano_w, const BevSpec& spec);

  const BevSpec& spec() const { return spec_; }
  double meters_per_pixel() const { return spec_.side_m / static_cast<double>(spec_.size); }

  // [C, pano_h, pano_w] -> [C, S, S]; differentiable w.r.t. the panorama.
  Tensor operator()(const Tensor& pano) const;

  // Panorama (row, col) sampled by BEV pixel (i, j).
  double source_row(std::size_t i, std::size_t j) const;
  double source_col(std::size_t i, std::size_t j) const;

 private:
  struct Coords {
    std::vector<double> rows, cols;
  };
  static Coords coords(std::size_t pano_h, std::size_t pano_w, const BevSpec& spec);
  BevWarp(std::size_t pano_h, std::size_t pano_w, const BevSpec& spec, Coords&& c);

  BevSpec spec_;
  std::vector<double> rows_, cols_;
  nx::SampleGrid grid_;
};

Tensor spherical_to_bev(const Tensor& pano, double camera_height, double side_m, std::size_t size);

// Rotates a square [C, S, S] top-down image about its center so that the
// output's heading direction shows what the input had at azimuth +theta
// (clockwise). Bilinear, edges clamped.
Tensor rotate_topdown(const Tensor& img, double theta_deg);
// The sampling grid behind rotate_topdown for an S x S image.
nx::SampleGrid topdown_rotation_grid(std::size_t S, double theta_deg);

}  // namespace geodistill::geom
