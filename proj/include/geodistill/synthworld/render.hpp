#pragma once

#include <cstddef>

#include "geodistill/numerics/tensor.hpp"
#include "geodistill/synthworld/scene.hpp"

namespace geodistill::synth {

// North-up orthographic [3, A, A] rasterization centered at `center`. Each
// pixel takes the color at its center point. The patch must lie inside the
// scene extent.
nx::Tensor render_satellite(const SceneIndex& scene, Vec2 center, std::size_t A, double res);

// Top-down [3, S, S] view centered at `center` with `heading_deg` pointing up
// (clockwise from north), `res` meters per pixel. Pixel (i, j) samples the
// ground offset ((j - (S-1)/2) res, ((S-1)/2 - i) res) in the rotated frame,
// matching the BEV pixel convention. No extent check.
nx::Tensor render_topdown(const SceneIndex& scene, Vec2 center, double heading_deg,
                          std::size_t S, double res);

// Equirectangular [3, H, W] ground-plane panorama from height h. Pixels at
// or above the horizon get the sky color.
nx::Tensor render_panorama(const SceneIndex& scene, Vec2 cam, double yaw_deg, double h,
                           std::size_t H, std::size_t W);

}  // namespace geodistill::synth
