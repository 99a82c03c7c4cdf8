#pragma once

#include <string>

#include "geodistill/numerics/tensor.hpp"

namespace geodistill::geom {

// Writes [H, W] or [1, H, W] as binary PGM and [3, H, W] as binary PPM.
// With normalize, values are rescaled so the image min/max map to 0/255;
// otherwise values are clamped to [0, 1].
void write_pnm(const std::string& path, const nx::Tensor& img, bool normalize = false);

// Writes [H, W] (or any tensor flattened to its last dim) as CSV rows.
void write_csv(const std::string& path, const nx::Tensor& t);

}  // namespace geodistill::geom
