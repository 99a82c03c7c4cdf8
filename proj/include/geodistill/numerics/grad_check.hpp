#pragma once

#include <functional>
#include <span>

#include "geodistill/numerics/tensor.hpp"

namespace geodistill::nx {

// Compares the tape gradient of a scalar function against central
// differences. Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-5);

// One coordinate of a parameter tensor that `loss` reads through the tape.
struct Coordinate {
  Tensor param;
  std::size_t index;
};

// Same error measure over selected coordinates of existing parameters.
// `loss` must rebuild its graph on every call. Parameter gradients are zeroed
// before the analytic pass and values are restored afterwards.
double grad_check_coordinates(const std::function<Tensor()>& loss,
                              std::span<const Coordinate> coords, double h = 1e-5);

}  // namespace geodistill::nx
