#include "geodistill/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "geodistill/error.hpp"

namespace geodistill::nx {
namespace {

double eval_scalar(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor p = Tensor::parameter(x.shape(), {x.values().begin(), x.values().end()});
  std::vector<Coordinate> coords;
  coords.reserve(p.numel());
  for (std::size_t i = 0; i < p.numel(); ++i) coords.push_back({p, i});
  return grad_check_coordinates([&] { return f(p); }, coords, h);
}

double grad_check_coordinates(const std::function<Tensor()>& loss,
                              std::span<const Coordinate> coords, double h) {
  for (const Coordinate& c : coords) {
    if (!c.param.requires_grad()) throw InvalidArgument("grad_check: coordinate has no gradient");
    if (c.index >= c.param.numel()) throw InvalidArgument("grad_check: index out of range");
    Tensor(c.param).zero_grad();
  }
  const Tensor y = loss();
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite function value");
  backward(y);
  std::vector<double> analytic;
  analytic.reserve(coords.size());
  for (const Coordinate& c : coords) analytic.push_back(c.param.grad()[c.index]);

  double worst = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    Tensor p = coords[k].param;
    double& v = p.mutable_values()[coords[k].index];
    const double saved = v;
    v = saved + h;
    const double fp = eval_scalar(loss);
    v = saved - h;
    const double fm = eval_scalar(loss);
    v = saved;
    worst = std::max(worst, relative_error(analytic[k], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

}  // namespace geodistill::nx
