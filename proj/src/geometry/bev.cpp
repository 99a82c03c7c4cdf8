#include "geodistill/geometry/bev.hpp"

#include <cmath>
#include <numbers>

#include "geodistill/error.hpp"
#include "geodistill/geometry/panorama.hpp"

namespace geodistill::geom {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

}  // namespace

BevWarp::Coords BevWarp::coords(std::size_t H, std::size_t W, const BevSpec& spec) {
  if (H == 0 || W == 0) throw InvalidArgument("spherical_to_bev: empty panorama");
  if (!(spec.camera_height > 0.0) || !(spec.side_m > 0.0) || spec.size < 2)
    throw InvalidArgument("spherical_to_bev: need h > 0, L > 0, S >= 2");
  const std::size_t S = spec.size;
  const double half = (static_cast<double>(S) - 1.0) / 2.0;
  const double mpp = spec.side_m / static_cast<double>(S);
  Coords c;
  c.rows.resize(S * S);
  c.cols.resize(S * S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      const double x = (static_cast<double>(j) - half) * mpp;
      const double y = (half - static_cast<double>(i)) * mpp;
      const double d = std::hypot(x, y);
      if (d == 0.0) {
        c.rows[i * S + j] = static_cast<double>(H - 1);
        c.cols[i * S + j] = 0.0;
        continue;
      }
      const double az = std::atan2(x, y) * kDeg;
      const double pitch = -std::atan2(spec.camera_height, d) * kDeg;
      c.rows[i * S + j] = pitch_row(pitch, H);
      c.cols[i * S + j] = azimuth_column(az, W);
    }
  }
  return c;
}

BevWarp::BevWarp(std::size_t pano_h, std::size_t pano_w, const BevSpec& spec)
    : BevWarp(pano_h, pano_w, spec, coords(pano_h, pano_w, spec)) {}

BevWarp::BevWarp(std::size_t pano_h, std::size_t pano_w, const BevSpec& spec, Coords&& c)
    : spec_(spec),
      rows_(std::move(c.rows)),
      cols_(std::move(c.cols)),
      grid_(pano_h, pano_w, spec.size, spec.size, cols_, rows_, true) {}

Tensor BevWarp::operator()(const Tensor& pano) const { return nx::grid_sample(pano, grid_); }

double BevWarp::source_row(std::size_t i, std::size_t j) const { return rows_[i * spec_.size + j]; }
double BevWarp::source_col(std::size_t i, std::size_t j) const { return cols_[i * spec_.size + j]; }

Tensor spherical_to_bev(const Tensor& pano, double camera_height, double side_m, std::size_t size) {
  if (!pano.defined() || pano.rank() != 3) throw InvalidArgument("spherical_to_bev: expected [C, H, W]");
  BevWarp warp(pano.dim(1), pano.dim(2), BevSpec{camera_height, side_m, size});
  return warp(pano);
}

nx::SampleGrid topdown_rotation_grid(std::size_t S, double theta_deg) {
  if (S == 0) throw InvalidArgument("topdown_rotation_grid: empty image");
  if (!std::isfinite(theta_deg)) throw InvalidArgument("rotate_topdown: non-finite angle");
  const double half = (static_cast<double>(S) - 1.0) / 2.0;
  const double ct = std::cos(theta_deg / kDeg), st = std::sin(theta_deg / kDeg);
  std::vector<double> xs(S * S), ys(S * S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      const double x = static_cast<double>(j) - half;
      const double y = half - static_cast<double>(i);
      const double xr = x * ct + y * st;
      const double yr = -x * st + y * ct;
      xs[i * S + j] = xr + half;
      ys[i * S + j] = half - yr;
    }
  }
  return nx::SampleGrid(S, S, S, S, xs, ys, false);
}

Tensor rotate_topdown(const Tensor& img, double theta_deg) {
  if (!img.defined() || img.rank() != 3 || img.dim(1) != img.dim(2))
    throw InvalidArgument("rotate_topdown: expected square [C, S, S]");
  return nx::grid_sample(img, topdown_rotation_grid(img.dim(1), theta_deg));
}

}  // namespace geodistill::geom
