#include "geodistill/synthworld/render.hpp"

#include <cmath>
#include <numbers>

#include "geodistill/error.hpp"
#include "geodistill/geometry/panorama.hpp"

namespace geodistill::synth {

namespace {

constexpr double kRad = std::numbers::pi / 180.0;

void put(std::vector<double>& v, std::size_t plane, std::size_t idx, Rgb c) {
  v[idx] = c.r;
  v[plane + idx] = c.g;
  v[2 * plane + idx] = c.b;
}

}  // namespace

nx::Tensor render_satellite(const SceneIndex& index, Vec2 center, std::size_t A, double res) {
  const double half = static_cast<double>(A) * res / 2.0;
  const double E = index.scene().extent;
  if (A == 0 || !(res > 0)) throw InvalidArgument("render_satellite: empty patch");
  if (center.x - half < -1e-9 || center.y - half < -1e-9 || center.x + half > E + 1e-9 ||
      center.y + half > E + 1e-9)
    throw InvalidArgument("render_satellite: patch outside scene extent");
  std::vector<double> v(3 * A * A);
  for (std::size_t i = 0; i < A; ++i) {
    const double y = center.y + half - (static_cast<double>(i) + 0.5) * res;
    for (std::size_t j = 0; j < A; ++j) {
      const double x = center.x - half + (static_cast<double>(j) + 0.5) * res;
      put(v, A * A, i * A + j, index.color_at({x, y}));
    }
  }
  return nx::Tensor({3, A, A}, std::move(v));
}

nx::Tensor render_topdown(const SceneIndex& index, Vec2 center, double heading_deg, std::size_t S,
                          double res) {
  if (S == 0 || !(res > 0)) throw InvalidArgument("render_topdown: empty view");
  const double half = (static_cast<double>(S) - 1.0) / 2.0;
  const double c = std::cos(heading_deg * kRad), s = std::sin(heading_deg * kRad);
  std::vector<double> v(3 * S * S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      const double right = (static_cast<double>(j) - half) * res;
      const double fwd = (half - static_cast<double>(i)) * res;
      // forward = (sin h, cos h), right = (cos h, -sin h)
      const Vec2 p{center.x + fwd * s + right * c, center.y + fwd * c - right * s};
      put(v, S * S, i * S + j, index.color_at(p));
    }
  }
  return nx::Tensor({3, S, S}, std::move(v));
}

nx::Tensor render_panorama(const SceneIndex& index, Vec2 cam, double yaw_deg, double h,
                           std::size_t H, std::size_t W) {
  const double E = index.scene().extent;
  if (H == 0 || W == 0 || !(h > 0)) throw InvalidArgument("render_panorama: bad dimensions");
  if (!std::isfinite(yaw_deg)) throw InvalidArgument("render_panorama: non-finite yaw");
  if (cam.x < 0 || cam.y < 0 || cam.x > E || cam.y > E)
    throw InvalidArgument("render_panorama: camera outside scene extent");
  std::vector<double> v(3 * H * W);
  const Rgb sky = index.scene().sky_color;
  for (std::size_t r = 0; r < H; ++r) {
    const double pitch = geom::row_pitch(static_cast<double>(r), H);
    if (pitch >= 0) {
      for (std::size_t c = 0; c < W; ++c) put(v, H * W, r * W + c, sky);
      continue;
    }
    const double d = h / std::tan(-pitch * kRad);
    for (std::size_t c = 0; c < W; ++c) {
      const double az = (geom::column_azimuth(static_cast<double>(c), W) + yaw_deg) * kRad;
      put(v, H * W, r * W + c, index.color_at({cam.x + d * std::sin(az), cam.y + d * std::cos(az)}));
    }
  }
  return nx::Tensor({3, H, W}, std::move(v));
}

}  // namespace geodistill::synth
