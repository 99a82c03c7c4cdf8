#include "geodistill/geometry/panorama.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geodistill/error.hpp"

namespace geodistill::geom {

double column_azimuth(double c, std::size_t W) { return 360.0 * c / static_cast<double>(W) - 180.0; }
double azimuth_column(double az, std::size_t W) { return (az + 180.0) * static_cast<double>(W) / 360.0; }
double row_pitch(double r, std::size_t H) { return 90.0 - 180.0 * r / static_cast<double>(H); }
double pitch_row(double p, std::size_t H) { return (90.0 - p) * static_cast<double>(H) / 180.0; }

std::size_t yaw_shift_columns(double theta_deg, std::size_t W) {
  if (!std::isfinite(theta_deg)) throw InvalidArgument("rotate_panorama: non-finite yaw");
  if (W == 0) throw InvalidArgument("rotate_panorama: zero width");
  const double t = std::fmod(theta_deg, 360.0);
  const auto s = static_cast<long long>(std::llround(t * static_cast<double>(W) / 360.0));
  const auto w = static_cast<long long>(W);
  return static_cast<std::size_t>(((s % w) + w) % w);
}

namespace {

void require_image(const char* op, const Tensor& t) {
  if (!t.defined() || t.rank() != 3)
    throw InvalidArgument(std::string(op) + ": expected [C, H, W], got " +
                          (t.defined() ? nx::shape_str(t.shape()) : std::string("undefined")));
}

void require_mask(const char* op, const Tensor& img, const Tensor& mask) {
  require_image(op, img);
  if (!mask.defined() || mask.rank() != 2 || mask.dim(0) != img.dim(1) || mask.dim(1) != img.dim(2))
    throw InvalidArgument(std::string(op) + ": mask shape does not match panorama");
}

}  // namespace

Tensor rotate_panorama(const Tensor& pano, double theta_deg) {
  require_image("rotate_panorama", pano);
  const std::size_t C = pano.dim(0), H = pano.dim(1), W = pano.dim(2);
  const std::size_t s = yaw_shift_columns(theta_deg, W);
  auto in = pano.values();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < C * H; ++r) {
    const double* src = in.data() + r * W;
    double* dst = out.data() + r * W;
    std::copy(src + s, src + W, dst);
    std::copy(src, src + s, dst + (W - s));
  }
  return Tensor(pano.shape(), std::move(out));
}

std::size_t FovMask::count() const {
  return static_cast<std::size_t>(std::count(columns.begin(), columns.end(), 1));
}

Tensor FovMask::to_image(std::size_t H) const {
  const std::size_t W = columns.size();
  std::vector<double> v(H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) v[r * W + c] = columns[c];
  return Tensor({H, W}, std::move(v));
}

FovMask build_fov_mask(double fov_deg, double center_deg, std::size_t W) {
  if (!(fov_deg > 0.0 && fov_deg <= 360.0)) throw InvalidArgument("build_fov_mask: fov out of (0, 360]");
  if (!std::isfinite(center_deg)) throw InvalidArgument("build_fov_mask: non-finite center");
  if (W == 0) throw InvalidArgument("build_fov_mask: zero width");
  FovMask m;
  m.fov_deg = fov_deg;
  m.center_deg = center_deg;
  m.columns.assign(W, 0);
  const auto w = static_cast<long long>(W);
  const long long n = std::min<long long>(std::llround(static_cast<double>(W) * fov_deg / 360.0), w);
  const double wrapped = std::fmod(std::fmod(center_deg + 180.0, 360.0) + 360.0, 360.0) - 180.0;
  const long long c0 = std::llround(azimuth_column(wrapped, W)) % w;
  const long long start = c0 - n / 2;
  for (long long k = 0; k < n; ++k) m.columns[static_cast<std::size_t>(((start + k) % w + w) % w)] = 1;
  return m;
}

Tensor apply_mask(const Tensor& pano, const Tensor& mask) {
  require_mask("apply_mask", pano, mask);
  const std::size_t C = pano.dim(0), HW = mask.numel();
  auto in = pano.values();
  auto m = mask.values();
  std::vector<double> out(in.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] = in[c * HW + i] * m[i];
  return Tensor(pano.shape(), std::move(out));
}

Tensor random_patch_mask(Rng& rng, std::size_t H, std::size_t W, std::size_t patch,
                         double keep_ratio) {
  if (patch == 0 || H % patch != 0 || W % patch != 0)
    throw InvalidArgument("random_patch_mask: patch size must divide the image");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw InvalidArgument("random_patch_mask: keep_ratio out of (0, 1]");
  const std::size_t gh = H / patch, gw = W / patch;
  std::vector<double> v(H * W);
  for (std::size_t a = 0; a < gh; ++a) {
    for (std::size_t b = 0; b < gw; ++b) {
      const double keep = rng.bernoulli(keep_ratio) ? 1.0 : 0.0;
      for (std::size_t r = a * patch; r < (a + 1) * patch; ++r)
        std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(r * W + b * patch), patch, keep);
    }
  }
  return Tensor({H, W}, std::move(v));
}

Tensor max_activation_mask(const Tensor& pano, const Tensor& saliency, double drop_ratio) {
  require_mask("max_activation_mask", pano, saliency);
  if (!(drop_ratio >= 0.0 && drop_ratio < 1.0))
    throw InvalidArgument("max_activation_mask: drop_ratio out of [0, 1)");
  const std::size_t n = saliency.numel();
  auto s = saliency.values();
  nx::detail::check_finite("max_activation_mask", s);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a > b;
  });
  const auto drop = static_cast<std::size_t>(std::llround(drop_ratio * static_cast<double>(n)));
  std::vector<double> v(n, 1.0);
  for (std::size_t k = 0; k < drop; ++k) v[order[k]] = 0.0;
  return Tensor(saliency.shape(), std::move(v));
}

}  // namespace geodistill::geom
