#include "geodistill/synthworld/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geodistill/error.hpp"
#include "geodistill/numerics/rng.hpp"

namespace geodistill::synth {

namespace {

double seg_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Bounding box of a landmark in world meters.
void bounds(const Landmark& l, double& x0, double& y0, double& x1, double& y1) {
  if (l.shape == LandmarkShape::Segment) {
    x0 = std::min(l.pos.x, l.end.x) - l.radius;
    x1 = std::max(l.pos.x, l.end.x) + l.radius;
    y0 = std::min(l.pos.y, l.end.y) - l.radius;
    y1 = std::max(l.pos.y, l.end.y) + l.radius;
    return;
  }
  const double r = l.shape == LandmarkShape::Square ? l.radius * std::numbers::sqrt2 : l.radius;
  x0 = l.pos.x - r, x1 = l.pos.x + r, y0 = l.pos.y - r, y1 = l.pos.y + r;
}

Scene draw_scene(const SceneSpec& spec, Rng& rng) {
  Scene s;
  s.extent = spec.extent;
  s.sky_color = {0.55, 0.7, 0.92};
  // Ground palette varies between scenes: grass, soil or pavement.
  const double gh = rng.uniform(0.05, 0.35);
  s.ground_color = hsv(gh, rng.uniform(0.2, 0.55), rng.uniform(0.35, 0.6));
  const double base_hue = rng.uniform();

  const double E = spec.extent;
  const std::size_t roads = spec.min_roads + rng.index(spec.max_roads - spec.min_roads + 1);
  const double road_dir = rng.uniform(0, 180);
  const Rgb asphalt = hsv(0.6, 0.05, rng.uniform(0.22, 0.32));
  const Rgb paint = rng.bernoulli(0.5) ? Rgb{0.95, 0.95, 0.92} : Rgb{0.95, 0.82, 0.25};
  for (std::size_t k = 0; k < roads; ++k) {
    // Alternate between two perpendicular directions, each through a random point.
    const double dir = (road_dir + (k % 2) * 90.0) * std::numbers::pi / 180.0;
    const Vec2 c{rng.uniform(0.15 * E, 0.85 * E), rng.uniform(0.15 * E, 0.85 * E)};
    const Vec2 d{std::sin(dir), std::cos(dir)};
    // Clip the infinite line to the extent.
    double t0 = -1e9, t1 = 1e9;
    auto clip = [&](double p, double dp) {
      if (std::abs(dp) < 1e-12) return;
      double a = (0 - p) / dp, b = (E - p) / dp;
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a), t1 = std::min(t1, b);
    };
    clip(c.x, d.x);
    clip(c.y, d.y);
    const double hw = spec.road_half_width;
    Landmark road;
    road.shape = LandmarkShape::Segment;
    road.pos = {c.x + (t0 + hw) * d.x, c.y + (t0 + hw) * d.y};
    road.end = {c.x + (t1 - hw) * d.x, c.y + (t1 - hw) * d.y};
    road.radius = hw;
    road.color = asphalt;
    s.landmarks.push_back(road);
    for (double t = t0 + hw; t + spec.lane_dash_m < t1 - hw; t += 2 * spec.lane_dash_m) {
      Landmark dash;
      dash.shape = LandmarkShape::Segment;
      dash.pos = {c.x + t * d.x, c.y + t * d.y};
      dash.end = {c.x + (t + spec.lane_dash_m) * d.x, c.y + (t + spec.lane_dash_m) * d.y};
      dash.radius = spec.lane_half_width;
      dash.color = paint;
      s.landmarks.push_back(dash);
    }
  }
  s.first_local = s.landmarks.size();

  const std::size_t n = spec.min_landmarks + rng.index(spec.max_landmarks - spec.min_landmarks + 1);
  for (std::size_t k = 0; k < n; ++k) {
    Landmark l;
    const double u = rng.uniform();
    l.shape = u < 0.5 ? LandmarkShape::Disc : (u < 0.85 ? LandmarkShape::Square : LandmarkShape::Segment);
    l.radius = rng.uniform(spec.min_radius, spec.max_radius);
    const double margin = l.shape == LandmarkShape::Square ? l.radius * std::numbers::sqrt2 : l.radius;
    l.pos = {rng.uniform(margin, E - margin), rng.uniform(margin, E - margin)};
    if (l.shape == LandmarkShape::Segment) {
      // Short painted stripes: crossings, parking marks.
      l.radius = rng.uniform(0.3, 0.6);
      const double len = rng.uniform(3, 8), a = rng.uniform(0, 2 * std::numbers::pi);
      l.end = {std::clamp(l.pos.x + len * std::sin(a), l.radius, E - l.radius),
               std::clamp(l.pos.y + len * std::cos(a), l.radius, E - l.radius)};
      l.pos = {std::clamp(l.pos.x, l.radius, E - l.radius), std::clamp(l.pos.y, l.radius, E - l.radius)};
    }
    l.angle_deg = rng.uniform(0, 90);
    const double hue = base_hue + rng.uniform(-0.25, 0.25) + (rng.bernoulli(0.3) ? 0.5 : 0.0);
    l.color = hsv(hue + 1.0, rng.uniform(0.3, 0.9), rng.uniform(0.25, 0.95));
    s.landmarks.push_back(l);
  }
  return s;
}

}  // namespace

bool Landmark::contains(Vec2 p) const {
  switch (shape) {
    case LandmarkShape::Disc: {
      const double dx = p.x - pos.x, dy = p.y - pos.y;
      return dx * dx + dy * dy <= radius * radius;
    }
    case LandmarkShape::Square: {
      const double a = angle_deg * std::numbers::pi / 180.0;
      const double dx = p.x - pos.x, dy = p.y - pos.y;
      const double lx = dx * std::cos(a) + dy * std::sin(a);
      const double ly = -dx * std::sin(a) + dy * std::cos(a);
      return std::abs(lx) <= radius && std::abs(ly) <= radius;
    }
    case LandmarkShape::Segment:
      return seg_distance(p, pos, end) <= radius;
  }
  return false;
}

double Landmark::distance(Vec2 p) const {
  switch (shape) {
    case LandmarkShape::Disc:
      return std::max(0.0, std::hypot(p.x - pos.x, p.y - pos.y) - radius);
    case LandmarkShape::Square: {
      const double a = angle_deg * std::numbers::pi / 180.0;
      const double dx = p.x - pos.x, dy = p.y - pos.y;
      const double lx = std::abs(dx * std::cos(a) + dy * std::sin(a)) - radius;
      const double ly = std::abs(-dx * std::sin(a) + dy * std::cos(a)) - radius;
      return std::hypot(std::max(lx, 0.0), std::max(ly, 0.0));
    }
    case LandmarkShape::Segment:
      return std::max(0.0, seg_distance(p, pos, end) - radius);
  }
  return 0.0;
}

Rgb Scene::color_at(Vec2 p) const {
  for (auto it = landmarks.rbegin(); it != landmarks.rend(); ++it)
    if (it->contains(p)) return it->color;
  return ground_color;
}

SceneIndex::SceneIndex(const Scene& scene, double cell_m) : scene_(&scene), cell_(cell_m) {
  n_ = static_cast<std::size_t>(std::ceil(scene.extent / cell_m));
  if (n_ == 0) n_ = 1;
  buckets_.resize(n_ * n_);
  auto cell = [&](double v) {
    return static_cast<std::size_t>(std::clamp(std::floor(v / cell_), 0.0, static_cast<double>(n_ - 1)));
  };
  for (std::size_t k = 0; k < scene.landmarks.size(); ++k) {
    const Landmark& l = scene.landmarks[k];
    if (l.shape == LandmarkShape::Segment) {
      // Walk the segment so long roads do not fill their whole bounding box.
      const double len = std::hypot(l.end.x - l.pos.x, l.end.y - l.pos.y);
      const auto steps = static_cast<std::size_t>(std::ceil(len / (cell_ * 0.25))) + 1;
      const double reach = l.radius + cell_;
      for (std::size_t s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(steps);
        const Vec2 q{l.pos.x + t * (l.end.x - l.pos.x), l.pos.y + t * (l.end.y - l.pos.y)};
        for (std::size_t cy = cell(q.y - reach); cy <= cell(q.y + reach); ++cy)
          for (std::size_t cx = cell(q.x - reach); cx <= cell(q.x + reach); ++cx) {
            // Bucket membership is conservative: cell center within reach of the stroke.
            const Vec2 cc{(static_cast<double>(cx) + 0.5) * cell_, (static_cast<double>(cy) + 0.5) * cell_};
            if (l.distance(cc) > cell_ * std::numbers::sqrt2 / 2) continue;
            auto& b = buckets_[cy * n_ + cx];
            if (b.empty() || b.back() != k) b.push_back(static_cast<std::uint32_t>(k));
          }
      }
      continue;
    }
    double x0, y0, x1, y1;
    bounds(l, x0, y0, x1, y1);
    for (std::size_t cy = cell(y0); cy <= cell(y1); ++cy)
      for (std::size_t cx = cell(x0); cx <= cell(x1); ++cx)
        buckets_[cy * n_ + cx].push_back(static_cast<std::uint32_t>(k));
  }
  for (auto& b : buckets_) {
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
  }
}

Rgb SceneIndex::color_at(Vec2 p) const {
  if (p.x < 0 || p.y < 0 || p.x > scene_->extent || p.y > scene_->extent) return scene_->ground_color;
  const auto cx = std::min(static_cast<std::size_t>(p.x / cell_), n_ - 1);
  const auto cy = std::min(static_cast<std::size_t>(p.y / cell_), n_ - 1);
  const auto& b = buckets_[cy * n_ + cx];
  for (auto it = b.rbegin(); it != b.rend(); ++it) {
    const Landmark& l = scene_->landmarks[*it];
    if (l.contains(p)) return l.color;
  }
  return scene_->ground_color;
}

bool density_ok(const Scene& scene, const SceneSpec& spec) {
  const double lo = spec.camera_margin, hi = scene.extent - spec.camera_margin;
  if (hi < lo) return false;
  // A grid point within r - g/sqrt2 covers its whole grid cell.
  const double step = spec.density_grid_m;
  const double need = spec.density_radius - step / std::numbers::sqrt2;
  const std::size_t local = scene.landmarks.size() - scene.first_local;
  if (local == 0) return false;
  // Coarse bucket of local landmarks by bounding box for the scan.
  const double cell = spec.density_radius;
  const auto n = static_cast<std::size_t>(std::ceil(scene.extent / cell)) + 1;
  std::vector<std::vector<std::uint32_t>> grid(n * n);
  for (std::size_t k = scene.first_local; k < scene.landmarks.size(); ++k) {
    double x0, y0, x1, y1;
    bounds(scene.landmarks[k], x0, y0, x1, y1);
    const auto ix = static_cast<std::size_t>(std::clamp(std::floor(((x0 + x1) / 2) / cell), 0.0, double(n - 1)));
    const auto iy = static_cast<std::size_t>(std::clamp(std::floor(((y0 + y1) / 2) / cell), 0.0, double(n - 1)));
    grid[iy * n + ix].push_back(static_cast<std::uint32_t>(k));
  }
  const int reach = 2 + static_cast<int>(std::ceil(2 * spec.max_radius / cell));
  for (double y = lo; y <= hi + 1e-9; y += step) {
    for (double x = lo; x <= hi + 1e-9; x += step) {
      const auto ix = static_cast<int>(x / cell), iy = static_cast<int>(y / cell);
      bool found = false;
      for (int dy = -reach; dy <= reach && !found; ++dy)
        for (int dx = -reach; dx <= reach && !found; ++dx) {
          const int gx = ix + dx, gy = iy + dy;
          if (gx < 0 || gy < 0 || gx >= static_cast<int>(n) || gy >= static_cast<int>(n)) continue;
          for (auto k : grid[static_cast<std::size_t>(gy) * n + static_cast<std::size_t>(gx)])
            if (scene.landmarks[k].distance({x, y}) <= need) {
              found = true;
              break;
            }
        }
      if (!found) return false;
    }
  }
  return true;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (!(spec.extent > 2 * spec.camera_margin) || spec.max_landmarks < spec.min_landmarks ||
      spec.max_roads < spec.min_roads || !(spec.min_radius > 0) || spec.max_radius < spec.min_radius)
    throw InvalidArgument("generate_scene: inconsistent SceneSpec");
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    Scene s = draw_scene(spec, rng);
    if (density_ok(s, spec)) return s;
  }
  throw GenerationFailure("generate_scene: density invariant unmet after " +
                          std::to_string(kMaxSceneAttempts) + " attempts (seed " +
                          std::to_string(seed) + ")");
}

}  // namespace geodistill::synth
