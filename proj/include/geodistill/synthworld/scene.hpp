#pragma once

// Procedural top-down world. World coordinates are meters with x east and
// y north over [0, extent]^2.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace geodistill::synth {

struct Vec2 {
  double x = 0, y = 0;
};

struct Rgb {
  double r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

enum class LandmarkShape { Disc, Square, Segment };

struct Landmark {
  LandmarkShape shape = LandmarkShape::Disc;
  Vec2 pos;              // center; segment start
  Vec2 end;              // segment end only
  double radius = 1.0;   // disc radius, square half-side, segment half-width
  double angle_deg = 0;  // square orientation
  Rgb color;

  bool contains(Vec2 p) const;
  // 0 inside the shape.
  double distance(Vec2 p) const;
};

struct SceneSpec {
  double extent = 160.0;
  std::size_t min_landmarks = 320, max_landmarks = 420;
  double min_radius = 0.8, max_radius = 3.0;
  std::size_t min_roads = 2, max_roads = 4;
  double road_half_width = 2.5;
  double lane_half_width = 0.35;
  double lane_dash_m = 3.0;
  // Margin from the extent edge outside which cameras never stand.
  double camera_margin = 17.5;
  double density_radius = 10.0;
  double density_grid_m = 1.0;
};

struct Scene {
  double extent = 0;
  // Painter's order: later entries cover earlier ones.
  std::vector<Landmark> landmarks;
  // Landmarks [0, first_local) are roads and lane marks, excluded from the
  // density check because they do not pin a position along their length.
  std::size_t first_local = 0;
  Rgb ground_color, sky_color;

  Rgb color_at(Vec2 p) const;
};

// Fast point queries: landmarks bucketed on a coarse grid.
class SceneIndex {
 public:
  explicit SceneIndex(const Scene& scene, double cell_m = 8.0);
  Rgb color_at(Vec2 p) const;
  const Scene& scene() const { return *scene_; }

 private:
  const Scene* scene_;
  double cell_;
  std::size_t n_;
  std::vector<std::vector<std::uint32_t>> buckets_;
};

// Throws GenerationFailure when the density invariant cannot be met in 1000 draws.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Every camera position in [margin, extent - margin]^2 is within
// density_radius of some local landmark (grid check with a Lipschitz margin).
bool density_ok(const Scene& scene, const SceneSpec& spec);

inline constexpr int kMaxSceneAttempts = 1000;

}  // namespace geodistill::synth
