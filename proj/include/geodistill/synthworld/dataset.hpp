#pragma once

// Paired satellite/panorama samples and their on-disk layout:
//   <root>/manifest.json
//   <root>/<split>/NNNNNN.sat.gdtn   [3, A, A]
//   <root>/<split>/NNNNNN.pano.gdtn  [3, H, W]
//   <root>/<split>/NNNNNN.meta.json  gt_pose {u, v, theta}, yaw_prior, ...
// u is the satellite column and v the row, both continuous pixel coordinates
// with pixel (i, j) covering [j, j+1) x [i, i+1). theta and yaw_prior are
// degrees in [-180, 180), 0 = north, clockwise positive.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "geodistill/numerics/tensor.hpp"
#include "geodistill/synthworld/scene.hpp"

namespace geodistill::synth {

struct Pose3DoF {
  double u = 0, v = 0;
  double theta = 0;
};

struct Sample {
  nx::Tensor sat;   // [3, A, A]
  nx::Tensor pano;  // [3, H, W]
  Pose3DoF gt;
  double yaw_prior = 0;
  std::uint64_t scene_seed = 0;
  Vec2 camera_world;
  Vec2 patch_center;
};

struct SplitSpec {
  std::string name;
  std::size_t count = 0;
  bool cross_area = false;  // draws from the held-out scene seeds
};

struct DatasetSpec {
  SceneSpec scene;
  std::size_t pano_h = 64, pano_w = 256;
  std::size_t sat_size = 64;
  double sat_res = 1.09375;
  double camera_height = 1.6;
  double yaw_noise_deg = 45.0;
  std::size_t same_area_scenes = 20;
  std::size_t cross_area_scenes = 10;
  // Appearance gap between views: per-sample satellite color gain/offset
  // jitter and pixel noise on both images (sky left clean).
  double sat_gain_jitter = 0.15;
  double sat_bias_jitter = 0.05;
  double noise_std = 0.02;
  std::vector<SplitSpec> splits = {{"train", 2000, false},
                                   {"val", 300, false},
                                   {"test_same", 300, false},
                                   {"test_cross", 300, true}};
};

struct Split {
  std::string name;
  double sat_res = 0;
  std::vector<Sample> samples;
};

// Scene seeds for one area kind; same-area and cross-area ranges never overlap.
std::vector<std::uint64_t> scene_seeds(const DatasetSpec& spec, std::uint64_t seed, bool cross_area);

// Builds every sample of one split in memory. Deterministic in (spec, seed).
Split generate_split(const DatasetSpec& spec, std::uint64_t seed, const SplitSpec& split);

// Generates all splits and writes them under `root` (created if missing).
void make_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::filesystem::path& root);

nlohmann::json dataset_manifest(const std::filesystem::path& root);
DatasetSpec read_dataset_spec(const std::filesystem::path& root);
Split load_split(const std::filesystem::path& root, const std::string& name);

void write_sample(const std::filesystem::path& dir, std::size_t index, const Sample& s);
Sample read_sample(const std::filesystem::path& dir, std::size_t index);
std::string sample_stem(std::size_t index);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

// Wraps to [-180, 180).
double wrap_deg(double deg);

}  // namespace geodistill::synth
