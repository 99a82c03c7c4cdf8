#include "geodistill/synthworld/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "geodistill/error.hpp"
#include "geodistill/numerics/gdtn.hpp"
#include "geodistill/numerics/rng.hpp"
#include "geodistill/synthworld/render.hpp"

namespace geodistill::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSameAreaStream = 1'000'000;
constexpr std::uint64_t kCrossAreaStream = 2'000'000;
constexpr std::uint64_t kSplitStream = 3'000'000;

std::uint64_t split_stream(const std::string& name) {
  // FNV-1a so the per-split stream depends only on the name.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
  return kSplitStream + (h % 1'000'000);
}

void jitter_satellite(nx::Tensor& sat, Rng& rng, const DatasetSpec& spec) {
  auto v = sat.mutable_values();
  const std::size_t plane = v.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    const double gain = 1.0 + rng.uniform(-spec.sat_gain_jitter, spec.sat_gain_jitter);
    const double bias = rng.uniform(-spec.sat_bias_jitter, spec.sat_bias_jitter);
    for (std::size_t i = 0; i < plane; ++i) v[c * plane + i] = v[c * plane + i] * gain + bias;
  }
  for (auto& x : v) x = std::clamp(x + spec.noise_std * rng.normal(), 0.0, 1.0);
}

void noise_panorama(nx::Tensor& pano, Rng& rng, const DatasetSpec& spec) {
  if (spec.noise_std <= 0) return;
  auto v = pano.mutable_values();
  const std::size_t H = pano.dim(1), W = pano.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = H / 2 + 1; r < H; ++r)
      for (std::size_t x = 0; x < W; ++x) {
        double& p = v[(c * H + r) * W + x];
        p = std::clamp(p + spec.noise_std * rng.normal(), 0.0, 1.0);
      }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void validate(const DatasetSpec& spec) {
  if (spec.pano_h < 2 || spec.pano_w < 2 || spec.sat_size < 4 || !(spec.sat_res > 0) ||
      !(spec.camera_height > 0) || spec.same_area_scenes == 0 || spec.cross_area_scenes == 0 ||
      spec.yaw_noise_deg < 0 || spec.yaw_noise_deg > 180)
    throw InvalidArgument("DatasetSpec: invalid sizes or counts");
  if (static_cast<double>(spec.sat_size) * spec.sat_res > spec.scene.extent)
    throw InvalidArgument("DatasetSpec: satellite patch larger than the scene");
  // Cameras stand up to a quarter patch from the patch center, which itself
  // keeps half a patch from the edge; the density check must cover them all.
  if (spec.scene.camera_margin > static_cast<double>(spec.sat_size) * spec.sat_res / 4 + 1e-9)
    throw InvalidArgument("DatasetSpec: scene camera_margin exceeds a quarter satellite patch");
}

}  // namespace

double wrap_deg(double deg) {
  double w = std::fmod(deg + 180.0, 360.0);
  if (w < 0) w += 360.0;
  return w - 180.0;
}

std::vector<std::uint64_t> scene_seeds(const DatasetSpec& spec, std::uint64_t seed, bool cross_area) {
  std::vector<std::uint64_t> out;
  const std::size_t n = cross_area ? spec.cross_area_scenes : spec.same_area_scenes;
  const std::uint64_t base = cross_area ? kCrossAreaStream : kSameAreaStream;
  for (std::size_t i = 0; i < n; ++i) out.push_back(derive_seed(seed, base + i));
  return out;
}

Split generate_split(const DatasetSpec& spec, std::uint64_t seed, const SplitSpec& split) {
  validate(spec);
  const auto same = scene_seeds(spec, seed, false);
  const auto cross = scene_seeds(spec, seed, true);
  {
    std::set<std::uint64_t> s(same.begin(), same.end());
    for (auto c : cross)
      if (s.count(c)) throw GenerationFailure("scene seed collision between areas");
  }
  const auto& seeds = split.cross_area ? cross : same;

  // Scenes are generated lazily; each split touches every scene of its area.
  std::map<std::uint64_t, Scene> scenes;
  std::map<std::uint64_t, SceneIndex> indices;
  const double A = static_cast<double>(spec.sat_size);
  const double patch = A * spec.sat_res;
  Split out;
  out.name = split.name;
  out.sat_res = spec.sat_res;
  out.samples.reserve(split.count);
  const std::uint64_t stream = split_stream(split.name);
  for (std::size_t k = 0; k < split.count; ++k) {
    Rng rng(derive_seed(derive_seed(seed, stream), k));
    const std::uint64_t scene_seed = seeds[k % seeds.size()];
    auto it = scenes.find(scene_seed);
    if (it == scenes.end()) {
      it = scenes.emplace(scene_seed, generate_scene(spec.scene, scene_seed)).first;
      indices.emplace(scene_seed, SceneIndex(it->second));
    }
    const Scene& scene = it->second;
    const SceneIndex& index = indices.at(scene_seed);

    Sample s;
    s.scene_seed = scene_seed;
    // Patch fits in the scene; the camera lies in the central quarter.
    const double lo = patch / 2, hi = scene.extent - patch / 2;
    s.patch_center = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
    s.gt.u = rng.uniform(A / 4, 3 * A / 4);
    s.gt.v = rng.uniform(A / 4, 3 * A / 4);
    s.gt.theta = rng.uniform(-180.0, 180.0);
    s.yaw_prior = wrap_deg(s.gt.theta + rng.uniform(-spec.yaw_noise_deg, spec.yaw_noise_deg));
    s.camera_world = {s.patch_center.x - patch / 2 + s.gt.u * spec.sat_res,
                      s.patch_center.y + patch / 2 - s.gt.v * spec.sat_res};

    s.sat = render_satellite(index, s.patch_center, spec.sat_size, spec.sat_res);
    s.pano = render_panorama(index, s.camera_world, s.gt.theta, spec.camera_height, spec.pano_h,
                             spec.pano_w);
    jitter_satellite(s.sat, rng, spec);
    noise_panorama(s.pano, rng, spec);
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::string sample_stem(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

void write_sample(const fs::path& dir, std::size_t index, const Sample& s) {
  const std::string stem = sample_stem(index);
  nx::write_gdtn(dir / (stem + ".sat.gdtn"), s.sat);
  nx::write_gdtn(dir / (stem + ".pano.gdtn"), s.pano);
  json meta = {
      {"index", index},
      {"gt_pose", {{"u", s.gt.u}, {"v", s.gt.v}, {"theta", s.gt.theta}}},
      {"yaw_prior", s.yaw_prior},
      {"scene_seed", s.scene_seed},
      {"camera_world_m", {s.camera_world.x, s.camera_world.y}},
      {"patch_center_m", {s.patch_center.x, s.patch_center.y}},
      {"units", {{"u", "satellite column, pixels"}, {"v", "satellite row, pixels"},
                 {"theta", "degrees, 0 = north, clockwise"}, {"yaw_prior", "degrees"}}},
  };
  write_text(dir / (stem + ".meta.json"), meta.dump(2) + "\n");
}

Sample read_sample(const fs::path& dir, std::size_t index) {
  const std::string stem = sample_stem(index);
  Sample s;
  s.sat = nx::read_gdtn(dir / (stem + ".sat.gdtn"));
  s.pano = nx::read_gdtn(dir / (stem + ".pano.gdtn"));
  const json meta = read_json(dir / (stem + ".meta.json"));
  try {
    s.gt.u = meta.at("gt_pose").at("u").get<double>();
    s.gt.v = meta.at("gt_pose").at("v").get<double>();
    s.gt.theta = meta.at("gt_pose").at("theta").get<double>();
    s.yaw_prior = meta.at("yaw_prior").get<double>();
    s.scene_seed = meta.at("scene_seed").get<std::uint64_t>();
    s.camera_world = {meta.at("camera_world_m")[0].get<double>(), meta.at("camera_world_m")[1].get<double>()};
    s.patch_center = {meta.at("patch_center_m")[0].get<double>(), meta.at("patch_center_m")[1].get<double>()};
  } catch (const json::exception& e) {
    throw InvalidArgument("bad sample metadata " + stem + ": " + e.what());
  }
  return s;
}

json to_json(const DatasetSpec& d) {
  const SceneSpec& s = d.scene;
  json splits = json::array();
  for (const auto& sp : d.splits)
    splits.push_back({{"name", sp.name}, {"count", sp.count}, {"cross_area", sp.cross_area}});
  return {
      {"scene",
       {{"extent", s.extent}, {"min_landmarks", s.min_landmarks}, {"max_landmarks", s.max_landmarks},
        {"min_radius", s.min_radius}, {"max_radius", s.max_radius}, {"min_roads", s.min_roads},
        {"max_roads", s.max_roads}, {"road_half_width", s.road_half_width},
        {"lane_half_width", s.lane_half_width}, {"lane_dash_m", s.lane_dash_m},
        {"camera_margin", s.camera_margin}, {"density_radius", s.density_radius},
        {"density_grid_m", s.density_grid_m}}},
      {"pano_h", d.pano_h},
      {"pano_w", d.pano_w},
      {"sat_size", d.sat_size},
      {"sat_res", d.sat_res},
      {"camera_height", d.camera_height},
      {"yaw_noise_deg", d.yaw_noise_deg},
      {"same_area_scenes", d.same_area_scenes},
      {"cross_area_scenes", d.cross_area_scenes},
      {"sat_gain_jitter", d.sat_gain_jitter},
      {"sat_bias_jitter", d.sat_bias_jitter},
      {"noise_std", d.noise_std},
      {"splits", splits},
  };
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec d;
  try {
    if (j.contains("scene")) {
      const json& s = j.at("scene");
      SceneSpec& o = d.scene;
      o.extent = s.value("extent", o.extent);
      o.min_landmarks = s.value("min_landmarks", o.min_landmarks);
      o.max_landmarks = s.value("max_landmarks", o.max_landmarks);
      o.min_radius = s.value("min_radius", o.min_radius);
      o.max_radius = s.value("max_radius", o.max_radius);
      o.min_roads = s.value("min_roads", o.min_roads);
      o.max_roads = s.value("max_roads", o.max_roads);
      o.road_half_width = s.value("road_half_width", o.road_half_width);
      o.lane_half_width = s.value("lane_half_width", o.lane_half_width);
      o.lane_dash_m = s.value("lane_dash_m", o.lane_dash_m);
      o.camera_margin = s.value("camera_margin", o.camera_margin);
      o.density_radius = s.value("density_radius", o.density_radius);
      o.density_grid_m = s.value("density_grid_m", o.density_grid_m);
    }
    d.pano_h = j.value("pano_h", d.pano_h);
    d.pano_w = j.value("pano_w", d.pano_w);
    d.sat_size = j.value("sat_size", d.sat_size);
    d.sat_res = j.value("sat_res", d.sat_res);
    d.camera_height = j.value("camera_height", d.camera_height);
    d.yaw_noise_deg = j.value("yaw_noise_deg", d.yaw_noise_deg);
    d.same_area_scenes = j.value("same_area_scenes", d.same_area_scenes);
    d.cross_area_scenes = j.value("cross_area_scenes", d.cross_area_scenes);
    d.sat_gain_jitter = j.value("sat_gain_jitter", d.sat_gain_jitter);
    d.sat_bias_jitter = j.value("sat_bias_jitter", d.sat_bias_jitter);
    d.noise_std = j.value("noise_std", d.noise_std);
    if (j.contains("splits")) {
      d.splits.clear();
      for (const auto& s : j.at("splits"))
        d.splits.push_back({s.at("name").get<std::string>(), s.at("count").get<std::size_t>(),
                            s.value("cross_area", false)});
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad dataset spec: ") + e.what());
  }
  return d;
}

void make_dataset(const DatasetSpec& spec, std::uint64_t seed, const fs::path& root) {
  validate(spec);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  json splits = json::array();
  for (const auto& sp : spec.splits) {
    const fs::path dir = root / sp.name;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    Split split = generate_split(spec, seed, sp);
    for (std::size_t k = 0; k < split.samples.size(); ++k) write_sample(dir, k, split.samples[k]);
    splits.push_back({{"name", sp.name}, {"count", sp.count}, {"cross_area", sp.cross_area}});
  }
  json seeds_same = scene_seeds(spec, seed, false);
  json seeds_cross = scene_seeds(spec, seed, true);
  json manifest = {
      {"format", "geodistill-dataset"},
      {"version", 1},
      {"seed", seed},
      {"spec", to_json(spec)},
      {"splits", splits},
      {"scene_seeds", {{"same_area", seeds_same}, {"cross_area", seeds_cross}}},
  };
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

json dataset_manifest(const fs::path& root) { return read_json(root / "manifest.json"); }

DatasetSpec read_dataset_spec(const fs::path& root) {
  const json m = dataset_manifest(root);
  if (!m.contains("spec")) throw InvalidArgument("dataset manifest lacks a spec");
  return dataset_spec_from_json(m.at("spec"));
}

Split load_split(const fs::path& root, const std::string& name) {
  const json m = dataset_manifest(root);
  const DatasetSpec spec = dataset_spec_from_json(m.at("spec"));
  for (const auto& s : m.at("splits")) {
    if (s.at("name").get<std::string>() != name) continue;
    Split out;
    out.name = name;
    out.sat_res = spec.sat_res;
    const auto n = s.at("count").get<std::size_t>();
    out.samples.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.samples.push_back(read_sample(root / name, k));
    return out;
  }
  throw InvalidArgument("dataset has no split named '" + name + "'");
}

}  // namespace geodistill::synth
