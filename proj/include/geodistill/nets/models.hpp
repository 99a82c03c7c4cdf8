#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "json.hpp"

#include "geodistill/geometry/bev.hpp"
#include "geodistill/numerics/param_store.hpp"

namespace geodistill::nets {

using nx::ParamStore;
using nx::Tensor;

// Three 3x3 convolutions with strides 1-2-1; relu after the first two.
struct EncoderSpec {
  std::array<std::size_t, 3> channels{8, 16, 16};
};

void add_encoder_params(ParamStore& store, const std::string& prefix, std::size_t in_channels,
                        const EncoderSpec& spec, std::uint64_t seed);
Tensor encode(const ParamStore& store, const std::string& prefix, const Tensor& x);

struct ModelConfig {
  std::size_t pano_h = 64, pano_w = 256;
  std::size_t sat_size = 64;
  geom::BevSpec bev{1.6, 35.0, 32};
  EncoderSpec encoder;
  std::uint64_t init_seed = 0;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Heatmap stride: the encoders downsample by 2.
inline constexpr std::size_t kHeatmapStride = 2;

// Satellite-pixel center of heatmap cell (a, b): (u, v) = (2b + 1, 2a + 1).
std::pair<double, double> cell_center(std::size_t a, std::size_t b);
// Cell containing continuous satellite pixel (u, v), clamped to the grid.
std::pair<std::size_t, std::size_t> pixel_cell(double u, double v, std::size_t grid);

struct PixelPos {
  double u = 0, v = 0;
};

// Center of the maximal cell; ties go to the smallest row-major index.
PixelPos heatmap_argmax(const Tensor& heatmap);

class LocationModel {
 public:
  explicit LocationModel(const ModelConfig& cfg);
  LocationModel(const ModelConfig& cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t grid() const { return cfg_.sat_size / kHeatmapStride; }
  const geom::BevWarp& warp() const { return warp_; }

  // pano must already be yaw-compensated. Returns the [G, G] heatmap.
  Tensor forward(const Tensor& pano, const Tensor& sat) const;
  Tensor ground_features(const Tensor& pano) const;

  // Per-pixel panorama saliency: the norm of the ground feature cell that
  // the pixel's ground point lands in, 0 for sky and out-of-footprint pixels.
  Tensor ground_saliency(const Tensor& pano) const;

  // Ground feature cells whose BEV footprint saw only observed panorama
  // pixels (a pixel that is exactly zero in every channel is unobserved).
  // Empty when every cell is observed.
  std::vector<std::uint8_t> feature_validity(const Tensor& pano) const;

 private:
  void check_inputs(const Tensor& pano, const Tensor& sat) const;

  ModelConfig cfg_;
  ParamStore params_;
  geom::BevWarp warp_;
  std::vector<std::ptrdiff_t> pano_to_feature_;
};

struct OrientationSpec {
  std::size_t classes = 91;
  std::size_t hidden = 64;
  // Rotation hypotheses evenly spaced over the class range.
  std::size_t candidates = 19;
  double score_tau = 0.1;    // soft max over each correlation map
  double profile_tau = 0.02; // sharpening of the score profile fed to the MLP
};

// Class c <-> yaw offset c - (N-1)/2 degrees.
double class_offset(std::size_t c, std::size_t n_classes);

class OrientationModel {
 public:
  OrientationModel(const ModelConfig& cfg, const OrientationSpec& spec);
  OrientationModel(const ModelConfig& cfg, const OrientationSpec& spec, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  const OrientationSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Logits [N] for the offset of the true yaw from `prior_deg`.
  Tensor forward(const Tensor& pano, const Tensor& sat, double prior_deg) const;
  // Matching score of each rotation hypothesis, [candidates].
  Tensor profile(const Tensor& pano, const Tensor& sat, double prior_deg) const;
  double candidate_offset(std::size_t k) const;
  // prior + offset of the argmax class.
  double predict_yaw(const Tensor& pano, const Tensor& sat, double prior_deg) const;

 private:
  ModelConfig cfg_;
  OrientationSpec spec_;
  ParamStore params_;
  geom::BevWarp warp_;
  std::vector<nx::SampleGrid> rotations_;
};

// Copies the location model's ground and satellite encoder weights into the
// orientation encoders. The models must share the encoder spec.
void warm_start(OrientationModel& o, const LocationModel& loc);

// Gaussian bump over class offsets centered at true_offset, normalized.
Tensor smooth_labels(double true_offset, std::size_t n_classes, double sigma);

// Gaussian over heatmap cells centered at the continuous pixel (u, v), with
// sigma in cell units, normalized to sum 1.
Tensor location_target(double u, double v, std::size_t grid, double sigma_cells);

}  // namespace geodistill::nets
