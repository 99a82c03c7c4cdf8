#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"

#include "geodistill/nets/models.hpp"
#include "geodistill/synthworld/dataset.hpp"

namespace geodistill::nets {

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 1e-4;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  double tau_pre = 1.0;       // location pretraining softmax temperature
  double sigma_cells = 1.0;   // location target width
  double orient_sigma = 2.0;  // label smoothing, degrees
  // When nonempty, panoramas are FoV-masked before the warp with a FoV drawn
  // uniformly from [fov_lo, fov_hi] (masking used as plain augmentation).
  bool fov_augment = false;
  double fov_lo = 180.0, fov_hi = 240.0;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double val_mean = 0;    // meters (location) or degrees (orientation)
  double val_median = 0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // 0 = initial weights
  double best_val_mean = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Yaw-compensated panorama: rotated by -theta so the top of the BEV faces north.
nx::Tensor compensate(const nx::Tensor& pano, double theta_deg);

// Localization errors in meters with panoramas compensated by the gt yaw.
std::vector<double> localization_errors(const LocationModel& m, const synth::Split& split);
// Wrapped absolute yaw errors in degrees using each sample's yaw prior.
std::vector<double> yaw_errors(const OrientationModel& m, const synth::Split& split);

double mean_of(const std::vector<double>& v);
// Lower-middle element for even counts.
double median_of(std::vector<double> v);

// Adam on cross_entropy(gaussian gt map, softmax_temp(H, tau_pre)); keeps the
// parameters of the epoch with the lowest val mean error (epoch 0 included).
// Throws TrainingFailure when the loss goes non-finite.
TrainResult pretrain_location(LocationModel& m, const synth::Split& train, const synth::Split& val,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Adam on cross_entropy(smoothed labels, softmax(logits)); best val mean yaw error.
TrainResult train_orientation(OrientationModel& m, const synth::Split& train,
                              const synth::Split& val, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {});

// Deterministic epoch order.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace geodistill::nets
