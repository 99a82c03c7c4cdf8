#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "geodistill/nets/checkpoint.hpp"
#include "geodistill/nets/models.hpp"
#include "geodistill/synthworld/dataset.hpp"

namespace geodistill::harness {

struct SampleRecord {
  std::size_t index = 0;
  synth::Pose3DoF gt;
  synth::Pose3DoF pred;
  double loc_err_m = 0;
  double yaw_err_deg = 0;
};

struct EvalReport {
  std::string split;
  std::vector<SampleRecord> records;
  double mean_m = 0, median_m = 0;
  double mean_deg = 0, median_deg = 0;
};

// Wrapped absolute difference in [0, 180].
double yaw_error(double a_deg, double b_deg);

// Fills the aggregates from the records (lower-middle median).
EvalReport make_report(std::string split, std::vector<SampleRecord> records);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Predicts the satellite pixel from a yaw-compensated panorama.
using LocationPredictor = std::function<nets::PixelPos(const nx::Tensor& pano, const nx::Tensor& sat)>;
// Predicts the absolute yaw from the raw panorama, satellite and prior.
using YawPredictor = std::function<double(const nx::Tensor& pano, const nx::Tensor& sat, double prior)>;

LocationPredictor location_predictor(const nets::LocationModel& m);
YawPredictor yaw_predictor(const nets::OrientationModel& m);

// Location only: panoramas are compensated with the gt yaw; yaw errors are 0.
EvalReport eval_localization(const LocationPredictor& loc, const synth::Split& split);
EvalReport eval_localization(const nets::Checkpoint& loc_ckpt, const synth::Split& split);

// Two-stage: predicted yaw compensates the panorama before localization.
EvalReport eval_3dof(const YawPredictor& yaw, const LocationPredictor& loc, const synth::Split& split);
EvalReport eval_3dof(const nets::Checkpoint& orient_ckpt, const nets::Checkpoint& loc_ckpt,
                     const synth::Split& split);

// Throws InvalidArgument unless the model input shapes match the split's samples.
void check_compatible(const nets::ModelConfig& cfg, const synth::Split& split);

}  // namespace geodistill::harness
