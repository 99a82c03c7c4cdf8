#include "geodistill/harness/eval.hpp"

#include <cmath>

#include "geodistill/error.hpp"
#include "geodistill/geometry/panorama.hpp"
#include "geodistill/nets/training.hpp"

namespace geodistill::harness {

using nlohmann::json;

double yaw_error(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

EvalReport make_report(std::string split, std::vector<SampleRecord> records) {
  EvalReport r;
  r.split = std::move(split);
  std::vector<double> m, d;
  for (const auto& x : records) {
    m.push_back(x.loc_err_m);
    d.push_back(x.yaw_err_deg);
  }
  r.mean_m = nets::mean_of(m);
  r.median_m = nets::median_of(m);
  r.mean_deg = nets::mean_of(d);
  r.median_deg = nets::median_of(d);
  r.records = std::move(records);
  return r;
}

namespace {

json pose_json(const synth::Pose3DoF& p) { return {{"u", p.u}, {"v", p.v}, {"theta", p.theta}}; }

synth::Pose3DoF pose_from(const json& j) {
  return {j.at("u").get<double>(), j.at("v").get<double>(), j.at("theta").get<double>()};
}

}  // namespace

json to_json(const EvalReport& r) {
  json recs = json::array();
  for (const auto& x : r.records)
    recs.push_back({{"index", x.index},
                    {"gt", pose_json(x.gt)},
                    {"pred", pose_json(x.pred)},
                    {"loc_err_m", x.loc_err_m},
                    {"yaw_err_deg", x.yaw_err_deg}});
  return {{"split", r.split},
          {"count", r.records.size()},
          {"mean_m", r.mean_m},
          {"median_m", r.median_m},
          {"mean_deg", r.mean_deg},
          {"median_deg", r.median_deg},
          {"records", recs}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.split = j.at("split").get<std::string>();
    for (const auto& x : j.at("records"))
      r.records.push_back({x.at("index").get<std::size_t>(), pose_from(x.at("gt")), pose_from(x.at("pred")),
                           x.at("loc_err_m").get<double>(), x.at("yaw_err_deg").get<double>()});
    r.mean_m = j.at("mean_m").get<double>();
    r.median_m = j.at("median_m").get<double>();
    r.mean_deg = j.at("mean_deg").get<double>();
    r.median_deg = j.at("median_deg").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed eval report: ") + e.what());
  }
}

void check_compatible(const nets::ModelConfig& cfg, const synth::Split& split) {
  for (const auto& s : split.samples) {
    if (s.pano.dim(1) != cfg.pano_h || s.pano.dim(2) != cfg.pano_w || s.sat.dim(1) != cfg.sat_size ||
        s.sat.dim(2) != cfg.sat_size)
      throw InvalidArgument("checkpoint expects pano " + std::to_string(cfg.pano_h) + "x" +
                            std::to_string(cfg.pano_w) + " and satellite " + std::to_string(cfg.sat_size) +
                            ", split '" + split.name + "' has " + nx::shape_str(s.pano.shape()) + " and " +
                            nx::shape_str(s.sat.shape()));
    break;  // splits are homogeneous
  }
}

LocationPredictor location_predictor(const nets::LocationModel& m) {
  return [&m](const nx::Tensor& pano, const nx::Tensor& sat) {
    nx::NoGradGuard guard;
    return nets::heatmap_argmax(m.forward(pano, sat));
  };
}

YawPredictor yaw_predictor(const nets::OrientationModel& m) {
  return [&m](const nx::Tensor& pano, const nx::Tensor& sat, double prior) {
    return m.predict_yaw(pano, sat, prior);
  };
}

namespace {

SampleRecord record(std::size_t i, const synth::Sample& s, double res, nets::PixelPos p, double yaw) {
  SampleRecord r;
  r.index = i;
  r.gt = s.gt;
  r.pred = {p.u, p.v, synth::wrap_deg(yaw)};
  r.loc_err_m = res * std::hypot(p.u - s.gt.u, p.v - s.gt.v);
  r.yaw_err_deg = yaw_error(yaw, s.gt.theta);
  return r;
}

}  // namespace

EvalReport eval_localization(const LocationPredictor& loc, const synth::Split& split) {
  std::vector<SampleRecord> recs;
  recs.reserve(split.samples.size());
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const auto& s = split.samples[i];
    recs.push_back(record(i, s, split.sat_res, loc(nets::compensate(s.pano, s.gt.theta), s.sat), s.gt.theta));
  }
  return make_report(split.name, std::move(recs));
}

EvalReport eval_localization(const nets::Checkpoint& ckpt, const synth::Split& split) {
  const nets::LocationModel m = nets::location_model(ckpt);
  check_compatible(m.config(), split);
  return eval_localization(location_predictor(m), split);
}

EvalReport eval_3dof(const YawPredictor& yaw, const LocationPredictor& loc, const synth::Split& split) {
  std::vector<SampleRecord> recs;
  recs.reserve(split.samples.size());
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const auto& s = split.samples[i];
    const double theta = yaw(s.pano, s.sat, s.yaw_prior);
    recs.push_back(record(i, s, split.sat_res, loc(nets::compensate(s.pano, theta), s.sat), theta));
  }
  return make_report(split.name, std::move(recs));
}

EvalReport eval_3dof(const nets::Checkpoint& orient_ckpt, const nets::Checkpoint& loc_ckpt,
                     const synth::Split& split) {
  const nets::OrientationModel o = nets::orientation_model(orient_ckpt);
  const nets::LocationModel m = nets::location_model(loc_ckpt);
  check_compatible(o.config(), split);
  check_compatible(m.config(), split);
  return eval_3dof(yaw_predictor(o), location_predictor(m), split);
}

}  // namespace geodistill::harness
