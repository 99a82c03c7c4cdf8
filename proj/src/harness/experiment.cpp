#include "geodistill/harness/experiment.hpp"

#include <fstream>
#include <sstream>

#include "geodistill/error.hpp"

namespace geodistill::harness {

using nlohmann::json;

json to_json(const ExperimentConfig& c) {
  json o = nets::to_json(c.orientation);
  o["classes"] = c.orientation_spec.classes;
  o["hidden"] = c.orientation_spec.hidden;
  o["candidates"] = c.orientation_spec.candidates;
  o["score_tau"] = c.orientation_spec.score_tau;
  o["profile_tau"] = c.orientation_spec.profile_tau;
  return {{"dataset", c.dataset},
          {"stage", c.stage},
          {"dataset_spec", synth::to_json(c.dataset_spec)},
          {"model", nets::to_json(c.model)},
          {"pretrain", nets::to_json(c.pretrain)},
          {"orientation", o},
          {"distill", distill::to_json(c.distill)},
          {"seeds", c.seeds},
          {"out", c.out}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw InvalidArgument("experiment config must be a JSON object");
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.stage = j.value("stage", c.stage);
    if (j.contains("dataset_spec")) c.dataset_spec = synth::dataset_spec_from_json(j.at("dataset_spec"));
    if (j.contains("model")) c.model = nets::model_config_from_json(j.at("model"));
    if (j.contains("pretrain")) c.pretrain = nets::train_config_from_json(j.at("pretrain"), c.pretrain);
    if (j.contains("orientation")) {
      const json& o = j.at("orientation");
      c.orientation = nets::train_config_from_json(o, c.orientation);
      c.orientation_spec.classes = o.value("classes", c.orientation_spec.classes);
      c.orientation_spec.hidden = o.value("hidden", c.orientation_spec.hidden);
      c.orientation_spec.candidates = o.value("candidates", c.orientation_spec.candidates);
      c.orientation_spec.score_tau = o.value("score_tau", c.orientation_spec.score_tau);
      c.orientation_spec.profile_tau = o.value("profile_tau", c.orientation_spec.profile_tau);
    }
    if (j.contains("distill")) c.distill = distill::distill_config_from_json(j.at("distill"), c.distill);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out = j.value("out", c.out);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad experiment config: ") + e.what());
  }
  if (c.seeds.empty()) throw InvalidArgument("experiment config: seed list is empty");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

nets::ModelConfig model_for_dataset(const synth::DatasetSpec& spec, nets::ModelConfig base) {
  base.pano_h = spec.pano_h;
  base.pano_w = spec.pano_w;
  base.sat_size = spec.sat_size;
  base.bev.size = spec.sat_size / 2;
  base.bev.side_m = static_cast<double>(spec.sat_size) * spec.sat_res / 2;
  base.bev.camera_height = spec.camera_height;
  return base;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << text;
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
}

}  // namespace geodistill::harness
