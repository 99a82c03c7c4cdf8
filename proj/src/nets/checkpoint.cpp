#include "geodistill/nets/checkpoint.hpp"

#include <fstream>

#include "geodistill/error.hpp"
#include "geodistill/numerics/gdtn.hpp"

namespace geodistill::nets {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string blob_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "params/%03zu.gdtn", i);
  return buf;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  fs::remove_all(dir / "params", ec);
  fs::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create " + (dir / "params").string() + ": " + ec.message());
  json params = json::array();
  std::size_t i = 0;
  for (const auto& [name, t] : ckpt.params.entries()) {
    const std::string file = blob_name(i++);
    nx::write_gdtn(dir / file, t);
    params.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
  }
  json m = {{"format", "geodistill-checkpoint"},
            {"version", 1},
            {"kind", ckpt.kind},
            {"model", to_json(ckpt.model)},
            {"extra", ckpt.extra},
            {"params", params}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint manifest " + mpath.string());
  Checkpoint c;
  try {
    const json m = json::parse(in);
    if (m.at("format").get<std::string>() != "geodistill-checkpoint")
      throw InvalidArgument("not a checkpoint: " + mpath.string());
    c.kind = m.at("kind").get<std::string>();
    c.model = model_config_from_json(m.at("model"));
    c.extra = m.value("extra", json::object());
    for (const auto& p : m.at("params")) {
      const auto name = p.at("name").get<std::string>();
      const auto shape = p.at("shape").get<nx::Shape>();
      const fs::path file = dir / p.at("file").get<std::string>();
      if (!fs::exists(file)) throw IoError("missing parameter blob " + file.string());
      nx::Tensor t = nx::read_gdtn(file);
      if (t.shape() != shape)
        throw InvalidArgument("checkpoint parameter " + name + " has shape " + nx::shape_str(t.shape()) +
                              ", manifest says " + nx::shape_str(shape));
      c.params.add(name, shape, {t.values().begin(), t.values().end()});
    }
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed checkpoint manifest " + mpath.string() + ": " + e.what());
  }
  return c;
}

Checkpoint location_checkpoint(const LocationModel& m, json extra) {
  return {"location", m.config(), std::move(extra), m.params().clone()};
}

LocationModel location_model(const Checkpoint& c) {
  if (c.kind != "location") throw InvalidArgument("checkpoint kind is '" + c.kind + "', expected location");
  return LocationModel(c.model, c.params.clone());
}

Checkpoint orientation_checkpoint(const OrientationModel& m, json extra) {
  extra["orientation"] = {{"classes", m.spec().classes},
                          {"hidden", m.spec().hidden},
                          {"candidates", m.spec().candidates},
                          {"score_tau", m.spec().score_tau},
                          {"profile_tau", m.spec().profile_tau}};
  return {"orientation", m.config(), std::move(extra), m.params().clone()};
}

OrientationModel orientation_model(const Checkpoint& c) {
  if (c.kind != "orientation")
    throw InvalidArgument("checkpoint kind is '" + c.kind + "', expected orientation");
  OrientationSpec spec;
  if (c.extra.contains("orientation")) {
    spec.classes = c.extra["orientation"].value("classes", spec.classes);
    spec.hidden = c.extra["orientation"].value("hidden", spec.hidden);
    spec.candidates = c.extra["orientation"].value("candidates", spec.candidates);
    spec.score_tau = c.extra["orientation"].value("score_tau", spec.score_tau);
    spec.profile_tau = c.extra["orientation"].value("profile_tau", spec.profile_tau);
  }
  return OrientationModel(c.model, spec, c.params.clone());
}

}  // namespace geodistill::nets
