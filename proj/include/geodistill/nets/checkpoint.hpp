#pragma once

// Checkpoint directory:
//   <dir>/manifest.json   kind, architecture, training config, metrics,
//                         parameter names/shapes/files in store order
//   <dir>/params/NNN.gdtn one GDTN blob per parameter

#include <filesystem>
#include <string>

#include "json.hpp"

#include "geodistill/nets/models.hpp"
#include "geodistill/numerics/param_store.hpp"

namespace geodistill::nets {

struct Checkpoint {
  std::string kind;  // "location" or "orientation"
  ModelConfig model;
  nlohmann::json extra = nlohmann::json::object();  // training config, metrics, ...
  nx::ParamStore params;
};

// Overwrites an existing checkpoint directory.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

// Missing files -> IoError; malformed or inconsistent contents -> InvalidArgument.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

Checkpoint location_checkpoint(const LocationModel& m, nlohmann::json extra = nlohmann::json::object());
LocationModel location_model(const Checkpoint& c);

Checkpoint orientation_checkpoint(const OrientationModel& m,
                                  nlohmann::json extra = nlohmann::json::object());
OrientationModel orientation_model(const Checkpoint& c);

}  // namespace geodistill::nets
