#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "geodistill/distill/distill.hpp"
#include "geodistill/nets/models.hpp"
#include "geodistill/nets/training.hpp"
#include "geodistill/synthworld/dataset.hpp"

namespace geodistill::harness {

// Everything one CLI invocation needs. Loaded from --config and then
// overridden by flags.
struct ExperimentConfig {
  std::string dataset;  // dataset directory
  std::string stage;    // gen | pretrain | train-orient | distill | eval | ablate
  synth::DatasetSpec dataset_spec;
  nets::ModelConfig model;
  nets::TrainConfig pretrain;
  nets::TrainConfig orientation{2, 1e-3, 8, 0, 1.0, 1.0, 2.0};
  nets::OrientationSpec orientation_spec;
  distill::DistillConfig distill;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Model shapes implied by a dataset: pano and satellite sizes, BEV at half the
// satellite size covering half its ground extent.
nets::ModelConfig model_for_dataset(const synth::DatasetSpec& spec, nets::ModelConfig base = {});

// Writes `text` to `path` through a temporary sibling and a rename, so a
// failure never leaves a partial file.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace geodistill::harness
