#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "geodistill/distill/distill.hpp"
#include "geodistill/nets/checkpoint.hpp"
#include "geodistill/nets/training.hpp"
#include "geodistill/synthworld/dataset.hpp"

namespace geodistill::harness {

struct AblationData {
  const synth::Split* train = nullptr;
  const synth::Split* val = nullptr;
  const synth::Split* test_same = nullptr;
  const synth::Split* test_cross = nullptr;
};

struct Spread {
  double min = 0, median = 0, max = 0;
};
Spread spread_of(const std::vector<double>& v);

struct AblationRow {
  std::string variant;
  // Per seed, in seed order. The baseline row repeats its single value.
  std::vector<double> same_mean, same_median, cross_mean, cross_median;
};

struct AblationTable {
  std::string suite;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // rows[0] is the undistilled baseline
};

nlohmann::json to_json(const AblationTable& t);
std::string to_text(const AblationTable& t);

// mask, target, fov, teacher, loss, augmentation
const std::vector<std::string>& ablation_suites();

// One variant of a suite: either a distillation config or (augmentation
// suite) supervised training on FoV-masked inputs without a teacher.
struct Variant {
  std::string name;
  distill::DistillConfig distill;
  bool augmentation = false;
};
std::vector<Variant> suite_variants(const std::string& suite, const distill::DistillConfig& base);

using AblationProgress = std::function<void(const std::string& variant, std::uint64_t seed)>;

// Every variant x seed starts from `teacher`. The augmentation variant trains
// from the teacher's initialization with `pretrain` settings and FoV masks
// drawn from base's range. Unknown suite -> InvalidArgument.
AblationTable run_ablation(const std::string& suite, const nets::Checkpoint& teacher, const AblationData& data,
                           const distill::DistillConfig& base, const nets::TrainConfig& pretrain,
                           const std::vector<std::uint64_t>& seeds, const AblationProgress& progress = {});

}  // namespace geodistill::harness
