#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "geodistill/nets/checkpoint.hpp"
#include "geodistill/nets/models.hpp"
#include "geodistill/numerics/adam.hpp"
#include "geodistill/numerics/rng.hpp"
#include "geodistill/synthworld/dataset.hpp"

namespace geodistill::distill {

using nx::Tensor;

enum class LossKind { CE, KLD };
enum class TargetKind { Sharpened, SingleMode, Unsharpened };
enum class TeacherUpdate { EMA, Fixed, PrevStudent };
enum class MaskKind { FoV, RandomPatch, MaxActivation };

struct DistillConfig {
  double tau = 0.06;
  double alpha = 0.9;
  double fov_lo = 180.0, fov_hi = 240.0;
  LossKind loss = LossKind::CE;
  TargetKind target = TargetKind::Sharpened;
  TeacherUpdate teacher_update = TeacherUpdate::EMA;
  MaskKind mask = MaskKind::FoV;
  std::size_t epochs = 10;
  double lr = 3e-6;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  std::size_t patch = 8;  // random-patch mask cell size, pixels
  std::string dump_dir;   // state dump on divergence; empty = no dump
};

void validate(const DistillConfig& cfg);
nlohmann::json to_json(const DistillConfig& cfg);
DistillConfig distill_config_from_json(const nlohmann::json& j, DistillConfig base = {});

std::string to_string(LossKind k);
std::string to_string(TargetKind k);
std::string to_string(TeacherUpdate k);
std::string to_string(MaskKind k);
LossKind parse_loss(const std::string& s);
TargetKind parse_target(const std::string& s);
TeacherUpdate parse_teacher_update(const std::string& s);
MaskKind parse_mask(const std::string& s);

struct DistillState {
  nets::LocationModel teacher;
  nets::LocationModel student;
  nx::Adam opt;
  std::uint64_t step = 0;
  Rng rng;
};

// Student is a deep copy of the teacher; step 0; rng seeded from cfg.seed.
DistillState init_distill(const nets::Checkpoint& teacher_ckpt, const DistillConfig& cfg);

// Masked copy of a yaw-compensated panorama. MaxActivation ranks pixels by
// `saliency_model`'s ground-feature saliency and requires it.
Tensor make_student_input(const Tensor& pano, const DistillConfig& cfg, Rng& rng,
                          const nets::LocationModel* saliency_model = nullptr);

// (P_t, P_s); P_t carries no tape connection.
std::pair<Tensor, Tensor> distill_targets(const Tensor& h_t, const Tensor& h_s, const DistillConfig& cfg);

Tensor distill_loss(const Tensor& p_t, const Tensor& p_s, const DistillConfig& cfg);

// theta_t <- alpha theta_t + (1 - alpha) theta_s, in place, outside the tape.
void ema_update(nx::ParamStore& teacher, const nx::ParamStore& student, double alpha);

struct DistillInput {
  Tensor pano;  // yaw-compensated
  Tensor sat;
};

// One optimizer step on the student over the batch; returns the mean loss.
// EMA updates the teacher afterwards; Fixed and PrevStudent leave it.
double distill_step(DistillState& state, std::span<const DistillInput> batch, const DistillConfig& cfg);

// Epoch boundary: PrevStudent copies the student into the teacher.
void end_epoch(DistillState& state, const DistillConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double teacher_val_mean_m = 0, teacher_val_median_m = 0;
  double student_val_mean_m = 0, student_val_median_m = 0;
};
nlohmann::json to_json(const EpochLog& e);

struct DistillResult {
  nets::Checkpoint refined_teacher;
  nets::Checkpoint student;
  std::vector<EpochLog> log;
};

// Unlabelled distillation over `train` (gt yaw only, for compensation); both
// models are validated on full panoramas every epoch.
DistillResult run_distillation(const nets::Checkpoint& teacher_ckpt, const synth::Split& train,
                               const synth::Split& val, const DistillConfig& cfg,
                               const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace geodistill::distill
