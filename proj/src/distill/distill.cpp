#include "geodistill/distill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "geodistill/error.hpp"
#include "geodistill/geometry/panorama.hpp"
#include "geodistill/nets/training.hpp"
#include "geodistill/numerics/ops.hpp"

namespace geodistill::distill {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&table)[N], const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  std::string options;
  for (const auto& [name, value] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw InvalidArgument(std::string("unknown ") + what + " '" + s + "' (expected " + options + ")");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::pair<const char*, E> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (v == value) return name;
  return "?";
}

constexpr std::pair<const char*, LossKind> kLoss[] = {{"ce", LossKind::CE}, {"kld", LossKind::KLD}};
constexpr std::pair<const char*, TargetKind> kTarget[] = {{"sharpened", TargetKind::Sharpened},
                                                          {"single_mode", TargetKind::SingleMode},
                                                          {"unsharpened", TargetKind::Unsharpened}};
constexpr std::pair<const char*, TeacherUpdate> kUpdate[] = {{"ema", TeacherUpdate::EMA},
                                                             {"fixed", TeacherUpdate::Fixed},
                                                             {"prev", TeacherUpdate::PrevStudent}};
constexpr std::pair<const char*, MaskKind> kMask[] = {{"fov", MaskKind::FoV},
                                                      {"patch", MaskKind::RandomPatch},
                                                      {"maxact", MaskKind::MaxActivation}};

}  // namespace

std::string to_string(LossKind k) { return enum_name(k, kLoss); }
std::string to_string(TargetKind k) { return enum_name(k, kTarget); }
std::string to_string(TeacherUpdate k) { return enum_name(k, kUpdate); }
std::string to_string(MaskKind k) { return enum_name(k, kMask); }
LossKind parse_loss(const std::string& s) { return parse_enum(s, kLoss, "loss"); }
TargetKind parse_target(const std::string& s) { return parse_enum(s, kTarget, "target"); }
TeacherUpdate parse_teacher_update(const std::string& s) { return parse_enum(s, kUpdate, "teacher update"); }
MaskKind parse_mask(const std::string& s) { return parse_enum(s, kMask, "mask"); }

void validate(const DistillConfig& c) {
  if (!(c.tau > 0) || (c.target == TargetKind::Sharpened && c.tau > 1))
    throw InvalidArgument("distill: tau must be in (0, 1] for sharpened targets");
  if (!(c.alpha >= 0 && c.alpha <= 1)) throw InvalidArgument("distill: alpha must be in [0, 1]");
  if (!(c.fov_lo > 0 && c.fov_lo <= c.fov_hi && c.fov_hi <= 360))
    throw InvalidArgument("distill: FoV range must satisfy 0 < lo <= hi <= 360");
  if (c.batch == 0) throw InvalidArgument("distill: batch must be positive");
  if (!(c.lr >= 0)) throw InvalidArgument("distill: lr must be nonnegative");
  if (c.patch == 0) throw InvalidArgument("distill: patch size must be positive");
}

json to_json(const DistillConfig& c) {
  return {{"tau", c.tau},
          {"alpha", c.alpha},
          {"fov_range", {c.fov_lo, c.fov_hi}},
          {"loss", to_string(c.loss)},
          {"target", to_string(c.target)},
          {"teacher_update", to_string(c.teacher_update)},
          {"mask", to_string(c.mask)},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"batch", c.batch},
          {"seed", c.seed},
          {"patch", c.patch}};
}

DistillConfig distill_config_from_json(const json& j, DistillConfig c) {
  try {
    c.tau = j.value("tau", c.tau);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("fov_range")) {
      const auto r = j.at("fov_range").get<std::vector<double>>();
      if (r.size() != 2) throw InvalidArgument("distill: fov_range needs two values");
      c.fov_lo = r[0];
      c.fov_hi = r[1];
    }
    if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
    if (j.contains("target")) c.target = parse_target(j.at("target").get<std::string>());
    if (j.contains("teacher_update"))
      c.teacher_update = parse_teacher_update(j.at("teacher_update").get<std::string>());
    if (j.contains("mask")) c.mask = parse_mask(j.at("mask").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.seed = j.value("seed", c.seed);
    c.patch = j.value("patch", c.patch);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad distill config: ") + e.what());
  }
  return c;
}

DistillState init_distill(const nets::Checkpoint& ckpt, const DistillConfig& cfg) {
  validate(cfg);
  nets::LocationModel teacher = nets::location_model(ckpt);
  nets::LocationModel student(teacher.config(), teacher.params().clone());
  nx::Adam opt(student.params(), nx::AdamConfig{cfg.lr});
  return DistillState{std::move(teacher), std::move(student), std::move(opt), 0,
                      Rng(derive_seed(cfg.seed, 0xD15))};
}

Tensor make_student_input(const Tensor& pano, const DistillConfig& cfg, Rng& rng,
                          const nets::LocationModel* saliency_model) {
  validate(cfg);
  if (pano.rank() != 3) throw InvalidArgument("make_student_input: expected [C, H, W]");
  const std::size_t H = pano.dim(1), W = pano.dim(2);
  // Every kind draws the same FoV so masks of all kinds hide the same budget.
  const double fov = rng.uniform(cfg.fov_lo, cfg.fov_hi);
  switch (cfg.mask) {
    case MaskKind::FoV: {
      const double center = rng.uniform(-180.0, 180.0);
      return geom::apply_mask(pano, geom::build_fov_mask(fov, center, W).to_image(H));
    }
    case MaskKind::RandomPatch:
      return geom::apply_mask(pano, geom::random_patch_mask(rng, H, W, cfg.patch, fov / 360.0));
    case MaskKind::MaxActivation: {
      if (!saliency_model) throw InvalidArgument("make_student_input: max-activation needs a model");
      const Tensor keep = geom::max_activation_mask(pano, saliency_model->ground_saliency(pano), 1.0 - fov / 360.0);
      return geom::apply_mask(pano, keep);
    }
  }
  throw InvalidArgument("make_student_input: unknown mask kind");
}

std::pair<Tensor, Tensor> distill_targets(const Tensor& h_t, const Tensor& h_s, const DistillConfig& cfg) {
  if (h_t.shape() != h_s.shape())
    throw InvalidArgument("distill_targets: shape mismatch " + nx::shape_str(h_t.shape()) + " vs " +
                          nx::shape_str(h_s.shape()));
  const Tensor ht = h_t.detach();
  switch (cfg.target) {
    case TargetKind::Sharpened:
      return {nx::softmax_temp(ht, cfg.tau).detach(), nx::softmax_temp(h_s, cfg.tau)};
    case TargetKind::Unsharpened:
      return {nx::softmax_temp(ht, 1.0).detach(), nx::softmax_temp(h_s, 1.0)};
    case TargetKind::SingleMode: {
      const auto v = ht.values();
      nx::detail::check_finite("distill_targets", v);
      const std::size_t best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
      Tensor one_hot(ht.shape(), 0.0);
      one_hot.mutable_values()[best] = 1.0;
      return {one_hot, nx::softmax_temp(h_s, cfg.tau)};
    }
  }
  throw InvalidArgument("distill_targets: unknown target kind");
}

Tensor distill_loss(const Tensor& p_t, const Tensor& p_s, const DistillConfig& cfg) {
  return cfg.loss == LossKind::CE ? nx::cross_entropy(p_t, p_s) : nx::kl_divergence(p_t, p_s);
}

void ema_update(nx::ParamStore& teacher, const nx::ParamStore& student, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw InvalidArgument("ema_update: alpha must be in [0, 1]");
  if (!teacher.compatible(student)) throw InvalidArgument("ema_update: incompatible parameter stores");
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    auto t = teacher.entries()[k].second.mutable_values();
    auto s = student.entries()[k].second.values();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
}

namespace {

[[noreturn]] void fail_with_dump(const DistillState& state, const DistillConfig& cfg, const std::string& why) {
  std::ostringstream msg;
  msg << "distillation diverged at step " << state.step << ": " << why;
  if (!cfg.dump_dir.empty()) {
    try {
      json extra = {{"distill", to_json(cfg)}, {"step", state.step}, {"reason", why}};
      nets::save_checkpoint(std::filesystem::path(cfg.dump_dir) / "teacher",
                            nets::location_checkpoint(state.teacher, extra));
      nets::save_checkpoint(std::filesystem::path(cfg.dump_dir) / "student",
                            nets::location_checkpoint(state.student, extra));
      msg << " (state dumped to " << cfg.dump_dir << ")";
    } catch (const std::exception& e) {
      msg << " (state dump failed: " << e.what() << ")";
    }
  }
  throw TrainingFailure(msg.str());
}

}  // namespace

double distill_step(DistillState& state, std::span<const DistillInput> batch, const DistillConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("distill_step: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0;
  state.student.params().zero_grad();
  try {
    for (const auto& x : batch) {
      Tensor h_t;
      {
        nx::NoGradGuard frozen;
        h_t = state.teacher.forward(x.pano, x.sat);
      }
      const Tensor masked = make_student_input(x.pano, cfg, state.rng, &state.student);
      const Tensor h_s = state.student.forward(masked, x.sat);
      const auto [p_t, p_s] = distill_targets(h_t, h_s, cfg);
      const Tensor loss = distill_loss(p_t, p_s, cfg);
      if (!std::isfinite(loss.item())) fail_with_dump(state, cfg, "non-finite loss");
      total += loss.item();
      nx::backward(nx::scale(loss, inv));
    }
  } catch (const NumericError& e) {
    fail_with_dump(state, cfg, e.what());
  }
  state.opt.step(state.student.params());
  ++state.step;
  if (cfg.teacher_update == TeacherUpdate::EMA) ema_update(state.teacher.params(), state.student.params(), cfg.alpha);
  return total * inv;
}

void end_epoch(DistillState& state, const DistillConfig& cfg) {
  if (cfg.teacher_update == TeacherUpdate::PrevStudent)
    state.teacher.params().copy_values_from(state.student.params());
}

json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"mean_loss", e.mean_loss},
          {"teacher_val_mean_m", e.teacher_val_mean_m},
          {"teacher_val_median_m", e.teacher_val_median_m},
          {"student_val_mean_m", e.student_val_mean_m},
          {"student_val_median_m", e.student_val_median_m}};
}

DistillResult run_distillation(const nets::Checkpoint& teacher_ckpt, const synth::Split& train,
                               const synth::Split& val, const DistillConfig& cfg,
                               const std::function<void(const EpochLog&)>& on_epoch) {
  DistillState state = init_distill(teacher_ckpt, cfg);
  if (cfg.epochs > 0 && train.samples.empty()) throw InvalidArgument("distill: empty train split");
  std::vector<DistillInput> inputs;
  inputs.reserve(train.samples.size());
  for (const auto& s : train.samples) inputs.push_back({nets::compensate(s.pano, s.gt.theta), s.sat});

  DistillResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = nets::shuffled_indices(inputs.size(), cfg.seed, epoch);
    double loss_sum = 0;
    std::vector<DistillInput> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch); ++k)
        batch.push_back(inputs[order[k]]);
      loss_sum += distill_step(state, batch, cfg) * static_cast<double>(batch.size());
    }
    end_epoch(state, cfg);
    EpochLog rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(order.size());
    const auto te = nets::localization_errors(state.teacher, val);
    const auto se = nets::localization_errors(state.student, val);
    rec.teacher_val_mean_m = nets::mean_of(te);
    rec.teacher_val_median_m = nets::median_of(te);
    rec.student_val_mean_m = nets::mean_of(se);
    rec.student_val_median_m = nets::median_of(se);
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  json extra = teacher_ckpt.extra;
  extra["distill"] = to_json(cfg);
  if (!result.log.empty()) extra["distill_final"] = to_json(result.log.back());
  if (cfg.epochs == 0) {
    result.refined_teacher = teacher_ckpt;
    result.refined_teacher.params = teacher_ckpt.params.clone();
  } else {
    result.refined_teacher = nets::location_checkpoint(state.teacher, extra);
  }
  result.student = nets::location_checkpoint(state.student, extra);
  return result;
}

}  // namespace geodistill::distill
