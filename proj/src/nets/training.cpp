#include "geodistill/nets/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geodistill/error.hpp"
#include "geodistill/geometry/panorama.hpp"
#include "geodistill/numerics/adam.hpp"
#include "geodistill/numerics/rng.hpp"

namespace geodistill::nets {

using nlohmann::json;

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"lr", c.lr},
          {"batch", c.batch},           {"seed", c.seed},
          {"tau_pre", c.tau_pre},       {"sigma_cells", c.sigma_cells},
          {"orient_sigma", c.orient_sigma}, {"fov_augment", c.fov_augment},
          {"fov_lo", c.fov_lo},         {"fov_hi", c.fov_hi}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.seed = j.value("seed", c.seed);
    c.tau_pre = j.value("tau_pre", c.tau_pre);
    c.sigma_cells = j.value("sigma_cells", c.sigma_cells);
    c.orient_sigma = j.value("orient_sigma", c.orient_sigma);
    c.fov_augment = j.value("fov_augment", c.fov_augment);
    c.fov_lo = j.value("fov_lo", c.fov_lo);
    c.fov_hi = j.value("fov_hi", c.fov_hi);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad training config: ") + e.what());
  }
  return c;
}

nx::Tensor compensate(const nx::Tensor& pano, double theta_deg) {
  return geom::rotate_panorama(pano, -theta_deg);
}

std::vector<double> localization_errors(const LocationModel& m, const synth::Split& split) {
  nx::NoGradGuard guard;
  std::vector<double> out;
  out.reserve(split.samples.size());
  for (const auto& s : split.samples) {
    const PixelPos p = heatmap_argmax(m.forward(compensate(s.pano, s.gt.theta), s.sat));
    out.push_back(split.sat_res * std::hypot(p.u - s.gt.u, p.v - s.gt.v));
  }
  return out;
}

std::vector<double> yaw_errors(const OrientationModel& m, const synth::Split& split) {
  std::vector<double> out;
  out.reserve(split.samples.size());
  for (const auto& s : split.samples) {
    const double yaw = m.predict_yaw(s.pano, s.sat, s.yaw_prior);
    out.push_back(std::abs(synth::wrap_deg(yaw - s.gt.theta)));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 7'000'000 + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

namespace {

void validate(const TrainConfig& cfg, const synth::Split& train) {
  if (cfg.batch == 0) throw InvalidArgument("training: batch must be positive");
  if (!(cfg.lr >= 0)) throw InvalidArgument("training: lr must be nonnegative");
  if (train.samples.empty() && cfg.epochs > 0) throw InvalidArgument("training: empty train split");
  if (cfg.fov_augment && !(cfg.fov_lo > 0 && cfg.fov_lo <= cfg.fov_hi && cfg.fov_hi <= 360))
    throw InvalidArgument("training: invalid FoV range");
}

using LossFn = std::function<nx::Tensor(const synth::Sample&, Rng&)>;
using EvalFn = std::function<std::pair<double, double>()>;

// Generic minibatch loop. loss_of builds the per-sample loss; evaluate
// returns (mean, median) on the validation split.
TrainResult run_loop(nx::ParamStore& params, const synth::Split& train, const TrainConfig& cfg,
                     const LossFn& loss_of, const EvalFn& evaluate, const EpochCallback& on_epoch) {
  nx::Adam opt(params, nx::AdamConfig{cfg.lr});
  TrainResult result;
  auto [m0, med0] = evaluate();
  result.best_val_mean = m0;
  nx::ParamStore best = params.clone();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.samples.size(), cfg.seed, epoch);
    Rng aug(derive_seed(cfg.seed, 8'000'000 + epoch));
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const nx::Tensor loss = loss_of(train.samples[order[k]], aug);
        if (!std::isfinite(loss.item())) throw TrainingFailure("training diverged: non-finite loss");
        loss_sum += loss.item();
        nx::backward(nx::scale(loss, inv));
      }
      opt.step(params);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(order.size());
    std::tie(rec.val_mean, rec.val_median) = evaluate();
    result.log.push_back(rec);
    if (rec.val_mean < result.best_val_mean) {
      result.best_val_mean = rec.val_mean;
      result.best_epoch = epoch;
      best = params.clone();
    }
    if (on_epoch) on_epoch(rec);
  }
  params.copy_values_from(best);
  params.zero_grad();
  return result;
}

TrainResult run(nx::ParamStore& params, const synth::Split& train, const TrainConfig& cfg,
                const LossFn& loss_of, const EvalFn& evaluate, const EpochCallback& on_epoch) {
  validate(cfg, train);
  try {
    return run_loop(params, train, cfg, loss_of, evaluate, on_epoch);
  } catch (const NumericError& e) {
    throw TrainingFailure(std::string("training diverged: ") + e.what());
  }
}

nx::Tensor maybe_mask(const nx::Tensor& pano, const TrainConfig& cfg, Rng& rng) {
  if (!cfg.fov_augment) return pano;
  const double fov = rng.uniform(cfg.fov_lo, cfg.fov_hi);
  const double center = rng.uniform(-180.0, 180.0);
  return geom::apply_mask(pano, geom::build_fov_mask(fov, center, pano.dim(2)).to_image(pano.dim(1)));
}

}  // namespace

TrainResult pretrain_location(LocationModel& m, const synth::Split& train, const synth::Split& val,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  const std::size_t G = m.grid();
  auto loss_of = [&](const synth::Sample& s, Rng& rng) {
    const nx::Tensor pano = maybe_mask(compensate(s.pano, s.gt.theta), cfg, rng);
    const nx::Tensor target = location_target(s.gt.u, s.gt.v, G, cfg.sigma_cells);
    return nx::cross_entropy(target, nx::softmax_temp(m.forward(pano, s.sat), cfg.tau_pre));
  };
  auto evaluate = [&] {
    const auto e = localization_errors(m, val);
    return std::make_pair(mean_of(e), median_of(e));
  };
  return run(m.params(), train, cfg, loss_of, evaluate, on_epoch);
}

TrainResult train_orientation(OrientationModel& m, const synth::Split& train,
                              const synth::Split& val, const TrainConfig& cfg,
                              const EpochCallback& on_epoch) {
  auto loss_of = [&](const synth::Sample& s, Rng&) {
    const double offset = synth::wrap_deg(s.gt.theta - s.yaw_prior);
    const nx::Tensor target = smooth_labels(offset, m.spec().classes, cfg.orient_sigma);
    return nx::cross_entropy(target, nx::softmax_temp(m.forward(s.pano, s.sat, s.yaw_prior), 1.0));
  };
  auto evaluate = [&] {
    const auto e = yaw_errors(m, val);
    return std::make_pair(mean_of(e), median_of(e));
  };
  return run(m.params(), train, cfg, loss_of, evaluate, on_epoch);
}

}  // namespace geodistill::nets
