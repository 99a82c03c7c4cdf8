#include "geodistill/nets/models.hpp"

#include <cmath>
#include <numbers>

#include "geodistill/error.hpp"
#include "geodistill/geometry/panorama.hpp"
#include "geodistill/numerics/rng.hpp"

namespace geodistill::nets {

using nlohmann::json;

namespace {

constexpr double kRad = std::numbers::pi / 180.0;

void add_he(ParamStore& store, const std::string& name, nx::Shape shape, std::size_t fan_in, Rng& rng) {
  std::vector<double> v(nx::shape_numel(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = sd * rng.normal();
  store.add(name, std::move(shape), std::move(v));
}

void add_zero(ParamStore& store, const std::string& name, std::size_t n) {
  store.add(name, {n}, std::vector<double>(n, 0.0));
}

std::size_t odd_classes(std::size_t n) {
  if (n == 0 || n % 2 == 0) throw InvalidArgument("orientation: class count must be odd");
  return n;
}

void require_image(const char* what, const Tensor& t, std::size_t h, std::size_t w) {
  if (!t.defined() || t.rank() != 3 || t.dim(0) != 3 || t.dim(1) != h || t.dim(2) != w)
    throw InvalidArgument(std::string(what) + ": expected [3, " + std::to_string(h) + ", " +
                          std::to_string(w) + "], got " +
                          (t.defined() ? nx::shape_str(t.shape()) : std::string("undefined")));
}

}  // namespace

void add_encoder_params(ParamStore& store, const std::string& prefix, std::size_t in_channels,
                        const EncoderSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t cin = in_channels;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t cout = spec.channels[l];
    const std::string base = prefix + ".conv" + std::to_string(l + 1);
    add_he(store, base + ".w", {cout, cin, 3, 3}, cin * 9, rng);
    add_zero(store, base + ".b", cout);
    cin = cout;
  }
}

Tensor encode(const ParamStore& store, const std::string& prefix, const Tensor& x) {
  static constexpr std::size_t strides[3] = {1, 2, 1};
  Tensor h = x;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string base = prefix + ".conv" + std::to_string(l + 1);
    h = nx::conv2d(h, store.at(base + ".w"), store.at(base + ".b"), strides[l], 1);
    if (l < 2) h = nx::relu(h);
  }
  return h;
}

json to_json(const ModelConfig& c) {
  return {{"pano_h", c.pano_h},
          {"pano_w", c.pano_w},
          {"sat_size", c.sat_size},
          {"bev", {{"camera_height", c.bev.camera_height}, {"side_m", c.bev.side_m}, {"size", c.bev.size}}},
          {"encoder_channels", c.encoder.channels},
          {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.pano_h = j.value("pano_h", c.pano_h);
    c.pano_w = j.value("pano_w", c.pano_w);
    c.sat_size = j.value("sat_size", c.sat_size);
    if (j.contains("bev")) {
      const json& b = j.at("bev");
      c.bev.camera_height = b.value("camera_height", c.bev.camera_height);
      c.bev.side_m = b.value("side_m", c.bev.side_m);
      c.bev.size = b.value("size", c.bev.size);
    }
    if (j.contains("encoder_channels")) c.encoder.channels = j.at("encoder_channels").get<std::array<std::size_t, 3>>();
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad model config: ") + e.what());
  }
  return c;
}

std::pair<double, double> cell_center(std::size_t a, std::size_t b) {
  const double k = static_cast<double>(kHeatmapStride);
  return {k * static_cast<double>(b) + k / 2, k * static_cast<double>(a) + k / 2};
}

std::pair<std::size_t, std::size_t> pixel_cell(double u, double v, std::size_t grid) {
  const double k = static_cast<double>(kHeatmapStride);
  auto clampi = [&](double t) {
    const double f = std::floor(t / k);
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(grid - 1)));
  };
  return {clampi(v), clampi(u)};
}

PixelPos heatmap_argmax(const Tensor& h) {
  if (!h.defined() || h.rank() != 2 || h.numel() == 0) throw InvalidArgument("heatmap_argmax: expected [G, G]");
  auto v = h.values();
  nx::detail::check_finite("heatmap_argmax", v);
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  const auto [u, vv] = cell_center(best / h.dim(1), best % h.dim(1));
  return {u, vv};
}

LocationModel::LocationModel(const ModelConfig& cfg) : LocationModel(cfg, ParamStore{}) {}

LocationModel::LocationModel(const ModelConfig& cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)), warp_(cfg.pano_h, cfg.pano_w, cfg.bev) {
  if (cfg.bev.size % 4 != 0 || cfg.sat_size % 4 != 0 || cfg.sat_size < cfg.bev.size)
    throw InvalidArgument("LocationModel: BEV and satellite sizes must be multiples of 4, satellite >= BEV");
  ParamStore fresh;
  add_encoder_params(fresh, "ground", 3, cfg.encoder, derive_seed(cfg.init_seed, 1));
  add_encoder_params(fresh, "sat", 3, cfg.encoder, derive_seed(cfg.init_seed, 2));
  if (params_.size() == 0) {
    params_ = std::move(fresh);
  } else if (!params_.compatible(fresh)) {
    throw InvalidArgument("LocationModel: parameters do not match the architecture");
  }

  // Precompute which ground feature cell each panorama pixel projects to.
  const std::size_t H = cfg.pano_h, W = cfg.pano_w, S = cfg.bev.size, F = S / 2;
  const double mpp = cfg.bev.side_m / static_cast<double>(S);
  const double half = (static_cast<double>(S) - 1.0) / 2.0;
  pano_to_feature_.assign(H * W, -1);
  for (std::size_t r = 0; r < H; ++r) {
    const double pitch = geom::row_pitch(static_cast<double>(r), H);
    if (pitch >= 0) continue;
    const double d = cfg.bev.camera_height / std::tan(-pitch * kRad);
    for (std::size_t c = 0; c < W; ++c) {
      const double az = geom::column_azimuth(static_cast<double>(c), W) * kRad;
      const double j = d * std::sin(az) / mpp + half;
      const double i = half - d * std::cos(az) / mpp;
      const double fi = std::round(i) / 2.0, fj = std::round(j) / 2.0;
      if (fi < 0 || fj < 0 || fi >= static_cast<double>(F) || fj >= static_cast<double>(F)) continue;
      pano_to_feature_[r * W + c] =
          static_cast<std::ptrdiff_t>(static_cast<std::size_t>(fi) * F + static_cast<std::size_t>(fj));
    }
  }
}

void LocationModel::check_inputs(const Tensor& pano, const Tensor& sat) const {
  require_image("location_forward pano", pano, cfg_.pano_h, cfg_.pano_w);
  require_image("location_forward sat", sat, cfg_.sat_size, cfg_.sat_size);
}

Tensor LocationModel::ground_features(const Tensor& pano) const {
  require_image("ground_features pano", pano, cfg_.pano_h, cfg_.pano_w);
  return encode(params_, "ground", warp_(pano));
}

Tensor LocationModel::forward(const Tensor& pano, const Tensor& sat) const {
  check_inputs(pano, sat);
  const Tensor g = encode(params_, "ground", warp_(pano));
  const Tensor s = encode(params_, "sat", sat);
  // Anchor puts the camera (BEV center) on the cell whose center is 2a+1.
  const std::size_t anchor = cfg_.bev.size / 4 - 1;
  return nx::normalized_xcorr(g, s, anchor, anchor, feature_validity(pano));
}

std::vector<std::uint8_t> LocationModel::feature_validity(const Tensor& pano) const {
  const std::size_t H = pano.dim(1), W = pano.dim(2), HW = H * W;
  std::vector<double> valid(HW, 0.0);
  bool any_hole = false;
  for (std::size_t p = 0; p < HW; ++p) {
    for (std::size_t c = 0; c < pano.dim(0); ++c)
      if (pano.at(c * HW + p) != 0.0) {
        valid[p] = 1.0;
        break;
      }
    any_hole = any_hole || valid[p] == 0.0;
  }
  if (!any_hole) return {};
  nx::NoGradGuard guard;
  const Tensor bev = warp_(Tensor({1, H, W}, std::move(valid)));
  const std::size_t S = bev.dim(1), F = S / 2;
  // A feature cell counts when its whole 2x2 BEV block sampled observed pixels only.
  std::vector<std::uint8_t> out(F * F, 1);
  bool any_invalid = false;
  for (std::size_t i = 0; i < F; ++i)
    for (std::size_t j = 0; j < F; ++j)
      for (std::size_t di = 0; di < 2; ++di)
        for (std::size_t dj = 0; dj < 2; ++dj)
          if (bev.at((2 * i + di) * S + 2 * j + dj) < 1.0 - 1e-9) {
            out[i * F + j] = 0;
            any_invalid = true;
          }
  if (!any_invalid) return {};
  return out;
}

Tensor LocationModel::ground_saliency(const Tensor& pano) const {
  nx::NoGradGuard guard;
  const Tensor f = ground_features(pano);
  const std::size_t C = f.dim(0), FF = f.dim(1) * f.dim(2);
  std::vector<double> norm(FF, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < FF; ++i) norm[i] += f.at(c * FF + i) * f.at(c * FF + i);
  for (auto& n : norm) n = std::sqrt(n);
  std::vector<double> out(pano_to_feature_.size(), 0.0);
  for (std::size_t p = 0; p < out.size(); ++p)
    if (pano_to_feature_[p] >= 0) out[p] = norm[static_cast<std::size_t>(pano_to_feature_[p])];
  return Tensor({cfg_.pano_h, cfg_.pano_w}, std::move(out));
}

double class_offset(std::size_t c, std::size_t n) {
  return static_cast<double>(c) - (static_cast<double>(n) - 1.0) / 2.0;
}

OrientationModel::OrientationModel(const ModelConfig& cfg, const OrientationSpec& spec)
    : OrientationModel(cfg, spec, ParamStore{}) {}

OrientationModel::OrientationModel(const ModelConfig& cfg, const OrientationSpec& spec, ParamStore params)
    : cfg_(cfg), spec_(spec), params_(std::move(params)), warp_(cfg.pano_h, cfg.pano_w, cfg.bev) {
  odd_classes(spec.classes);
  if (cfg.sat_size != 2 * cfg.bev.size)
    throw InvalidArgument("OrientationModel: satellite must be twice the BEV size");
  if (cfg.bev.size % 4 != 0) throw InvalidArgument("OrientationModel: BEV size must be a multiple of 4");
  if (spec.candidates < 2 || spec.hidden == 0) throw InvalidArgument("OrientationModel: need >= 2 candidates");
  if (!(spec.score_tau > 0) || !(spec.profile_tau > 0))
    throw InvalidArgument("OrientationModel: temperatures must be positive");
  ParamStore fresh;
  add_encoder_params(fresh, "eg", 3, cfg.encoder, derive_seed(cfg.init_seed, 11));
  add_encoder_params(fresh, "es", 3, cfg.encoder, derive_seed(cfg.init_seed, 12));
  Rng rng(derive_seed(cfg.init_seed, 13));
  add_he(fresh, "mlp.fc1.w", {spec.candidates, spec.hidden}, spec.candidates, rng);
  add_zero(fresh, "mlp.fc1.b", spec.hidden);
  add_he(fresh, "mlp.fc2.w", {spec.hidden, spec.classes}, spec.hidden, rng);
  add_zero(fresh, "mlp.fc2.b", spec.classes);
  if (params_.size() == 0) {
    params_ = std::move(fresh);
  } else if (!params_.compatible(fresh)) {
    throw InvalidArgument("OrientationModel: parameters do not match the architecture");
  }
  // A hypothesis r means the true yaw is prior + r; the ground features are
  // turned back by r before matching.
  for (std::size_t k = 0; k < spec.candidates; ++k)
    rotations_.push_back(geom::topdown_rotation_grid(cfg.bev.size / 2, -candidate_offset(k)));
}

double OrientationModel::candidate_offset(std::size_t k) const {
  const double half = (static_cast<double>(spec_.classes) - 1.0) / 2.0;
  return -half + 2.0 * half * static_cast<double>(k) / static_cast<double>(spec_.candidates - 1);
}

Tensor OrientationModel::profile(const Tensor& pano, const Tensor& sat, double prior_deg) const {
  require_image("orient_forward pano", pano, cfg_.pano_h, cfg_.pano_w);
  require_image("orient_forward sat", sat, cfg_.sat_size, cfg_.sat_size);
  const Tensor fg = encode(params_, "eg", warp_(geom::rotate_panorama(pano, -prior_deg)));
  // Pooled satellite features have the ground map's cell size.
  const Tensor fs = nx::avg_pool2(encode(params_, "es", sat));
  const std::size_t anchor = cfg_.bev.size / 8 - 1;
  Tensor out;
  for (const auto& grid : rotations_) {
    const Tensor g = nx::avg_pool2(nx::grid_sample(fg, grid));
    const Tensor h = nx::normalized_xcorr(g, fs, anchor, anchor);
    const Tensor score = nx::reshape(nx::sum(nx::mul(nx::softmax_temp(h, spec_.score_tau), h)), {1, 1, 1});
    out = out.defined() ? nx::concat_channels(out, score) : score;
  }
  return nx::reshape(out, {spec_.candidates});
}

Tensor OrientationModel::forward(const Tensor& pano, const Tensor& sat, double prior_deg) const {
  const Tensor p = nx::softmax_temp(profile(pano, sat, prior_deg), spec_.profile_tau);
  Tensor h = nx::matmul(nx::reshape(p, {1, spec_.candidates}), params_.at("mlp.fc1.w"));
  h = nx::relu(nx::add(nx::reshape(h, {spec_.hidden}), params_.at("mlp.fc1.b")));
  Tensor logits = nx::matmul(nx::reshape(h, {1, spec_.hidden}), params_.at("mlp.fc2.w"));
  return nx::add(nx::reshape(logits, {spec_.classes}), params_.at("mlp.fc2.b"));
}

void warm_start(OrientationModel& o, const LocationModel& loc) {
  for (const auto& [from, to] : {std::pair{"ground", "eg"}, std::pair{"sat", "es"}})
    for (std::size_t l = 1; l <= 3; ++l)
      for (const char* part : {".w", ".b"}) {
        const std::string suffix = ".conv" + std::to_string(l) + part;
        const Tensor& src = loc.params().at(from + suffix);
        Tensor& dst = o.params().at(to + suffix);
        if (src.shape() != dst.shape())
          throw InvalidArgument("warm_start: encoder shapes differ at " + std::string(to) + suffix);
        auto d = dst.mutable_values();
        std::copy(src.values().begin(), src.values().end(), d.begin());
      }
}

double OrientationModel::predict_yaw(const Tensor& pano, const Tensor& sat, double prior_deg) const {
  nx::NoGradGuard guard;
  const Tensor logits = forward(pano, sat, prior_deg);
  auto v = logits.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return prior_deg + class_offset(best, spec_.classes);
}

Tensor smooth_labels(double true_offset, std::size_t n, double sigma) {
  odd_classes(n);
  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  if (!std::isfinite(true_offset) || std::abs(true_offset) > half)
    throw InvalidArgument("smooth_labels: offset outside the class range");
  if (!(sigma > 0)) throw InvalidArgument("smooth_labels: sigma must be positive");
  std::vector<double> v(n);
  double best = 1e300;
  for (std::size_t c = 0; c < n; ++c) {
    const double d = class_offset(c, n) - true_offset;
    best = std::min(best, d * d);
  }
  // Exponents are shifted by the nearest class so tiny sigma stays finite.
  double z = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const double d = class_offset(c, n) - true_offset;
    v[c] = std::exp(-(d * d - best) / (2 * sigma * sigma));
    z += v[c];
  }
  for (auto& x : v) x /= z;
  return Tensor({n}, std::move(v));
}

Tensor location_target(double u, double v, std::size_t grid, double sigma_cells) {
  if (grid == 0 || !(sigma_cells > 0)) throw InvalidArgument("location_target: bad grid or sigma");
  const double k = static_cast<double>(kHeatmapStride);
  std::vector<double> t(grid * grid);
  double z = 0;
  for (std::size_t a = 0; a < grid; ++a)
    for (std::size_t b = 0; b < grid; ++b) {
      const auto [cu, cv] = cell_center(a, b);
      const double du = (cu - u) / k, dv = (cv - v) / k;
      t[a * grid + b] = std::exp(-(du * du + dv * dv) / (2 * sigma_cells * sigma_cells));
      z += t[a * grid + b];
    }
  for (auto& x : t) x /= z;
  return Tensor({grid, grid}, std::move(t));
}

}  // namespace geodistill::nets
