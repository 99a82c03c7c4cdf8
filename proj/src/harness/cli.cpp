#include "geodistill/harness/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "geodistill/error.hpp"
#include "geodistill/geometry/image_io.hpp"
#include "geodistill/harness/ablation.hpp"
#include "geodistill/harness/eval.hpp"
#include "geodistill/harness/experiment.hpp"
#include "geodistill/nets/checkpoint.hpp"
#include "geodistill/numerics/gdtn.hpp"
#include "geodistill/numerics/ops.hpp"

namespace geodistill::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by several subcommands; unset optionals leave the config alone.
struct Overrides {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> tau, alpha, fov_lo, fov_hi;
  std::optional<std::string> loss, teacher_update, mask;
};

void add_common(CLI::App* app, Overrides& o, bool data = true) {
  app->add_option("--config", o.config, "experiment config JSON")->check(CLI::ExistingFile);
  if (data) app->add_option("--data", o.data, "dataset directory");
  app->add_option("--out", o.out, "output path");
  app->add_option("--seed", o.seed, "random seed");
}

void add_distill_flags(CLI::App* app, Overrides& o) {
  app->add_option("--tau", o.tau, "sharpening temperature");
  app->add_option("--alpha", o.alpha, "EMA coefficient");
  app->add_option("--fov-lo", o.fov_lo, "smallest student FoV, degrees");
  app->add_option("--fov-hi", o.fov_hi, "largest student FoV, degrees");
  app->add_option("--loss", o.loss, "distillation loss")->check(CLI::IsMember({"ce", "kld"}));
  app->add_option("--teacher-update", o.teacher_update, "teacher update rule")
      ->check(CLI::IsMember({"ema", "fixed", "prev"}));
  app->add_option("--mask", o.mask, "student mask kind")->check(CLI::IsMember({"fov", "patch", "maxact"}));
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (!o.data.empty()) c.dataset = o.data;
  if (!o.out.empty()) c.out = o.out;
  if (o.seed) {
    c.pretrain.seed = c.orientation.seed = c.distill.seed = *o.seed;
    c.seeds = {*o.seed};
  }
  if (o.epochs) c.pretrain.epochs = c.orientation.epochs = c.distill.epochs = *o.epochs;
  if (o.tau) c.distill.tau = *o.tau;
  if (o.alpha) c.distill.alpha = *o.alpha;
  if (o.fov_lo) c.distill.fov_lo = *o.fov_lo;
  if (o.fov_hi) c.distill.fov_hi = *o.fov_hi;
  if (o.loss) c.distill.loss = distill::parse_loss(*o.loss);
  if (o.teacher_update) c.distill.teacher_update = distill::parse_teacher_update(*o.teacher_update);
  if (o.mask) c.distill.mask = distill::parse_mask(*o.mask);
  return c;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::string& need(const std::string& v, const char* flag) {
  if (v.empty()) throw UsageError(std::string("missing required ") + flag);
  return v;
}

std::string jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int cmd_gen(const ExperimentConfig& c, std::uint64_t seed) {
  const fs::path out = need(c.out, "--out");
  synth::make_dataset(c.dataset_spec, seed, out);
  log_line("wrote dataset " + out.string());
  return kExitOk;
}

int cmd_pretrain(const ExperimentConfig& c) {
  const fs::path root = need(c.dataset, "--data");
  const fs::path out = need(c.out, "--out");
  const auto spec = synth::read_dataset_spec(root);
  const auto train = synth::load_split(root, "train");
  const auto val = synth::load_split(root, "val");
  nets::ModelConfig mc = model_for_dataset(spec, c.model);
  mc.init_seed = c.pretrain.seed;
  nets::LocationModel m(mc);
  std::vector<json> log;
  const auto r = nets::pretrain_location(m, train, val, c.pretrain, [&](const nets::EpochRecord& e) {
    log.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"val_mean_m", e.val_mean},
                   {"val_median_m", e.val_median}});
    log_line(log.back().dump());
  });
  json extra = {{"train", nets::to_json(c.pretrain)}, {"best_epoch", r.best_epoch},
                {"best_val_mean_m", r.best_val_mean}, {"log", log}};
  nets::save_checkpoint(out, nets::location_checkpoint(m, extra));
  log_line("wrote checkpoint " + out.string());
  return kExitOk;
}

int cmd_train_orient(const ExperimentConfig& c, const std::string& init_dir) {
  const fs::path root = need(c.dataset, "--data");
  const fs::path out = need(c.out, "--out");
  const auto spec = synth::read_dataset_spec(root);
  const auto train = synth::load_split(root, "train");
  const auto val = synth::load_split(root, "val");
  nets::ModelConfig mc = model_for_dataset(spec, c.model);
  mc.init_seed = c.orientation.seed;
  nets::OrientationModel m(mc, c.orientation_spec);
  if (!init_dir.empty()) nets::warm_start(m, nets::location_model(nets::load_checkpoint(init_dir)));
  std::vector<json> log;
  const auto r = nets::train_orientation(m, train, val, c.orientation, [&](const nets::EpochRecord& e) {
    log.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"val_mean_deg", e.val_mean},
                   {"val_median_deg", e.val_median}});
    log_line(log.back().dump());
  });
  json extra = {{"train", nets::to_json(c.orientation)}, {"best_epoch", r.best_epoch},
                {"best_val_mean_deg", r.best_val_mean}, {"log", log}, {"init", init_dir}};
  nets::save_checkpoint(out, nets::orientation_checkpoint(m, extra));
  log_line("wrote checkpoint " + out.string());
  return kExitOk;
}

int cmd_distill(const ExperimentConfig& c, const std::string& teacher_dir) {
  const fs::path root = need(c.dataset, "--data");
  const fs::path out = need(c.out, "--out");
  const auto teacher = nets::load_checkpoint(need(teacher_dir, "--teacher"));
  const auto train = synth::load_split(root, "train");
  const auto val = synth::load_split(root, "val");
  check_compatible(teacher.model, train);
  std::vector<json> log;
  const auto r = distill::run_distillation(teacher, train, val, c.distill, [&](const distill::EpochLog& e) {
    log.push_back(distill::to_json(e));
    log_line(log.back().dump());
  });
  nets::save_checkpoint(out / "refined_teacher", r.refined_teacher);
  nets::save_checkpoint(out / "student", r.student);
  write_text_atomic(out / "log.jsonl", jsonl(log));
  log_line("wrote " + (out / "refined_teacher").string());
  return kExitOk;
}

void export_maps(const nets::LocationModel& m, const synth::Split& split, std::size_t count, double tau,
                 const fs::path& dir) {
  fs::create_directories(dir);
  nx::NoGradGuard guard;
  for (std::size_t i = 0; i < std::min(count, split.samples.size()); ++i) {
    const auto& s = split.samples[i];
    const nx::Tensor h = m.forward(nets::compensate(s.pano, s.gt.theta), s.sat);
    const nx::Tensor p = nx::softmax_temp(h, tau);
    const std::string stem = (dir / (split.name + "_" + synth::sample_stem(i))).string();
    geom::write_pnm(stem + ".heatmap.pgm", h, true);
    geom::write_pnm(stem + ".prob.pgm", p, true);
    geom::write_csv(stem + ".prob.csv", p);
    geom::write_pnm(stem + ".sat.ppm", s.sat);
  }
}

int cmd_eval(const ExperimentConfig& c, const std::string& ckpt_dir, const std::string& orient_dir,
             const std::string& split_name, const std::string& export_dir, std::size_t export_count) {
  const fs::path root = need(c.dataset, "--data");
  // Everything is loaded before anything is written.
  const auto loc = nets::load_checkpoint(need(ckpt_dir, "--ckpt"));
  std::optional<nets::Checkpoint> orient;
  if (!orient_dir.empty()) orient = nets::load_checkpoint(orient_dir);
  std::vector<std::string> names;
  if (split_name == "all") names = {"test_same", "test_cross"};
  else names = {split_name};
  json reports = json::object();
  std::string summary;
  std::vector<synth::Split> splits;
  for (const auto& n : names) splits.push_back(synth::load_split(root, n));
  for (const auto& split : splits) {
    const EvalReport r = orient ? eval_3dof(*orient, loc, split) : eval_localization(loc, split);
    reports[split.name] = to_json(r);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s: mean %.3f m, median %.3f m, yaw mean %.3f deg, median %.3f deg (n=%zu)",
                  split.name.c_str(), r.mean_m, r.median_m, r.mean_deg, r.median_deg, r.records.size());
    summary += std::string(buf) + "\n";
  }
  const json doc = names.size() == 1 ? reports[names[0]] : reports;
  if (!c.out.empty()) write_text_atomic(c.out, doc.dump(2) + "\n");
  if (!export_dir.empty()) {
    const auto m = nets::location_model(loc);
    for (const auto& split : splits) export_maps(m, split, export_count, c.distill.tau, export_dir);
  }
  std::cout << summary;
  return kExitOk;
}

int cmd_ablate(const ExperimentConfig& c, const std::string& teacher_dir, const std::string& suite) {
  const fs::path root = need(c.dataset, "--data");
  const fs::path out = need(c.out, "--out");
  suite_variants(suite, c.distill);  // unknown suite fails before any loading
  const auto teacher = nets::load_checkpoint(need(teacher_dir, "--teacher"));
  const auto train = synth::load_split(root, "train");
  const auto val = synth::load_split(root, "val");
  const auto same = synth::load_split(root, "test_same");
  const auto cross = synth::load_split(root, "test_cross");
  check_compatible(teacher.model, train);
  const auto table = run_ablation(suite, teacher, {&train, &val, &same, &cross}, c.distill, c.pretrain, c.seeds,
                                  [](const std::string& v, std::uint64_t s) {
                                    log_line("running " + v + " seed " + std::to_string(s));
                                  });
  write_text_atomic(out / (suite + ".json"), to_json(table).dump(2) + "\n");
  const std::string text = to_text(table);
  write_text_atomic(out / (suite + ".txt"), text);
  std::cout << text;
  return kExitOk;
}

int cmd_export(const std::string& in, const std::string& out, bool raw) {
  const nx::Tensor t = nx::read_gdtn(need(in, "--in"));
  const std::string dst = need(out, "--out");
  const std::string ext = fs::path(dst).extension().string();
  if (ext == ".csv") {
    geom::write_csv(dst, t);
  } else if (ext == ".pgm" || ext == ".ppm") {
    geom::write_pnm(dst, t, !raw);
  } else {
    throw UsageError("--out must end in .pgm, .ppm or .csv");
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"GeoDistill desk-scale pipeline"};
  app.require_subcommand(1);
  Overrides o;
  std::string teacher, ckpt, orient, split = "test_cross", export_dir, suite, in;
  std::size_t export_count = 4;
  bool raw = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, o, false);

  auto* pre = app.add_subcommand("pretrain", "supervised location pretraining");
  add_common(pre, o);
  pre->add_option("--epochs", o.epochs, "training epochs");

  auto* ori = app.add_subcommand("train-orient", "train the orientation classifier");
  add_common(ori, o);
  ori->add_option("--epochs", o.epochs, "training epochs");
  ori->add_option("--init", teacher, "location checkpoint whose encoders start the orientation encoders");

  auto* dis = app.add_subcommand("distill", "teacher-student self-distillation");
  add_common(dis, o);
  add_distill_flags(dis, o);
  dis->add_option("--epochs", o.epochs, "distillation epochs");
  dis->add_option("--teacher", teacher, "teacher checkpoint directory");

  auto* ev = app.add_subcommand("eval", "evaluate a location checkpoint");
  add_common(ev, o);
  ev->add_option("--ckpt", ckpt, "location checkpoint directory");
  ev->add_option("--orient", orient, "orientation checkpoint; enables 3-DoF evaluation");
  ev->add_option("--split", split, "split name or 'all'");
  ev->add_option("--tau", o.tau, "temperature for exported probability maps");
  ev->add_option("--export-dir", export_dir, "write heatmap/probability images here");
  ev->add_option("--export-count", export_count, "samples to export per split");

  auto* ab = app.add_subcommand("ablate", "run an ablation suite");
  add_common(ab, o);
  add_distill_flags(ab, o);
  ab->add_option("--epochs", o.epochs, "distillation epochs");
  ab->add_option("--teacher", teacher, "teacher checkpoint directory");
  ab->add_option("--suite", suite, "mask | target | fov | teacher | loss | augmentation")->required();
  std::vector<std::uint64_t> seeds;
  ab->add_option("--seeds", seeds, "seed list")->delimiter(',');

  auto* ex = app.add_subcommand("export", "dump a GDTN tensor to PGM/PPM/CSV");
  ex->add_option("--in", in, "GDTN file")->required();
  ex->add_option("--out", o.out, "output .pgm, .ppm or .csv")->required();
  ex->add_flag("--raw", raw, "clamp to [0, 1] instead of min/max normalizing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ex) return cmd_export(in, o.out, raw);
    ExperimentConfig c = resolve(o);
    if (*gen) return cmd_gen(c, o.seed.value_or(c.seeds.front()));
    if (*pre) return cmd_pretrain(c);
    if (*ori) return cmd_train_orient(c, teacher);
    if (*dis) {
      distill::validate(c.distill);
      return cmd_distill(c, teacher);
    }
    if (*ev) return cmd_eval(c, ckpt, orient, split, export_dir, export_count);
    if (*ab) {
      if (!seeds.empty()) c.seeds = seeds;
      distill::validate(c.distill);
      return cmd_ablate(c, teacher, suite);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const TrainingFailure& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return kExitTraining;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const GenerationFailure& e) {
    std::cerr << "generation failure: " << e.what() << "\n";
    return kExitGeneration;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace geodistill::harness
