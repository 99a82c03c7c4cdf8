#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "geodistill/error.hpp"
#include "geodistill/harness/ablation.hpp"
#include "geodistill/harness/cli.hpp"
#include "geodistill/harness/eval.hpp"
#include "geodistill/harness/experiment.hpp"
#include "geodistill/nets/checkpoint.hpp"
#include "geodistill/nets/training.hpp"

namespace geodistill::harness {
namespace {

namespace fs = std::filesystem;

SampleRecord rec(double err) {
  SampleRecord r;
  r.loc_err_m = err;
  return r;
}

TEST(Report, AggregateExamples) {
  const EvalReport a = make_report("x", {rec(1), rec(2), rec(3)});
  EXPECT_DOUBLE_EQ(a.mean_m, 2.0);
  EXPECT_DOUBLE_EQ(a.median_m, 2.0);
  const EvalReport b = make_report("x", {rec(1), rec(2), rec(3), rec(10)});
  EXPECT_DOUBLE_EQ(b.mean_m, 4.0);
  EXPECT_DOUBLE_EQ(b.median_m, 2.0);  // lower middle
}

TEST(Report, YawErrorWraps) {
  EXPECT_DOUBLE_EQ(yaw_error(-179, 179), 2.0);
  EXPECT_DOUBLE_EQ(yaw_error(179, -179), 2.0);
  for (int k = -3; k <= 3; ++k) EXPECT_EQ(yaw_error(37.5, 37.5 + 360.0 * k), 0.0) << k;
  EXPECT_DOUBLE_EQ(yaw_error(0, 180), 180.0);
  EXPECT_DOUBLE_EQ(yaw_error(10, 350), 20.0);
}

synth::DatasetSpec tiny_spec() {
  synth::DatasetSpec ds;
  ds.same_area_scenes = 2;
  ds.cross_area_scenes = 1;
  ds.splits = {{"train", 8, false}, {"val", 4, false}, {"test_same", 4, false}, {"test_cross", 4, true}};
  return ds;
}

const synth::Split& tiny_split() {
  static const synth::Split s = synth::generate_split(tiny_spec(), 5, {"test_cross", 6, true});
  return s;
}

TEST(EvalLocalization, PerfectStubIsZero) {
  const auto& split = tiny_split();
  std::size_t i = 0;
  auto perfect = [&](const nx::Tensor&, const nx::Tensor&) {
    const auto& gt = split.samples[i++].gt;
    return nets::PixelPos{gt.u, gt.v};
  };
  const EvalReport r = eval_localization(perfect, split);
  EXPECT_EQ(r.mean_m, 0.0);
  EXPECT_EQ(r.median_m, 0.0);
  EXPECT_EQ(r.records.size(), split.samples.size());
}

TEST(EvalLocalization, MetersScaleWithResolution) {
  synth::Split split = tiny_split();
  auto fixed = [](const nx::Tensor&, const nx::Tensor&) { return nets::PixelPos{3.0, 41.0}; };
  const EvalReport a = eval_localization(fixed, split);
  split.sat_res *= 2.0;
  const EvalReport b = eval_localization(fixed, split);
  for (std::size_t k = 0; k < a.records.size(); ++k)
    EXPECT_EQ(b.records[k].loc_err_m, 2.0 * a.records[k].loc_err_m);
}

TEST(Eval3Dof, OracleOrientationMatchesLocalization) {
  const auto& split = tiny_split();
  const nets::LocationModel m{nets::ModelConfig{}};
  const auto loc = location_predictor(m);
  std::size_t i = 0;
  auto oracle = [&](const nx::Tensor&, const nx::Tensor&, double) { return split.samples[i++].gt.theta; };
  const EvalReport a = eval_localization(loc, split);
  const EvalReport b = eval_3dof(oracle, loc, split);
  EXPECT_EQ(a.mean_m, b.mean_m);
  EXPECT_EQ(a.median_m, b.median_m);
  EXPECT_EQ(b.mean_deg, 0.0);
}

TEST(Eval3Dof, PriorStubReportsPriorNoise) {
  const auto& split = tiny_split();
  auto loc = [](const nx::Tensor&, const nx::Tensor&) { return nets::PixelPos{32, 32}; };
  auto at_prior = [](const nx::Tensor&, const nx::Tensor&, double prior) { return prior; };
  const EvalReport r = eval_3dof(at_prior, loc, split);
  for (std::size_t k = 0; k < r.records.size(); ++k) {
    const auto& s = split.samples[k];
    EXPECT_DOUBLE_EQ(r.records[k].yaw_err_deg, std::abs(synth::wrap_deg(s.yaw_prior - s.gt.theta)));
    EXPECT_LE(r.records[k].yaw_err_deg, 45.0);
  }
}

TEST(Report, JsonRoundTripAndRecomputedAggregates) {
  const auto& split = tiny_split();
  const nets::LocationModel m{nets::ModelConfig{}};
  auto yaw = [](const nx::Tensor&, const nx::Tensor&, double prior) { return prior + 3.25; };
  const EvalReport r = eval_3dof(yaw, location_predictor(m), split);
  const std::string text = to_json(r).dump();
  const EvalReport back = report_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(to_json(back).dump(), text);
  const EvalReport again = make_report(back.split, back.records);
  EXPECT_EQ(again.mean_m, r.mean_m);
  EXPECT_EQ(again.median_m, r.median_m);
  EXPECT_EQ(again.mean_deg, r.mean_deg);
  EXPECT_EQ(again.median_deg, r.median_deg);
  EXPECT_THROW(report_from_json(nlohmann::json::parse(R"({"split": "x"})")), InvalidArgument);
}

TEST(EvalLocalization, IncompatibleCheckpoint) {
  nets::ModelConfig c;
  c.sat_size = 32;
  c.bev.size = 16;
  const auto ckpt = nets::location_checkpoint(nets::LocationModel(c));
  EXPECT_THROW(eval_localization(ckpt, tiny_split()), InvalidArgument);
}

TEST(Ablation, SuitesAndVariants) {
  const distill::DistillConfig base;
  EXPECT_THROW(suite_variants("nope", base), InvalidArgument);
  for (const auto& s : ablation_suites()) EXPECT_FALSE(suite_variants(s, base).empty()) << s;
  const auto fov = suite_variants("fov", base);
  ASSERT_EQ(fov.size(), 10u);
  EXPECT_EQ(fov.front().distill.fov_lo, 60.0);
  EXPECT_EQ(fov.back().distill.fov_hi, 330.0);
  const auto target = suite_variants("target", base);
  bool unsharpened = false;
  for (const auto& v : target)
    if (v.distill.target == distill::TargetKind::Unsharpened) unsharpened = v.distill.tau == 1.0;
  EXPECT_TRUE(unsharpened);
  EXPECT_EQ(spread_of({3, 1, 2}).median, 2.0);
  EXPECT_EQ(spread_of({3, 1, 2}).min, 1.0);
  EXPECT_EQ(spread_of({3, 1, 2}).max, 3.0);
}

TEST(Ablation, TableContractAndDeterminism) {
  const auto ds = tiny_spec();
  const auto train = synth::generate_split(ds, 2, ds.splits[0]);
  const auto val = synth::generate_split(ds, 2, ds.splits[1]);
  const auto same = synth::generate_split(ds, 2, ds.splits[2]);
  const auto cross = synth::generate_split(ds, 2, ds.splits[3]);
  const AblationData data{&train, &val, &same, &cross};
  const auto teacher = nets::location_checkpoint(nets::LocationModel(nets::ModelConfig{}));
  distill::DistillConfig base;
  base.epochs = 1;
  base.batch = 4;
  nets::TrainConfig pre;
  pre.epochs = 1;
  const std::vector<std::uint64_t> seeds{1, 2};

  EXPECT_THROW(run_ablation("nope", teacher, data, base, pre, seeds), InvalidArgument);
  const AblationTable a = run_ablation("loss", teacher, data, base, pre, seeds);
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(a.rows[0].variant, "baseline (undistilled)");
  for (const auto& r : a.rows) EXPECT_EQ(r.cross_mean.size(), seeds.size());
  const AblationTable b = run_ablation("loss", teacher, data, base, pre, seeds);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(to_text(a), to_text(b));
  EXPECT_NE(to_text(a).find("baseline"), std::string::npos);

  const AblationTable aug = run_ablation("augmentation", teacher, data, base, pre, {1});
  ASSERT_EQ(aug.rows.size(), 3u);
  EXPECT_EQ(aug.rows[2].variant, "augmentation");
}

TEST(ExperimentConfig, JsonRoundTripAndErrors) {
  ExperimentConfig c;
  c.seeds = {4, 9};
  c.distill.tau = 0.2;
  c.pretrain.epochs = 3;
  const auto j = to_json(c);
  const ExperimentConfig back = experiment_config_from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_THROW(experiment_config_from_json(nlohmann::json::parse(R"({"seeds": []})")), InvalidArgument);
  EXPECT_THROW(load_experiment_config("/nonexistent/cfg.json"), IoError);
}

// CLI, driven in-process.
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "geodistill");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("geodistill_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ExperimentConfig c;
    c.dataset_spec = tiny_spec();
    c.pretrain.epochs = 1;
    c.distill.epochs = 1;
    c.distill.batch = 4;
    std::ofstream(dir_ / "cfg.json") << to_json(c).dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }
  fs::path dir_;
};

TEST_F(CliTest, GenIsByteIdentical) {
  ASSERT_EQ(cli({"gen", "--config", p("cfg.json"), "--seed", "7", "--out", p("d1")}), kExitOk);
  ASSERT_EQ(cli({"gen", "--config", p("cfg.json"), "--seed", "7", "--out", p("d2")}), kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(p("d1"))) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = fs::path(p("d2")) / fs::relative(e.path(), p("d1"));
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(e.path()), slurp(other)) << other;
  }
  EXPECT_EQ(files, 1u + 3u * (8 + 4 + 4 + 4));
}

TEST_F(CliTest, EvalMissingCheckpointWritesNothing) {
  ASSERT_EQ(cli({"gen", "--config", p("cfg.json"), "--out", p("d")}), kExitOk);
  EXPECT_EQ(cli({"eval", "--data", p("d"), "--ckpt", p("missing"), "--out", p("report.json")}), kExitIo);
  EXPECT_FALSE(fs::exists(p("report.json")));
}

TEST_F(CliTest, BadFlagsAreUsageErrors) {
  EXPECT_EQ(cli({"distill", "--loss", "mse"}), kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}), kExitUsage);
  EXPECT_EQ(cli({"gen", "--bogus"}), kExitUsage);
  EXPECT_EQ(cli({}), kExitUsage);
}

TEST_F(CliTest, PipelineAndZeroEpochDistill) {
  const std::string cfg = p("cfg.json");
  ASSERT_EQ(cli({"gen", "--config", cfg, "--out", p("d")}), kExitOk);
  ASSERT_EQ(cli({"pretrain", "--config", cfg, "--data", p("d"), "--out", p("teacher")}), kExitOk);
  ASSERT_EQ(cli({"distill", "--config", cfg, "--data", p("d"), "--teacher", p("teacher"), "--epochs", "0",
                 "--out", p("zero")}),
            kExitOk);
  const auto in = nets::load_checkpoint(p("teacher"));
  const auto out = nets::load_checkpoint(p("zero/refined_teacher"));
  EXPECT_EQ(nx::ParamStore::max_abs_diff(in.params, out.params), 0.0);
  for (const auto& [name, t] : in.params.entries())
    EXPECT_EQ(slurp(fs::path(p("teacher")) / (name + ".gdtn")), slurp(fs::path(p("zero/refined_teacher")) / (name + ".gdtn")))
        << name;

  ASSERT_EQ(cli({"distill", "--config", cfg, "--data", p("d"), "--teacher", p("teacher"), "--out", p("one")}),
            kExitOk);
  std::ifstream log(p("one/log.jsonl"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch"), ++rows);
    EXPECT_TRUE(j.contains("teacher_val_median_m"));
  }
  EXPECT_EQ(rows, 1u);

  ASSERT_EQ(cli({"eval", "--data", p("d"), "--ckpt", p("one/refined_teacher"), "--split", "all", "--out",
                 p("r1.json"), "--export-dir", p("maps"), "--export-count", "1"}),
            kExitOk);
  ASSERT_EQ(cli({"eval", "--data", p("d"), "--ckpt", p("one/refined_teacher"), "--split", "all", "--out",
                 p("r2.json")}),
            kExitOk);
  EXPECT_EQ(slurp(p("r1.json")), slurp(p("r2.json")));
  const auto report = nlohmann::json::parse(slurp(p("r1.json")));
  EXPECT_TRUE(report.contains("test_same"));
  EXPECT_TRUE(report.contains("test_cross"));
  EXPECT_TRUE(fs::exists(p("maps/test_cross_000000.prob.pgm")));
  EXPECT_TRUE(fs::exists(p("maps/test_cross_000000.prob.csv")));

  ASSERT_EQ(cli({"train-orient", "--config", cfg, "--data", p("d"), "--init", p("teacher"), "--epochs", "1",
                 "--out", p("orient")}),
            kExitOk);
  const auto ori = nets::load_checkpoint(p("orient"));
  EXPECT_EQ(ori.kind, "orientation");
  EXPECT_EQ(ori.extra.at("init"), p("teacher"));
  ASSERT_EQ(cli({"eval", "--data", p("d"), "--ckpt", p("teacher"), "--orient", p("orient"), "--out", p("r3.json")}),
            kExitOk);
  const auto r3 = nlohmann::json::parse(slurp(p("r3.json")));
  EXPECT_TRUE(r3.contains("median_deg"));

  EXPECT_EQ(cli({"export", "--in", p("d/test_cross/000000.sat.gdtn"), "--out", p("sat.ppm")}), kExitOk);
  EXPECT_EQ(slurp(p("sat.ppm")).substr(0, 2), "P6");
  EXPECT_EQ(cli({"export", "--in", p("d/test_cross/000000.sat.gdtn"), "--out", p("sat.txt")}), kExitUsage);
}

}  // namespace
}  // namespace geodistill::harness
