#include "geodistill/harness/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "geodistill/error.hpp"
#include "geodistill/harness/eval.hpp"

namespace geodistill::harness {

using nlohmann::json;
using distill::DistillConfig;

Spread spread_of(const std::vector<double>& v) {
  if (v.empty()) return {};
  return {*std::min_element(v.begin(), v.end()), nets::median_of(v), *std::max_element(v.begin(), v.end())};
}

const std::vector<std::string>& ablation_suites() {
  static const std::vector<std::string> names = {"mask", "target", "fov", "teacher", "loss", "augmentation"};
  return names;
}

std::vector<Variant> suite_variants(const std::string& suite, const DistillConfig& base) {
  std::vector<Variant> out;
  auto add = [&](std::string name, auto mutate) {
    DistillConfig c = base;
    mutate(c);
    out.push_back({std::move(name), c, false});
  };
  if (suite == "mask") {
    for (auto k : {distill::MaskKind::FoV, distill::MaskKind::RandomPatch, distill::MaskKind::MaxActivation})
      add("mask=" + distill::to_string(k), [k](DistillConfig& c) { c.mask = k; });
  } else if (suite == "target") {
    add("target=sharpened", [](DistillConfig& c) { c.target = distill::TargetKind::Sharpened; });
    add("target=single_mode", [](DistillConfig& c) { c.target = distill::TargetKind::SingleMode; });
    add("target=unsharpened", [](DistillConfig& c) {
      c.target = distill::TargetKind::Unsharpened;
      c.tau = 1.0;
    });
  } else if (suite == "fov") {
    for (int f = 60; f <= 330; f += 30)
      add("fov=" + std::to_string(f), [f](DistillConfig& c) { c.fov_lo = c.fov_hi = f; });
  } else if (suite == "teacher") {
    for (auto k : {distill::TeacherUpdate::EMA, distill::TeacherUpdate::Fixed, distill::TeacherUpdate::PrevStudent})
      add("teacher=" + distill::to_string(k), [k](DistillConfig& c) { c.teacher_update = k; });
  } else if (suite == "loss") {
    for (auto k : {distill::LossKind::CE, distill::LossKind::KLD})
      add("loss=" + distill::to_string(k), [k](DistillConfig& c) { c.loss = k; });
  } else if (suite == "augmentation") {
    add("distill", [](DistillConfig&) {});
    out.push_back({"augmentation", base, true});
  } else {
    std::string names;
    for (const auto& s : ablation_suites()) names += (names.empty() ? "" : ", ") + s;
    throw InvalidArgument("unknown ablation suite '" + suite + "' (expected " + names + ")");
  }
  return out;
}

namespace {

void require(const AblationData& d) {
  if (!d.train || !d.val || !d.test_same || !d.test_cross)
    throw InvalidArgument("ablation: train, val, test_same and test_cross splits are required");
}

void push_eval(AblationRow& row, const nets::Checkpoint& ckpt, const AblationData& d) {
  const EvalReport same = eval_localization(ckpt, *d.test_same);
  const EvalReport cross = eval_localization(ckpt, *d.test_cross);
  row.same_mean.push_back(same.mean_m);
  row.same_median.push_back(same.median_m);
  row.cross_mean.push_back(cross.mean_m);
  row.cross_median.push_back(cross.median_m);
}

}  // namespace

AblationTable run_ablation(const std::string& suite, const nets::Checkpoint& teacher, const AblationData& data,
                           const DistillConfig& base, const nets::TrainConfig& pretrain,
                           const std::vector<std::uint64_t>& seeds, const AblationProgress& progress) {
  const auto variants = suite_variants(suite, base);
  require(data);
  if (seeds.empty()) throw InvalidArgument("ablation: seed list is empty");
  AblationTable table;
  table.suite = suite;
  table.seeds = seeds;

  AblationRow baseline{"baseline (undistilled)", {}, {}, {}, {}};
  push_eval(baseline, teacher, data);
  for (std::size_t i = 1; i < seeds.size(); ++i) {
    baseline.same_mean.push_back(baseline.same_mean[0]);
    baseline.same_median.push_back(baseline.same_median[0]);
    baseline.cross_mean.push_back(baseline.cross_mean[0]);
    baseline.cross_median.push_back(baseline.cross_median[0]);
  }
  table.rows.push_back(baseline);

  for (const auto& v : variants) {
    AblationRow row{v.name, {}, {}, {}, {}};
    for (std::uint64_t seed : seeds) {
      if (progress) progress(v.name, seed);
      if (v.augmentation) {
        nets::LocationModel m(nets::location_model(teacher).config());
        nets::TrainConfig tc = pretrain;
        tc.seed = seed;
        tc.fov_augment = true;
        tc.fov_lo = v.distill.fov_lo;
        tc.fov_hi = v.distill.fov_hi;
        nets::pretrain_location(m, *data.train, *data.val, tc);
        push_eval(row, nets::location_checkpoint(m), data);
      } else {
        DistillConfig c = v.distill;
        c.seed = seed;
        const auto r = distill::run_distillation(teacher, *data.train, *data.val, c);
        push_eval(row, r.refined_teacher, data);
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

json to_json(const AblationTable& t) {
  auto spread = [](const std::vector<double>& v) {
    const Spread s = spread_of(v);
    return json{{"min", s.min}, {"median", s.median}, {"max", s.max}, {"per_seed", v}};
  };
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"variant", r.variant},
                    {"test_same", {{"mean_m", spread(r.same_mean)}, {"median_m", spread(r.same_median)}}},
                    {"test_cross", {{"mean_m", spread(r.cross_mean)}, {"median_m", spread(r.cross_median)}}}});
  return {{"suite", t.suite}, {"seeds", t.seeds}, {"rows", rows}};
}

std::string to_text(const AblationTable& t) {
  auto cell = [](const std::vector<double>& v) {
    const Spread s = spread_of(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f [%.3f, %.3f]", s.median, s.min, s.max);
    return std::string(buf);
  };
  const std::vector<std::string> head = {"variant", "same mean_m", "same median_m", "cross mean_m",
                                         "cross median_m"};
  std::vector<std::vector<std::string>> cells = {head};
  for (const auto& r : t.rows)
    cells.push_back({r.variant, cell(r.same_mean), cell(r.same_median), cell(r.cross_mean), cell(r.cross_median)});
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  out << "suite: " << t.suite << "  seeds:";
  for (auto s : t.seeds) out << ' ' << s;
  out << "\nvalues: median over seeds [min, max]\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      out << (c ? "  " : "") << cells[r][c];
      if (c + 1 < cells[r].size()) out << std::string(width[c] - cells[r][c].size(), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace geodistill::harness
