// gleason_cli: synthetic data, two-stage grading, evaluation and survival
// analysis from the command line. Every command reads a dataset directory
// written by `generate` and writes its artifacts under --out.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gleason/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gleason;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInternal = 70;

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument: return 3;
    case ErrorCode::kPrecondition: return 4;
    case ErrorCode::kNoTumor: return 5;
    case ErrorCode::kNonIdentifiable: return 6;
    case ErrorCode::kIo: return 7;
    case ErrorCode::kSchema: return 8;
    case ErrorCode::kInfeasible: return 9;
  }
  return kExitInternal;
}

const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  2  usage error (bad or missing flags)\n"
    "  3  invalid_argument\n"
    "  4  precondition_failed (e.g. missing reference grades, too few slides for k)\n"
    "  5  no_tumor\n"
    "  6  non_identifiable\n"
    "  7  io_error (missing or unwritable files)\n"
    "  8  schema_violation (malformed config, dataset, heatmap, model or grades)\n"
    "  9  infeasible (synthetic blob packing failed)\n"
    " 70  internal error\n"
    "Failures print one JSON object {\"error\", \"message\", \"exit_code\"} on stderr.\n";

void report_error(const std::string& kind, const std::string& message, int code) {
  const json e = {{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << e.dump() << "\n";
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
  std::string data;
  std::string heatmaps;
  std::string model;
  std::string grades;
  std::string background;
  std::string split = "validation";
};

PipelineConfig load_config(const Options& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : config_from_json(parse_json(read_file(o.config), o.config));
  if (o.jobs) c.run.jobs = *o.jobs;
  require(c.run.jobs >= 1, ErrorCode::kInvalidArgument, "--jobs must be at least 1");
  return c;
}

// --seed sets the dataset seed for `generate` and the run master seed otherwise.
RunConfig run_config(const Options& o) {
  auto c = load_config(o);
  if (o.seed) c.run.set_master_seed(*o.seed);
  return c.run;
}

fs::path heatmap_path(const fs::path& dir, const std::string& slide_id) { return dir / (slide_id + ".lmap"); }

std::vector<SlideHeatmap> load_heatmaps(const Dataset& ds, const fs::path& dir) {
  std::vector<SlideHeatmap> out;
  out.reserve(ds.slides.size());
  for (const auto& s : ds.slides) {
    auto h = read_heatmap(read_file(heatmap_path(dir, s.slide_id)));
    require(h.likelihoods.rows == s.mask.rows && h.likelihoods.cols == s.mask.cols, ErrorCode::kSchema,
            "heatmap dimensions disagree with the mask of " + s.slide_id);
    out.push_back(std::move(h));
  }
  return out;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// ---- commands ----

void cmd_generate(const Options& o) {
  auto c = load_config(o);
  if (o.seed) c.synthetic.seed = *o.seed;
  const auto ds = synth_generate(c.synthetic);
  write_dataset(o.out, ds, {{"generator", "synthetic"}, {"config", config_to_json(c)["synthetic"]}});
}

void cmd_mine(const Options& o) {
  const auto run = run_config(o);
  const auto ds = read_dataset(o.data);
  SyntheticOracle oracle(run.oracle());
  const auto mined = mine_dataset(ds, oracle, run);
  json rounds = json::array();
  for (std::size_t r = 0; r < mined.round_losses.size(); ++r) {
    std::ostringstream csv;
    write_loss_csv(csv, mined.round_losses[r]);
    const std::string name = "losses_round_" + std::to_string(r) + ".csv";
    write_file(fs::path(o.out) / name, csv.str());
    const auto& n = mined.round_category_counts[r];
    rounds.push_back({{"round", r},
                      {"losses", name},
                      {"patches_scored", mined.round_losses[r].size()},
                      {"sampled_counts", {{"non_tumor", n[0]}, {"gp3", n[1]}, {"gp4", n[2]}, {"gp5", n[3]}}}});
  }
  write_json(fs::path(o.out) / "mining.json",
             {{"format", "gleason-mining"}, {"version", 1}, {"sampler_seed", run.sampler_seed}, {"rounds", rounds}});
}

void cmd_infer(const Options& o) {
  const auto run = run_config(o);
  const auto ds = read_dataset(o.data);
  SyntheticOracle oracle(run.oracle());
  const auto maps = infer_dataset(ds, oracle, run.jobs);
  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    write_file(heatmap_path(o.out, ds.slides[i].slide_id), write_heatmap(maps[i]));
  }
}

void cmd_train(const Options& o) {
  const auto run = run_config(o);
  const auto ds = read_dataset(o.data);
  const auto maps = load_heatmaps(ds, o.heatmaps);
  const auto trained = train_grader(ds, maps, run);
  write_json(fs::path(o.out) / "model.json", model_to_json(trained.model, &trained.calibration));
}

void cmd_grade(const Options& o) {
  const auto run = run_config(o);
  const auto ds = read_dataset(o.data);
  const auto maps = load_heatmaps(ds, o.heatmaps);
  const auto model = model_from_json(parse_json(read_file(o.model), o.model));
  const auto reports = grade_dataset(ds, maps, model, run.jobs);
  write_json(fs::path(o.out) / "grades.json", grades_to_json(reports));
}

std::vector<SlideReport> load_grades(const Options& o) {
  return grades_from_json(parse_json(read_file(o.grades), o.grades));
}

void cmd_eval(const Options& o) {
  const auto run = run_config(o);
  const auto ds = read_dataset(o.data);
  const auto out = evaluate(ds, load_grades(o), run, split_from_name(o.split));
  write_json(fs::path(o.out) / "metrics.json", out.report);
  for (std::size_t t = 0; t < 3; ++t) {
    if (out.roc[t].empty()) continue;
    write_file(fs::path(o.out) / ("roc_gg_ge_" + std::to_string(kBinaryThresholds[t]) + ".csv"), roc_csv(out.roc[t]));
  }
}

void cmd_survival(const Options& o) {
  const auto run = run_config(o);
  const auto ds = read_dataset(o.data);
  const auto out = survival_analysis(ds, load_grades(o), run, split_from_name(o.split));
  write_json(fs::path(o.out) / "survival.json", out.report);
  for (const auto& [stem, csv] : out.km_csv) write_file(fs::path(o.out) / (stem + ".csv"), csv);
}

void cmd_render(const Options& o) {
  auto run = run_config(o);
  if (!o.background.empty()) {
    require(o.background == "transparent" || o.background == "white", ErrorCode::kInvalidArgument,
            "--background must be transparent or white");
    run.render_background = o.background == "white" ? RenderBackground::kWhite : RenderBackground::kTransparent;
  }
  const auto ds = read_dataset(o.data);
  const auto maps = load_heatmaps(ds, o.heatmaps);
  CalibrationWeights weights;
  if (!o.model.empty()) weights = model_from_json(parse_json(read_file(o.model), o.model)).calibration;
  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    write_file(fs::path(o.out) / (ds.slides[i].slide_id + ".png"), render_slide_png(maps[i], weights, run.render_background));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage Gleason grading pipeline on synthetic patch grids"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file (sections: synthetic, run)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed (dataset seed for generate)");
    sub->add_option("--jobs", o.jobs, "Worker threads");
    sub->add_option("--out", o.out, "Output directory")->required();
  };
  auto data = [&](CLI::App* sub) { sub->add_option("--data", o.data, "Dataset directory from generate")->required(); };
  auto heatmaps = [&](CLI::App* sub) {
    sub->add_option("--heatmaps", o.heatmaps, "Heatmap directory from infer")->required();
  };
  auto grades = [&](CLI::App* sub) {
    sub->add_option("--grades", o.grades, "grades.json from grade")->required();
    sub->add_option("--split", o.split, "Split to analyse")->check(CLI::IsMember({"train", "tune", "validation"}));
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset directory");
  common(gen);
  gen->callback([&] { cmd_generate(o); });

  auto* mine = app.add_subcommand("mine", "Run hard-negative mining rounds and write loss CSVs");
  common(mine);
  data(mine);
  mine->callback([&] { cmd_mine(o); });

  auto* infer = app.add_subcommand("infer", "Write per-slide likelihood heatmaps");
  common(infer);
  data(infer);
  infer->callback([&] { cmd_infer(o); });

  auto* train = app.add_subcommand("train", "Fit calibration, rescaler and kNN models");
  common(train);
  data(train);
  heatmaps(train);
  train->callback([&] { cmd_train(o); });

  auto* grade = app.add_subcommand("grade", "Grade every slide; writes grades.json");
  common(grade);
  data(grade);
  heatmaps(grade);
  grade->add_option("--model", o.model, "model.json from train")->required();
  grade->callback([&] { cmd_grade(o); });

  auto* eval = app.add_subcommand("eval", "Metrics report with bootstrap CIs and permutation test");
  common(eval);
  data(eval);
  grades(eval);
  eval->callback([&] { cmd_eval(o); });

  auto* surv = app.add_subcommand("survival", "c-index, Kaplan-Meier curves, Cox fits and hazard ratios");
  common(surv);
  data(surv);
  grades(surv);
  surv->callback([&] { cmd_survival(o); });

  auto* render = app.add_subcommand("render", "Fine-grained PNG heatmaps, one pixel per patch");
  common(render);
  data(render);
  heatmaps(render);
  render->add_option("--model", o.model, "model.json whose calibration weights are applied");
  render->add_option("--background", o.background, "Non-tumor pixels: transparent or white");
  render->callback([&] { cmd_render(o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    report_error(std::string(error_code_name(e.code())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error("internal", e.what(), kExitInternal);
    return kExitInternal;
  }
  return 0;
}
