#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gleason/core_model.hpp"
#include "gleason/eval_stats.hpp"
#include "gleason/finegrained.hpp"
#include "gleason/hnm_sampler.hpp"
#include "gleason/io.hpp"
#include "gleason/parallel.hpp"
#include "gleason/png.hpp"
#include "gleason/stage1.hpp"
#include "gleason/stage2.hpp"
#include "gleason/survival.hpp"
#include "gleason/synth.hpp"

namespace gleason {

// Every run-time knob of the pipeline. Randomized components each carry a
// seed; set_master_seed derives all of them from one value.
struct RunConfig {
  double noise_eps = 0.0;
  double noise_concentration = 1.0;
  double noise_slide_concentration = 4.0;
  ConfusionMatrix confusion = adjacent_confusion();
  std::uint64_t oracle_seed = 101;

  std::array<double, kNumPatterns> sampler_ratios = SamplerState::kDefaultRatios;
  std::size_t mining_rounds = 3;
  std::size_t samples_per_round = 10000;
  std::uint64_t sampler_seed = 102;

  int lattice_k_min = -3;
  int lattice_k_max = 3;
  std::size_t k = kDefaultNeighbors;

  std::size_t bootstrap_replicates = 1000;
  std::uint64_t bootstrap_seed = 103;
  std::size_t permutation_iterations = 5000;
  std::uint64_t permutation_seed = 104;
  std::size_t cohort29_iterations = 999;
  std::uint64_t cohort29_seed = 105;
  PopulationWeights population;

  RenderBackground render_background = RenderBackground::kTransparent;
  std::size_t jobs = 1;

  void set_master_seed(std::uint64_t seed) {
    oracle_seed = derive_seed(seed, 1);
    sampler_seed = derive_seed(seed, 2);
    bootstrap_seed = derive_seed(seed, 3);
    permutation_seed = derive_seed(seed, 4);
    cohort29_seed = derive_seed(seed, 5);
  }

  SyntheticOracleConfig oracle() const { return {noise_eps, confusion, oracle_seed, noise_concentration, noise_slide_concentration}; }
};

struct PipelineConfig {
  SyntheticConfig synthetic;
  RunConfig run;
};

// ---- config file (JSON tree; every key optional) ----

namespace config_detail {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_range(const json& j, const char* key, Range& r) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  require(v.size() == 2 && v[0] <= v[1], ErrorCode::kSchema, std::string("config: ") + key + " must be [lo, hi]");
  r = {v[0], v[1]};
}

template <std::size_t N>
void read_array(const json& j, const char* key, std::array<double, N>& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  require(v.size() == N, ErrorCode::kSchema, std::string("config: ") + key + " has the wrong length");
  std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace config_detail

inline PipelineConfig config_from_json(const json& j) {
  using namespace config_detail;
  PipelineConfig c;
  with_schema("config", [&] {
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      auto& o = c.synthetic;
      read(s, "n_train", o.n_train);
      read(s, "n_tune", o.n_tune);
      read(s, "n_validation", o.n_validation);
      read(s, "rows", o.rows);
      read(s, "cols", o.cols);
      read(s, "stride_um", o.stride_um);
      read(s, "resolution_um_per_px", o.resolution_um_per_px);
      read_array(s, "gg_mix", o.gg_mix);
      read_range(s, "tissue_radius", o.tissue_radius);
      read_range(s, "tumor_fraction", o.tumor_fraction);
      read(s, "tumor_fraction_by_grade", o.tumor_fraction_by_grade);
      read(s, "min_tumor_patches", o.min_tumor_patches);
      read(s, "max_blobs_per_pattern", o.max_blobs_per_pattern);
      read_range(s, "primary_pct_score7", o.primary_pct_score7);
      read_range(s, "primary_pct_score9", o.primary_pct_score9);
      read_range(s, "artifact_fraction", o.artifact_fraction);
      read_array(s, "hazard", o.hazard);
      read(s, "censor_rate", o.censor_rate);
      read(s, "generate_ratings", o.generate_ratings);
      read_range(s, "rater_accuracy", o.rater_accuracy);
      read(s, "seed", o.seed);
    }
    if (j.contains("run")) {
      const auto& r = j.at("run");
      auto& o = c.run;
      if (r.contains("seed")) o.set_master_seed(r.at("seed").get<std::uint64_t>());
      read(r, "noise_eps", o.noise_eps);
      read(r, "noise_concentration", o.noise_concentration);
      read(r, "noise_slide_concentration", o.noise_slide_concentration);
      if (r.contains("confusion")) {
        const auto m = r.at("confusion").get<std::vector<std::vector<double>>>();
        require(m.size() == 4, ErrorCode::kSchema, "config: confusion must be 4x4");
        for (std::size_t i = 0; i < 4; ++i) {
          require(m[i].size() == 4, ErrorCode::kSchema, "config: confusion must be 4x4");
          double sum = 0.0;
          for (std::size_t k = 0; k < 4; ++k) {
            require(m[i][k] >= 0.0, ErrorCode::kSchema, "config: confusion entries must be non-negative");
            o.confusion[i][k] = m[i][k];
            sum += m[i][k];
          }
          require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::kSchema, "config: confusion rows must sum to 1");
        }
      }
      read(r, "oracle_seed", o.oracle_seed);
      read_array(r, "sampler_ratios", o.sampler_ratios);
      read(r, "mining_rounds", o.mining_rounds);
      read(r, "samples_per_round", o.samples_per_round);
      read(r, "sampler_seed", o.sampler_seed);
      read(r, "lattice_k_min", o.lattice_k_min);
      read(r, "lattice_k_max", o.lattice_k_max);
      read(r, "k", o.k);
      read(r, "bootstrap_replicates", o.bootstrap_replicates);
      read(r, "bootstrap_seed", o.bootstrap_seed);
      read(r, "permutation_iterations", o.permutation_iterations);
      read(r, "permutation_seed", o.permutation_seed);
      read(r, "cohort29_iterations", o.cohort29_iterations);
      read(r, "cohort29_seed", o.cohort29_seed);
      read_array(r, "population_weights", o.population.w);
      if (r.contains("render_background")) {
        const auto b = r.at("render_background").get<std::string>();
        require(b == "transparent" || b == "white", ErrorCode::kSchema,
                "config: render_background must be transparent or white");
        o.render_background = b == "white" ? RenderBackground::kWhite : RenderBackground::kTransparent;
      }
      read(r, "jobs", o.jobs);
      require(o.noise_eps >= 0.0 && o.noise_eps <= 1.0, ErrorCode::kSchema, "config: noise_eps must lie in [0, 1]");
      require(o.lattice_k_min <= o.lattice_k_max, ErrorCode::kSchema, "config: empty calibration lattice");
    }
    return 0;
  });
  return c;
}

inline json config_to_json(const PipelineConfig& c) {
  const auto& s = c.synthetic;
  const auto& r = c.run;
  auto range = [](const Range& x) { return json::array({x.lo, x.hi}); };
  json confusion = json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {
      {"synthetic",
       {{"n_train", s.n_train},
        {"n_tune", s.n_tune},
        {"n_validation", s.n_validation},
        {"rows", s.rows},
        {"cols", s.cols},
        {"stride_um", s.stride_um},
        {"resolution_um_per_px", s.resolution_um_per_px},
        {"gg_mix", s.gg_mix},
        {"tissue_radius", range(s.tissue_radius)},
        {"tumor_fraction", range(s.tumor_fraction)},
        {"tumor_fraction_by_grade", s.tumor_fraction_by_grade},
        {"min_tumor_patches", s.min_tumor_patches},
        {"max_blobs_per_pattern", s.max_blobs_per_pattern},
        {"primary_pct_score7", range(s.primary_pct_score7)},
        {"primary_pct_score9", range(s.primary_pct_score9)},
        {"artifact_fraction", range(s.artifact_fraction)},
        {"hazard", s.hazard},
        {"censor_rate", s.censor_rate},
        {"generate_ratings", s.generate_ratings},
        {"rater_accuracy", range(s.rater_accuracy)},
        {"seed", s.seed}}},
      {"run",
       {{"noise_eps", r.noise_eps},
        {"noise_concentration", r.noise_concentration},
        {"noise_slide_concentration", r.noise_slide_concentration},
        {"confusion", confusion},
        {"oracle_seed", r.oracle_seed},
        {"sampler_ratios", r.sampler_ratios},
        {"mining_rounds", r.mining_rounds},
        {"samples_per_round", r.samples_per_round},
        {"sampler_seed", r.sampler_seed},
        {"lattice_k_min", r.lattice_k_min},
        {"lattice_k_max", r.lattice_k_max},
        {"k", r.k},
        {"bootstrap_replicates", r.bootstrap_replicates},
        {"bootstrap_seed", r.bootstrap_seed},
        {"permutation_iterations", r.permutation_iterations},
        {"permutation_seed", r.permutation_seed},
        {"cohort29_iterations", r.cohort29_iterations},
        {"cohort29_seed", r.cohort29_seed},
        {"population_weights", r.population.w},
        {"render_background", r.render_background == RenderBackground::kWhite ? "white" : "transparent"},
        {"jobs", r.jobs}}}};
}

// ---- stage 1 over a dataset ----

inline std::vector<SlideHeatmap> infer_dataset(const Dataset& ds, const PatchClassifier& classifier,
                                               std::size_t jobs = 1) {
  std::vector<SlideHeatmap> out(ds.slides.size());
  parallel_for(ds.slides.size(), jobs,
               [&](std::size_t i) { out[i] = to_storage_precision(infer_slide(classifier, ds.slides[i])); });
  return out;
}

inline std::vector<std::size_t> split_indices(const Dataset& ds, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.splits.size(); ++i) {
    if (ds.splits[i] == split) out.push_back(i);
  }
  return out;
}

// ---- stage 2 training ----

struct TrainResult {
  GraderModel model;
  CalibrationFit calibration;
};

inline GraderModel fit_grader(std::span<const FeatureVector> features, std::span<const GradeGroup> labels,
                              const CalibrationWeights& weights, std::size_t k) {
  GraderModel m;
  m.calibration = weights;
  m.rescaler = fit_rescaler(features);
  std::vector<Point4> points;
  points.reserve(features.size());
  for (const auto& f : features) points.push_back(m.rescaler.apply(f));
  m.grade_group = fit_knn(points, labels, k);
  for (std::size_t t = 0; t < 3; ++t) m.binary[t] = fit_binary_knn(points, labels, kBinaryThresholds[t], k);
  return m;
}

// Calibration by tuning-set kappa, then rescaler and kNN models on the
// training split. Without a tuning split the training split is reused.
inline TrainResult train_grader(const Dataset& ds, std::span<const SlideHeatmap> heatmaps, const RunConfig& run) {
  require(heatmaps.size() == ds.slides.size(), ErrorCode::kInvalidArgument, "train: one heatmap per slide needed");
  const auto train = split_indices(ds, Split::kTrain);
  auto tune = split_indices(ds, Split::kTune);
  require(!train.empty(), ErrorCode::kPrecondition, "train: dataset has no training slides");
  if (tune.empty()) tune = train;

  auto reference = [&](std::size_t i) {
    require(ds.slides[i].reference_gg.has_value(), ErrorCode::kPrecondition,
            "train: slide " + ds.slides[i].slide_id + " lacks a reference grade group");
    return *ds.slides[i].reference_gg;
  };
  std::vector<GradeGroup> train_labels, tune_labels;
  for (auto i : train) train_labels.push_back(reference(i));
  for (auto i : tune) tune_labels.push_back(reference(i));

  auto features_of = [&](std::span<const std::size_t> idx, const CalibrationWeights& w) {
    std::vector<FeatureVector> f;
    f.reserve(idx.size());
    for (auto i : idx) f.push_back(extract_features(heatmaps[i], w));
    return f;
  };

  TrainResult out;
  out.calibration = fit_calibration(
      tune_labels,
      [&](const CalibrationWeights& w) {
        const auto train_f = features_of(train, w);
        const auto model = fit_grader(train_f, train_labels, w, run.k);
        std::vector<GradeGroup> pred;
        for (const auto& f : features_of(tune, w)) pred.push_back(knn_predict(model.grade_group, model.rescaler.apply(f)));
        return pred;
      },
      calibration_lattice(run.lattice_k_min, run.lattice_k_max), run.jobs);
  out.model = fit_grader(features_of(train, out.calibration.weights), train_labels, out.calibration.weights, run.k);
  return out;
}

// ---- stage 2 grading ----

struct SlideReport {
  std::string slide_id;
  Split split = Split::kTrain;
  SlideGrade grade;
  FineGrainedFeatures finegrained;
};

inline std::vector<SlideReport> grade_dataset(const Dataset& ds, std::span<const SlideHeatmap> heatmaps,
                                              const GraderModel& model, std::size_t jobs = 1) {
  require(heatmaps.size() == ds.slides.size(), ErrorCode::kInvalidArgument, "grade: one heatmap per slide needed");
  std::vector<SlideReport> out(ds.slides.size());
  parallel_for(ds.slides.size(), jobs, [&](std::size_t i) {
    out[i].slide_id = ds.slides[i].slide_id;
    out[i].split = ds.splits[i];
    out[i].grade = grade_heatmap(heatmaps[i], model);
    out[i].finegrained = finegrained_features(calibrate(heatmaps[i].likelihoods, model.calibration), heatmaps[i].tissue);
  });
  return out;
}

inline json grades_to_json(std::span<const SlideReport> reports) {
  json slides = json::array();
  for (const auto& r : reports) {
    const auto& f = r.grade.features;
    const auto& g = r.finegrained;
    slides.push_back({{"slide_id", r.slide_id},
                      {"split", split_name(r.split)},
                      {"grade_group", grade_group_ordinal(r.grade.grade_group)},
                      {"features",
                       {{"pct_tumor", f.pct_tumor}, {"pct_gp3", f.pct_gp3}, {"pct_gp4", f.pct_gp4}, {"pct_gp5", f.pct_gp5}}},
                      {"finegrained",
                       {{"pct_gp3", g.pct_gp3},
                        {"pct_gp3_5", g.pct_gp35},
                        {"pct_gp4", g.pct_gp4},
                        {"pct_gp4_5", g.pct_gp45},
                        {"pct_gp5", g.pct_gp5}}},
                      {"binary_scores",
                       {{"gg_ge_2", r.grade.binary_scores[0]},
                        {"gg_ge_3", r.grade.binary_scores[1]},
                        {"gg_ge_4", r.grade.binary_scores[2]}}}});
  }
  return {{"format", "gleason-grades"}, {"version", 1}, {"slides", slides}};
}

inline std::vector<SlideReport> grades_from_json(const json& j) {
  return with_schema("grades json", [&] {
    require(j.at("format").get<std::string>() == "gleason-grades", ErrorCode::kSchema, "grades json: wrong format tag");
    std::vector<SlideReport> out;
    for (const auto& s : j.at("slides")) {
      SlideReport r;
      r.slide_id = s.at("slide_id").get<std::string>();
      r.split = split_from_name(s.at("split").get<std::string>());
      r.grade.grade_group = grade_group_from_ordinal(s.at("grade_group").get<int>());
      const auto& f = s.at("features");
      r.grade.features = {f.at("pct_tumor").get<double>(), f.at("pct_gp3").get<double>(), f.at("pct_gp4").get<double>(),
                          f.at("pct_gp5").get<double>()};
      const auto& g = s.at("finegrained");
      r.finegrained = {g.at("pct_gp3").get<double>(), g.at("pct_gp3_5").get<double>(), g.at("pct_gp4").get<double>(),
                       g.at("pct_gp4_5").get<double>(), g.at("pct_gp5").get<double>()};
      const auto& b = s.at("binary_scores");
      r.grade.binary_scores = {b.at("gg_ge_2").get<double>(), b.at("gg_ge_3").get<double>(),
                               b.at("gg_ge_4").get<double>()};
      out.push_back(std::move(r));
    }
    return out;
  });
}

// ---- evaluation ----

// Validation slides joined with their grades and pathologist ratings.
inline RatingTable build_rating_table(const Dataset& ds, std::span<const SlideReport> reports, Split split) {
  std::map<std::string, const SlideReport*> by_id;
  for (const auto& r : reports) by_id[r.slide_id] = &r;
  std::map<std::string, std::vector<const RatingRow*>> ratings;
  for (const auto& r : ds.ratings) ratings[r.slide_id].push_back(&r);

  RatingTable table;
  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    if (ds.splits[i] != split) continue;
    const auto& s = ds.slides[i];
    auto it = by_id.find(s.slide_id);
    require(it != by_id.end(), ErrorCode::kPrecondition, "no grade for slide " + s.slide_id);
    require(s.reference_gg.has_value(), ErrorCode::kPrecondition, "slide " + s.slide_id + " lacks a reference");
    RatedSlide row;
    row.slide_id = s.slide_id;
    row.reference = *s.reference_gg;
    row.dls = it->second->grade.grade_group;
    row.reference_pcts = s.reference_pcts;
    row.dls_pcts = it->second->grade.features.gp();
    if (auto rt = ratings.find(s.slide_id); rt != ratings.end()) {
      for (const auto* r : rt->second) row.ratings.push_back({r->rater_id, r->subgroup, r->grade, std::nullopt});
    }
    table.slides.push_back(std::move(row));
  }
  return table;
}

inline bool follows_cohort_design(const RatingTable& t) {
  if (t.slides.empty()) return false;
  for (const auto& s : t.slides) {
    std::size_t ten = 0, nineteen = 0;
    for (const auto& r : s.ratings) {
      ten += r.subgroup == RaterSubgroup::kTen ? 1 : 0;
      nineteen += r.subgroup == RaterSubgroup::kNineteen ? 1 : 0;
    }
    if (ten != 10 || nineteen != 3 || s.ratings.size() != 13) return false;
  }
  return true;
}

namespace pipeline_detail {

// Bootstrap replicate statistics that are undefined on a resample (e.g. a
// grade group missing) come back NaN and are dropped from the interval.
inline json metric_entry(const std::string& name, double estimate, const std::function<double(Rng&)>& replicate,
                         const RunConfig& run, std::uint64_t seed) {
  std::vector<double> stats(run.bootstrap_replicates);
  parallel_for(stats.size(), run.jobs, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    try {
      stats[r] = replicate(rng);
    } catch (const Error&) {
      stats[r] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  std::erase_if(stats, [](double x) { return std::isnan(x); });
  std::sort(stats.begin(), stats.end());
  json e = {{"name", name}, {"estimate", estimate}, {"replicates", run.bootstrap_replicates},
            {"replicates_used", stats.size()}, {"seed", seed}};
  if (!stats.empty()) {
    e["ci"] = {percentile_sorted(stats, 0.025), percentile_sorted(stats, 0.975)};
  } else {
    e["ci"] = nullptr;
  }
  return e;
}

}  // namespace pipeline_detail

struct EvalOutput {
  json report;
  std::array<std::vector<RocPoint>, 3> roc;  // GG >= 2, 3, 4
};

inline EvalOutput evaluate(const Dataset& ds, std::span<const SlideReport> reports, const RunConfig& run,
                           Split split = Split::kValidation) {
  using pipeline_detail::metric_entry;
  const RatingTable table = build_rating_table(ds, reports, split);
  require(!table.slides.empty(), ErrorCode::kPrecondition, "eval: no slides in the " + split_name(split) + " split");
  std::map<std::string, const SlideReport*> by_id;
  for (const auto& r : reports) by_id[r.slide_id] = &r;

  const std::size_t n = table.slides.size();
  std::vector<GradeGroup> pred(n), ref(n);
  std::vector<GpPercentages> pred_pct(n), ref_pct(n);
  std::array<std::vector<double>, 3> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = table.slides[i];
    pred[i] = s.dls;
    ref[i] = s.reference;
    pred_pct[i] = *s.dls_pcts;
    require(s.reference_pcts.has_value(), ErrorCode::kPrecondition, "eval: slide " + s.slide_id + " lacks reference %GP");
    ref_pct[i] = *s.reference_pcts;
    for (std::size_t t = 0; t < 3; ++t) scores[t].push_back(by_id.at(s.slide_id)->grade.binary_scores[t]);
  }

  auto resample = [n](Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    return idx;
  };
  auto gather = [](const auto& v, const std::vector<std::size_t>& idx) {
    std::vector<std::decay_t<decltype(v[0])>> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
  };

  EvalOutput out;
  json metrics = json::array();
  std::uint64_t stream = 0;
  auto seed_for = [&]() { return derive_seed(run.bootstrap_seed, stream++); };

  metrics.push_back(metric_entry("dls_accuracy", accuracy(pred, ref),
                                 [&](Rng& rng) { return dls_accuracy(resample_rating_table(table, rng)); }, run,
                                 seed_for()));
  metrics.push_back(metric_entry(
      "dls_adjusted_accuracy", adjusted_accuracy(pred, ref, run.population),
      [&](Rng& rng) {
        const auto idx = resample(rng);
        return adjusted_accuracy(gather(pred, idx), gather(ref, idx), run.population);
      },
      run, seed_for()));
  metrics.push_back(metric_entry(
      "dls_kappa", cohens_kappa(pred, ref),
      [&](Rng& rng) {
        const auto idx = resample(rng);
        return cohens_kappa(gather(pred, idx), gather(ref, idx));
      },
      run, seed_for()));
  for (const Pattern p : kTumorPatterns) {
    metrics.push_back(metric_entry(
        "dls_mae_gp" + std::to_string(pattern_number(p)), quantitation_mae(pred_pct, ref_pct, p),
        [&, p](Rng& rng) {
          const auto idx = resample(rng);
          return quantitation_mae(gather(pred_pct, idx), gather(ref_pct, idx), p);
        },
        run, seed_for()));
  }
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = grade_group_ordinal(ref[i]) >= kBinaryThresholds[t] ? 1 : 0;
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    const std::string name = "dls_auc_gg_ge_" + std::to_string(kBinaryThresholds[t]);
    if (!both) {
      metrics.push_back({{"name", name}, {"estimate", nullptr}, {"error", "single-class reference labels"}});
      ++stream;
      continue;
    }
    const auto roc = roc_auc(scores[t], labels);
    out.roc[t] = roc.curve;
    metrics.push_back(metric_entry(
        name, roc.auc,
        [&, t, labels](Rng& rng) {
          const auto idx = resample(rng);
          return roc_auc(gather(scores[t], idx), gather(labels, idx)).auc;
        },
        run, seed_for()));
  }

  json report = {{"format", "gleason-metrics"}, {"version", 1}, {"split", split_name(split)}, {"n_slides", n}};
  const bool has_ratings = std::any_of(table.slides.begin(), table.slides.end(),
                                       [](const RatedSlide& s) { return !s.ratings.empty(); });
  if (has_ratings) {
    metrics.push_back(metric_entry("pathologist_mean_accuracy", mean_rater_accuracy(table),
                                   [&](Rng& rng) { return mean_rater_accuracy(resample_rating_table(table, rng)); },
                                   run, seed_for()));
    if (follows_cohort_design(table)) {
      const auto perm = permutation_test_vs_cohort(table, run.permutation_iterations, run.permutation_seed);
      report["permutation_test"] = {{"statistic", "dls_accuracy_minus_mean_pathologist_accuracy"},
                                    {"observed", perm.observed},
                                    {"p_value", perm.p_value},
                                    {"iterations", perm.iterations},
                                    {"seed", run.permutation_seed}};
    }
  }
  report["metrics"] = metrics;
  out.report = std::move(report);
  return out;
}

inline std::string roc_csv(std::span<const RocPoint> curve) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : curve) {
    out += (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) + "," + format_double(p.fpr) +
           "," + format_double(p.tpr) + "\n";
  }
  return out;
}

// ---- survival ----

struct SurvivalOutput {
  json report;
  std::map<std::string, std::string> km_csv;  // file stem -> CSV
};

inline std::string km_csv(std::span<const KaplanMeierStep> curve, const std::string& group) {
  std::string out;
  for (const auto& s : curve) {
    out += group + "," + format_double(s.time) + "," + format_double(s.survival) + "," + std::to_string(s.at_risk) + "," +
           std::to_string(s.events) + "," + std::to_string(s.censored) + "\n";
  }
  return out;
}

namespace pipeline_detail {

inline json cox_json(const SurvivalDataset& d, const std::vector<std::string>& names) {
  try {
    const auto fit = cox_fit(d);
    json coefs = json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double b = fit.beta[k], se = fit.standard_errors[k];
      coefs.push_back({{"covariate", names[i]},
                       {"beta", b},
                       {"se", se},
                       {"hazard_ratio", std::exp(b)},
                       {"ci", {std::exp(b - kZ975 * se), std::exp(b + kZ975 * se)}}});
    }
    return {{"coefficients", coefs},
            {"log_partial_likelihood", fit.log_partial_likelihood},
            {"iterations", fit.iterations},
            {"converged", fit.converged},
            {"c_index", cox_cindex_of_fit(fit, d)}};
  } catch (const Error& e) {
    return {{"error", std::string(error_code_name(e.code()))}, {"message", e.what()}};
  }
}

inline json hr_json(const HazardRatio& h) {
  return {{"hazard_ratio", h.hr}, {"ci", {h.ci_lo, h.ci_hi}}, {"converged", h.converged}};
}

}  // namespace pipeline_detail

inline SurvivalOutput survival_analysis(const Dataset& ds, std::span<const SlideReport> reports, const RunConfig& run,
                                        Split split = Split::kValidation) {
  using namespace pipeline_detail;
  const RatingTable table = build_rating_table(ds, reports, split);
  std::map<std::string, const ClinicalRecord*> clinical;
  for (const auto& c : ds.clinical) clinical[c.slide_id] = &c;
  std::map<std::string, const SlideReport*> by_id;
  for (const auto& r : reports) by_id[r.slide_id] = &r;

  const std::size_t n = table.slides.size();
  require(n > 0, ErrorCode::kPrecondition, "survival: no slides in the " + split_name(split) + " split");
  std::vector<double> times(n);
  std::vector<std::uint8_t> events(n);
  std::vector<double> dls_ord(n), ref_ord(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = table.slides[i];
    auto it = clinical.find(s.slide_id);
    require(it != clinical.end(), ErrorCode::kPrecondition, "survival: no clinical record for " + s.slide_id);
    times[i] = it->second->time;
    events[i] = it->second->event ? 1 : 0;
    dls_ord[i] = grade_group_ordinal(s.dls);
    ref_ord[i] = grade_group_ordinal(s.reference);
  }

  auto gg3 = [](std::span<const double> ord) {
    std::vector<std::uint8_t> g(ord.size());
    for (std::size_t i = 0; i < ord.size(); ++i) g[i] = ord[i] >= 3.0 ? 1 : 0;
    return g;
  };
  auto safe_hr = [&](std::span<const double> ord) -> json {
    try {
      return hr_json(hazard_ratio(times, events, gg3(ord)));
    } catch (const Error& e) {
      return {{"error", std::string(error_code_name(e.code()))}, {"message", e.what()}};
    }
  };
  auto safe_c = [&](std::span<const double> scores) -> json {
    try {
      return concordance_index(scores, times, events);
    } catch (const Error& e) {
      return nullptr;
    }
  };

  SurvivalOutput out;
  json report = {{"format", "gleason-survival"}, {"version", 1}, {"split", split_name(split)}, {"n_slides", n},
                 {"n_events", std::count(events.begin(), events.end(), 1)}};
  report["c_index"] = {{"dls_grade_group", safe_c(dls_ord)}, {"reference_grade_group", safe_c(ref_ord)}};
  report["hazard_ratio_gg_ge_3"] = {{"dls", safe_hr(dls_ord)}, {"reference", safe_hr(ref_ord)}};

  auto km_pair = [&](std::span<const double> ord, const std::string& stem) {
    const auto g = gg3(ord);
    std::string csv = "group,time,survival,at_risk,events,censored_ticks\n";
    for (std::uint8_t grp : {std::uint8_t{0}, std::uint8_t{1}}) {
      std::vector<double> t;
      std::vector<std::uint8_t> e;
      for (std::size_t i = 0; i < n; ++i) {
        if (g[i] == grp) {
          t.push_back(times[i]);
          e.push_back(events[i]);
        }
      }
      if (!t.empty()) csv += km_csv(kaplan_meier(t, e), grp ? "gg_ge_3" : "gg_lt_3");
    }
    out.km_csv[stem] = csv;
  };
  km_pair(dls_ord, "km_dls");
  km_pair(ref_ord, "km_reference");

  if (follows_cohort_design(table)) {
    auto ord_of = [](const std::vector<GradeGroup>& g) {
      std::vector<double> o(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) o[i] = grade_group_ordinal(g[i]);
      return o;
    };
    const auto med_c = cohort29_median(
        table, [&](const std::vector<GradeGroup>& g) { return concordance_index(ord_of(g), times, events); },
        run.cohort29_iterations, run.cohort29_seed);
    const auto med_hr = cohort29_median(
        table,
        [&](const std::vector<GradeGroup>& g) {
          try {
            return hazard_ratio(times, events, gg3(ord_of(g))).hr;
          } catch (const Error&) {
            return std::numeric_limits<double>::quiet_NaN();
          }
        },
        run.cohort29_iterations, run.cohort29_seed);
    report["c_index"]["cohort29_median"] = {{"value", med_c.value}, {"iteration", med_c.iteration},
                                            {"iterations", run.cohort29_iterations}, {"seed", run.cohort29_seed}};
    report["hazard_ratio_gg_ge_3"]["cohort29_median"] = safe_hr(ord_of(med_hr.grades));
    report["hazard_ratio_gg_ge_3"]["cohort29_median"]["iteration"] = med_hr.iteration;
    km_pair(ord_of(med_c.grades), "km_cohort29_median");
  }

  SurvivalDataset base;
  base.time = times;
  base.event = events;
  auto with_covariates = [&](const std::vector<std::vector<double>>& cols) {
    SurvivalDataset d = base;
    d.covariates.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      for (std::size_t i = 0; i < n; ++i) d.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = cols[c][i];
    }
    return d;
  };
  std::vector<double> gp4(n), gp5(n), f35(n), f4(n), f45(n), f5(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* r = by_id.at(table.slides[i].slide_id);
    gp4[i] = r->grade.features.pct_gp4;
    gp5[i] = r->grade.features.pct_gp5;
    f35[i] = r->finegrained.pct_gp35;
    f4[i] = r->finegrained.pct_gp4;
    f45[i] = r->finegrained.pct_gp45;
    f5[i] = r->finegrained.pct_gp5;
  }
  // %GP3 is implied by the other percentages and left out of each model.
  report["cox"] = {
      {"dls_grade_group", cox_json(with_covariates({dls_ord}), {"grade_group_ordinal"})},
      {"dls_quantitation", cox_json(with_covariates({gp4, gp5}), {"pct_gp4", "pct_gp5"})},
      {"dls_finegrained_gp3_5", cox_json(with_covariates({f35, f4, f5}), {"pct_gp3_5", "pct_gp4", "pct_gp5"})},
      {"dls_finegrained_gp4_5",
       cox_json(with_covariates({f35, f4, f45, f5}), {"pct_gp3_5", "pct_gp4", "pct_gp4_5", "pct_gp5"})},
  };
  out.report = std::move(report);
  return out;
}

// ---- hard-negative mining ----

inline MiningRun mine_dataset(const Dataset& ds, const PatchClassifier& classifier, const RunConfig& run) {
  std::vector<SlideRecord> train;
  for (auto i : split_indices(ds, Split::kTrain)) train.push_back(ds.slides[i]);
  require(!train.empty(), ErrorCode::kPrecondition, "mine: dataset has no training slides");
  SamplerState state(train, run.sampler_seed, run.sampler_ratios);
  return run_mining(state, classifier, train, {run.mining_rounds, run.samples_per_round}, run.jobs);
}

// ---- rendering ----

inline std::string render_slide_png(const SlideHeatmap& heatmap, const CalibrationWeights& weights,
                                    RenderBackground background) {
  const auto rgba = render_finegrained_rgba(calibrate(heatmap.likelihoods, weights), heatmap.tissue, background);
  return encode_png_rgba(rgba, heatmap.likelihoods.cols, heatmap.likelihoods.rows);
}

}  // namespace gleason
