#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gleason/core_model.hpp"
#include "gleason/eval_stats.hpp"
#include "gleason/rng.hpp"

namespace gleason {

enum class Split : std::uint8_t { kTrain, kTune, kValidation };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTune: return "tune";
    case Split::kValidation: return "validation";
  }
  return "train";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "tune") return Split::kTune;
  if (s == "validation") return Split::kValidation;
  fail(ErrorCode::kSchema, "unknown split '" + s + "'");
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SyntheticConfig {
  std::size_t n_train = 500;
  std::size_t n_tune = 100;
  std::size_t n_validation = 331;
  std::size_t rows = 48;
  std::size_t cols = 48;
  double stride_um = 32.0;
  double resolution_um_per_px = 0.25;
  // GG1, GG2, GG3, GG4-5 proportions.
  std::array<double, 4> gg_mix = {77.0 / 331.0, 134.0 / 331.0, 62.0 / 331.0, 58.0 / 331.0};
  Range tissue_radius = {0.6, 0.95};    // ellipse radii as a share of the half-extent
  Range tumor_fraction = {0.10, 0.40};  // tumor patches / tissue patches
  // Splits tumor_fraction into four consecutive bands, one per grade group,
  // so tumor burden grows with grade.
  bool tumor_fraction_by_grade = true;
  std::size_t min_tumor_patches = 100;
  std::size_t max_blobs_per_pattern = 3;
  Range primary_pct_score7 = {60.0, 85.0};   // GG2 / GG3: share of the predominant pattern
  Range primary_pct_score9 = {55.0, 75.0};   // GG4-5 mixed 4+5 / 5+4
  Range artifact_fraction = {0.0, 0.03};
  // Event rates per grade group (per month) and independent censoring rate.
  std::array<double, 4> hazard = {0.004, 0.012, 0.036, 0.108};
  double censor_rate = 0.01;
  bool generate_ratings = true;
  Range rater_accuracy = {0.5, 0.75};
  std::uint64_t seed = 1;
};

inline void validate(const SyntheticConfig& c) {
  double sum = 0.0;
  for (double p : c.gg_mix) {
    require(p >= 0.0, ErrorCode::kInvalidArgument, "gg_mix entries must be non-negative");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-6, ErrorCode::kInvalidArgument, "gg_mix proportions must sum to 1");
  for (std::size_t g = 0; g < 4; ++g) {
    require(c.hazard[g] > 0.0, ErrorCode::kInvalidArgument, "hazard rates must be positive");
    if (g > 0) {
      require(c.hazard[g] > c.hazard[g - 1], ErrorCode::kInvalidArgument,
              "hazard rates must increase strictly with grade group");
    }
  }
  require(c.censor_rate > 0.0, ErrorCode::kInvalidArgument, "censor_rate must be positive");
  require(c.rows > 0 && c.cols > 0, ErrorCode::kInvalidArgument, "grid must be non-empty");
  require(c.n_train + c.n_tune + c.n_validation > 0, ErrorCode::kInvalidArgument, "no slides requested");
  require(c.max_blobs_per_pattern >= 1, ErrorCode::kInvalidArgument, "need at least one blob per pattern");
  require(c.tumor_fraction.lo > 0.0 && c.tumor_fraction.hi <= 1.0 && c.tumor_fraction.lo <= c.tumor_fraction.hi,
          ErrorCode::kInvalidArgument, "tumor_fraction must lie in (0, 1]");
}

struct RatingRow {
  std::string slide_id;
  std::string rater_id;
  RaterSubgroup subgroup = RaterSubgroup::kOther;
  GradeGroup grade = GradeGroup::kGG1;
};

struct Dataset {
  std::vector<SlideRecord> slides;
  std::vector<Split> splits;
  std::vector<ClinicalRecord> clinical;  // aligned with slides
  std::vector<RatingRow> ratings;
  std::vector<GpPercentages> target_pcts;  // sampled before rasterization
};

namespace synth_detail {

inline double draw(Rng& rng, Range r) { return r.lo + (r.hi - r.lo) * rng.uniform(); }

// Grows a blob of `size` patches from free cells (NonTumor, tissue) by
// random frontier expansion, reseeding when a blob is boxed in.
inline void grow_region(LabelMask& mask, std::vector<std::size_t>& free_cells, std::size_t size,
                        const RegionLabel& label, Rng& rng) {
  const RegionLabel free_label = RegionLabel::pattern(Pattern::kNonTumor);
  std::vector<std::size_t> frontier;
  auto is_free = [&](std::size_t i) { return mask[i] == free_label; };
  auto push_neighbors = [&](std::size_t i) {
    const std::size_t r = i / mask.cols, c = i % mask.cols;
    if (r > 0 && is_free(i - mask.cols)) frontier.push_back(i - mask.cols);
    if (r + 1 < mask.rows && is_free(i + mask.cols)) frontier.push_back(i + mask.cols);
    if (c > 0 && is_free(i - 1)) frontier.push_back(i - 1);
    if (c + 1 < mask.cols && is_free(i + 1)) frontier.push_back(i + 1);
  };
  std::size_t placed = 0;
  while (placed < size) {
    std::size_t cell = 0;
    bool found = false;
    while (!frontier.empty() && !found) {
      const std::size_t k = rng.below(frontier.size());
      cell = frontier[k];
      frontier[k] = frontier.back();
      frontier.pop_back();
      found = is_free(cell);
    }
    if (!found) {
      free_cells.erase(std::remove_if(free_cells.begin(), free_cells.end(), [&](std::size_t i) { return !is_free(i); }),
                       free_cells.end());
      require(!free_cells.empty(), ErrorCode::kInfeasible, "synthetic slide: no free tissue left for blob placement");
      cell = free_cells[rng.below(free_cells.size())];
    }
    mask[cell] = label;
    ++placed;
    push_neighbors(cell);
  }
}

// Target (%GP3, %GP4, %GP5) for a slide of the given grade group.
inline GpPercentages sample_percentages(GradeGroup g, const SyntheticConfig& cfg, Rng& rng) {
  switch (g) {
    case GradeGroup::kGG1: return {100.0, 0.0, 0.0};
    case GradeGroup::kGG2: {
      const double p = draw(rng, cfg.primary_pct_score7);
      return {p, 100.0 - p, 0.0};
    }
    case GradeGroup::kGG3: {
      const double p = draw(rng, cfg.primary_pct_score7);
      return {100.0 - p, p, 0.0};
    }
    case GradeGroup::kGG4_5: {
      const auto kind = rng.below(3);
      if (kind == 2) return {0.0, 0.0, 100.0};
      const double p = draw(rng, cfg.primary_pct_score9);
      return kind == 0 ? GpPercentages{0.0, p, 100.0 - p} : GpPercentages{0.0, 100.0 - p, p};
    }
  }
  return {};
}

inline GradeGroup draw_grade_group(const SyntheticConfig& cfg, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t g = 0; g < 3; ++g) {
    if (u < cfg.gg_mix[g]) return static_cast<GradeGroup>(g);
    u -= cfg.gg_mix[g];
  }
  return GradeGroup::kGG4_5;
}

}  // namespace synth_detail

inline std::string synthetic_slide_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%04zu", i);
  return buf;
}

// Seeded synthetic cohort: tissue ellipse with tumor blobs realizing sampled
// pattern percentages, reference GG from the realized percentages,
// exponential survival by GG, and optional 10 + 19 pathologist ratings.
inline Dataset synth_generate(const SyntheticConfig& cfg) {
  using namespace synth_detail;
  validate(cfg);
  Dataset ds;
  const std::size_t n = cfg.n_train + cfg.n_tune + cfg.n_validation;
  std::vector<double> rater_acc(29);
  {
    Rng rng(derive_seed(cfg.seed, 0x7261746572ULL));
    for (auto& a : rater_acc) a = draw(rng, cfg.rater_accuracy);
  }

  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(derive_seed(cfg.seed, s));
    SlideRecord slide;
    slide.slide_id = synthetic_slide_id(s);
    slide.resolution_um_per_px = cfg.resolution_um_per_px;
    slide.mask = LabelMask(cfg.rows, cfg.cols, RegionLabel::unlabeled(), cfg.stride_um);

    const double cy = (static_cast<double>(cfg.rows) - 1.0) / 2.0;
    const double cx = (static_cast<double>(cfg.cols) - 1.0) / 2.0;
    const double ry = draw(rng, cfg.tissue_radius) * static_cast<double>(cfg.rows) / 2.0;
    const double rx = draw(rng, cfg.tissue_radius) * static_cast<double>(cfg.cols) / 2.0;
    std::vector<std::size_t> free_cells;
    for (std::size_t r = 0; r < cfg.rows; ++r) {
      for (std::size_t c = 0; c < cfg.cols; ++c) {
        const double dy = (static_cast<double>(r) - cy) / ry;
        const double dx = (static_cast<double>(c) - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) {
          slide.mask.at(r, c) = RegionLabel::pattern(Pattern::kNonTumor);
          free_cells.push_back(r * cfg.cols + c);
        }
      }
    }
    const std::size_t n_tissue = free_cells.size();

    const GradeGroup target_gg = draw_grade_group(cfg, rng);
    const GpPercentages target = sample_percentages(target_gg, cfg, rng);
    Range band = cfg.tumor_fraction;
    if (cfg.tumor_fraction_by_grade) {
      const double w = (band.hi - band.lo) / 4.0;
      band.lo += w * static_cast<double>(grade_group_ordinal(target_gg) - 1);
      band.hi = band.lo + w;
    }
    auto tumor = static_cast<std::size_t>(std::lround(draw(rng, band) * static_cast<double>(n_tissue)));
    tumor = std::max(tumor, cfg.min_tumor_patches);
    require(tumor <= n_tissue, ErrorCode::kInfeasible, "synthetic slide: tissue too small for the tumor burden");

    std::array<std::size_t, 3> counts{};
    counts[0] = static_cast<std::size_t>(std::lround(target.gp3 / 100.0 * static_cast<double>(tumor)));
    counts[1] = static_cast<std::size_t>(std::lround(target.gp4 / 100.0 * static_cast<double>(tumor)));
    counts[1] = std::min(counts[1], tumor - counts[0]);
    counts[2] = tumor - counts[0] - counts[1];
    if (target.gp5 == 0.0 && counts[2] > 0) {  // rounding residue stays with GP4/GP3
      counts[target.gp4 > 0.0 ? 1 : 0] += counts[2];
      counts[2] = 0;
    }

    for (std::size_t p = 0; p < 3; ++p) {
      if (counts[p] == 0) continue;
      const std::size_t blobs = 1 + rng.below(std::min<std::size_t>(cfg.max_blobs_per_pattern, counts[p]));
      std::vector<double> share(blobs);
      double total = 0.0;
      for (auto& x : share) total += (x = 0.5 + rng.uniform());
      std::size_t left = counts[p];
      for (std::size_t b = 0; b < blobs; ++b) {
        const std::size_t size =
            b + 1 == blobs ? left
                           : std::min(left, std::max<std::size_t>(1, static_cast<std::size_t>(
                                                                        share[b] / total * static_cast<double>(counts[p]))));
        grow_region(slide.mask, free_cells, size, RegionLabel::pattern(kTumorPatterns[p]), rng);
        left -= size;
      }
    }
    const auto artifacts =
        static_cast<std::size_t>(std::lround(draw(rng, cfg.artifact_fraction) * static_cast<double>(n_tissue)));
    if (artifacts > 0 && artifacts + tumor < n_tissue) {
      grow_region(slide.mask, free_cells, artifacts, RegionLabel::artifact(), rng);
    }

    const double t = static_cast<double>(tumor);
    GpPercentages realized{100.0 * static_cast<double>(counts[0]) / t, 100.0 * static_cast<double>(counts[1]) / t,
                           100.0 * static_cast<double>(counts[2]) / t};
    slide.reference_pcts = realized;
    slide.reference_gg = grade_group_from_score(derive_gleason_score(realized));

    const auto gg = *slide.reference_gg;
    const double event_time = rng.exponential(cfg.hazard[static_cast<std::size_t>(gg)]);
    const double censor_time = rng.exponential(cfg.censor_rate);
    ds.clinical.push_back({slide.slide_id, std::min(event_time, censor_time), event_time <= censor_time});

    if (cfg.generate_ratings) {
      auto rate = [&](std::size_t rater) {
        if (rng.uniform() < rater_acc[rater]) return gg;
        int o = grade_group_ordinal(gg) + (rng.below(2) == 0 ? -1 : 1);
        if (o < 1) o = 2;
        if (o > 4) o = 3;
        return grade_group_from_ordinal(o);
      };
      auto rater_id = [](std::size_t r) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "P%02zu", r + 1);
        return std::string(buf);
      };
      for (std::size_t r = 0; r < 10; ++r) {
        ds.ratings.push_back({slide.slide_id, rater_id(r), RaterSubgroup::kTen, rate(r)});
      }
      std::array<std::size_t, 19> pool{};
      for (std::size_t i = 0; i < 19; ++i) pool[i] = 10 + i;
      for (std::size_t i = 0; i < 3; ++i) {
        std::swap(pool[i], pool[i + rng.below(19 - i)]);
        ds.ratings.push_back({slide.slide_id, rater_id(pool[i]), RaterSubgroup::kNineteen, rate(pool[i])});
      }
    }

    ds.slides.push_back(std::move(slide));
    ds.splits.push_back(s < cfg.n_train ? Split::kTrain : s < cfg.n_train + cfg.n_tune ? Split::kTune : Split::kValidation);
    ds.target_pcts.push_back(target);
  }
  return ds;
}

}  // namespace gleason
