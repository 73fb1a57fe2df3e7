#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gleason/error.hpp"

namespace gleason {

// Patch categories in severity order.
enum class Pattern : std::uint8_t { kNonTumor = 0, kGP3 = 1, kGP4 = 2, kGP5 = 3 };

inline constexpr std::size_t kNumPatterns = 4;
inline constexpr std::array<Pattern, 3> kTumorPatterns = {Pattern::kGP3, Pattern::kGP4, Pattern::kGP5};

constexpr std::size_t index_of(Pattern p) { return static_cast<std::size_t>(p); }
constexpr bool is_tumor(Pattern p) { return p != Pattern::kNonTumor; }

// Gleason pattern number (3, 4, 5); 0 for non-tumor.
constexpr int pattern_number(Pattern p) { return is_tumor(p) ? static_cast<int>(p) + 2 : 0; }

inline Pattern pattern_from_number(int n) {
  require(n >= 3 && n <= 5, ErrorCode::kInvalidArgument,
          "Gleason pattern number must be 3, 4 or 5, got " + std::to_string(n));
  return static_cast<Pattern>(n - 2);
}

inline Pattern pattern_from_index(std::size_t i) {
  require(i < kNumPatterns, ErrorCode::kInvalidArgument, "pattern index out of range");
  return static_cast<Pattern>(i);
}

// Likelihoods over (NonTumor, GP3, GP4, GP5).
using Prob4 = std::array<double, kNumPatterns>;

inline Prob4 one_hot(Pattern p) {
  Prob4 v{};
  v[index_of(p)] = 1.0;
  return v;
}

inline bool is_probability_vector(const Prob4& p, double tol = 1e-6) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

// Argmax with ties resolved toward the more severe category.
inline Pattern argmax_severe(const Prob4& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumPatterns; ++i) {
    if (p[i] >= p[best]) best = i;
  }
  return static_cast<Pattern>(best);
}

// Region annotation as drawn by a pathologist.
struct RegionLabel {
  enum class Kind : std::uint8_t { kPattern, kMixedGrade, kArtifact, kConsult, kNonGradable, kUnlabeled };

  Kind kind = Kind::kUnlabeled;
  Pattern primary = Pattern::kNonTumor;    // kPattern and kMixedGrade
  Pattern secondary = Pattern::kNonTumor;  // kMixedGrade only

  static RegionLabel pattern(Pattern p) { return {Kind::kPattern, p, Pattern::kNonTumor}; }
  static RegionLabel mixed(Pattern primary, Pattern secondary) {
    require(is_tumor(primary) && is_tumor(secondary) && primary != secondary, ErrorCode::kInvalidArgument,
            "mixed-grade labels need two distinct tumor patterns");
    return {Kind::kMixedGrade, primary, secondary};
  }
  static RegionLabel artifact() { return {Kind::kArtifact}; }
  static RegionLabel consult() { return {Kind::kConsult}; }
  static RegionLabel non_gradable() { return {Kind::kNonGradable}; }
  static RegionLabel unlabeled() { return {Kind::kUnlabeled}; }

  friend bool operator==(const RegionLabel&, const RegionLabel&) = default;
};

// Serialized integer codes for masks:
//   0..3 NonTumor/GP3/GP4/GP5, p*10+s mixed grade (e.g. 54 = 5+4),
//   96 non-gradable tumor, 97 consult, 98 artifact, 99 unlabeled.
inline int label_code(const RegionLabel& label) {
  using K = RegionLabel::Kind;
  switch (label.kind) {
    case K::kPattern: return static_cast<int>(label.primary);
    case K::kMixedGrade: return pattern_number(label.primary) * 10 + pattern_number(label.secondary);
    case K::kNonGradable: return 96;
    case K::kConsult: return 97;
    case K::kArtifact: return 98;
    case K::kUnlabeled: return 99;
  }
  return 99;
}

inline RegionLabel label_from_code(int code) {
  if (code >= 0 && code <= 3) return RegionLabel::pattern(static_cast<Pattern>(code));
  switch (code) {
    case 96: return RegionLabel::non_gradable();
    case 97: return RegionLabel::consult();
    case 98: return RegionLabel::artifact();
    case 99: return RegionLabel::unlabeled();
    default: break;
  }
  const int p = code / 10;
  const int s = code % 10;
  if (p >= 3 && p <= 5 && s >= 3 && s <= 5 && p != s) {
    return RegionLabel::mixed(pattern_from_number(p), pattern_from_number(s));
  }
  fail(ErrorCode::kSchema, "unknown region label code " + std::to_string(code));
}

// Rectangular grid of per-patch payloads at a fixed physical stride.
template <typename T>
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double stride_um = 32.0;
  std::vector<T> values;

  PatchGrid() = default;
  PatchGrid(std::size_t r, std::size_t c, T fill = T{}, double stride = 32.0)
      : rows(r), cols(c), stride_um(stride), values(r * c, fill) {
    require(stride > 0.0, ErrorCode::kInvalidArgument, "stride_um must be positive");
  }

  std::size_t size() const { return values.size(); }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
  T& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  template <typename U>
  bool congruent(const PatchGrid<U>& other) const {
    return rows == other.rows && cols == other.cols;
  }

  bool valid() const { return rows * cols == values.size() && stride_um > 0.0; }
};

using LikelihoodMap = PatchGrid<Prob4>;
using LabelMask = PatchGrid<RegionLabel>;
using TissueMask = PatchGrid<std::uint8_t>;

inline bool is_valid_likelihood_map(const LikelihoodMap& map, double tol = 1e-6) {
  if (!map.valid()) return false;
  for (const auto& v : map.values) {
    if (!is_probability_vector(v, tol)) return false;
  }
  return true;
}

enum class GradeGroup : std::uint8_t { kGG1 = 0, kGG2 = 1, kGG3 = 2, kGG4_5 = 3 };

inline constexpr std::size_t kNumGradeGroups = 4;

// Ordinal risk encoding GG1..GG4_5 -> 1..4.
constexpr int grade_group_ordinal(GradeGroup g) { return static_cast<int>(g) + 1; }

inline GradeGroup grade_group_from_ordinal(int ordinal) {
  require(ordinal >= 1 && ordinal <= 4, ErrorCode::kSchema,
          "grade group ordinal must be 1..4, got " + std::to_string(ordinal));
  return static_cast<GradeGroup>(ordinal - 1);
}

inline std::string grade_group_name(GradeGroup g) {
  switch (g) {
    case GradeGroup::kGG1: return "GG1";
    case GradeGroup::kGG2: return "GG2";
    case GradeGroup::kGG3: return "GG3";
    case GradeGroup::kGG4_5: return "GG4-5";
  }
  return "?";
}

struct GpPercentages {
  double gp3 = 0.0;
  double gp4 = 0.0;
  double gp5 = 0.0;

  double of(Pattern p) const {
    switch (p) {
      case Pattern::kGP3: return gp3;
      case Pattern::kGP4: return gp4;
      case Pattern::kGP5: return gp5;
      default: return 0.0;
    }
  }
  friend bool operator==(const GpPercentages&, const GpPercentages&) = default;
};

struct SlideRecord {
  std::string slide_id;
  LabelMask mask;
  std::vector<LabelMask> annotator_masks;
  std::optional<GradeGroup> reference_gg;
  std::optional<GpPercentages> reference_pcts;
  double resolution_um_per_px = 0.25;
};

struct GleasonScore {
  Pattern primary = Pattern::kGP3;
  Pattern secondary = Pattern::kGP3;

  int value() const { return pattern_number(primary) + pattern_number(secondary); }
  friend bool operator==(const GleasonScore&, const GleasonScore&) = default;
};

inline std::string to_string(const GleasonScore& s) {
  return std::to_string(pattern_number(s.primary)) + "+" + std::to_string(pattern_number(s.secondary));
}

struct ClinicalRecord {
  std::string slide_id;
  double time = 0.0;   // months
  bool event = false;  // false = censored
};

enum class ResolutionPolicy { kTraining, kUnanimous };

// Maps one annotation onto a patch category; nullopt for labels that carry
// no usable category (unlabeled, consult, non-gradable).
inline std::optional<Pattern> training_category(const RegionLabel& label) {
  using K = RegionLabel::Kind;
  switch (label.kind) {
    case K::kPattern: return label.primary;
    case K::kMixedGrade: return label.primary;
    case K::kArtifact: return Pattern::kNonTumor;
    default: return std::nullopt;
  }
}

// Combines the annotations of one region into a single category, or
// nullopt when the region must be skipped.
inline std::optional<Pattern> resolve_region_label(std::span<const RegionLabel> labels, ResolutionPolicy policy) {
  require(!labels.empty(), ErrorCode::kPrecondition, "resolve_region_label needs at least one label");
  std::array<std::size_t, kNumPatterns> votes{};
  std::size_t mapped = 0;
  for (const auto& label : labels) {
    if (auto c = training_category(label)) {
      ++votes[index_of(*c)];
      ++mapped;
    }
  }
  if (mapped == 0) return std::nullopt;

  if (policy == ResolutionPolicy::kUnanimous) {
    if (mapped != labels.size()) return std::nullopt;
    for (std::size_t i = 0; i < kNumPatterns; ++i) {
      if (votes[i] == labels.size()) return static_cast<Pattern>(i);
    }
    return std::nullopt;
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumPatterns; ++i) {
    if (votes[i] >= votes[best]) best = i;
  }
  return static_cast<Pattern>(best);
}

// Ground-truth category of one patch: majority over annotator masks when
// present, else the resolved mask.
inline std::optional<Pattern> resolved_patch_label(const SlideRecord& slide, std::size_t patch,
                                                   ResolutionPolicy policy = ResolutionPolicy::kTraining) {
  if (slide.annotator_masks.empty()) {
    return training_category(slide.mask[patch]);
  }
  std::vector<RegionLabel> labels;
  labels.reserve(slide.annotator_masks.size());
  for (const auto& m : slide.annotator_masks) labels.push_back(m[patch]);
  return resolve_region_label(labels, policy);
}

// Patches with a resolvable label are tissue.
inline TissueMask tissue_mask_of(const SlideRecord& slide) {
  TissueMask tissue(slide.mask.rows, slide.mask.cols, 0, slide.mask.stride_um);
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    tissue[i] = resolved_patch_label(slide, i).has_value() ? 1 : 0;
  }
  return tissue;
}

// Primary = largest percentage, secondary = next-largest positive one
// (or the primary itself); ties go to the more severe pattern.
inline GleasonScore derive_gleason_score(double pct_gp3, double pct_gp4, double pct_gp5) {
  const std::array<double, 3> pct = {pct_gp3, pct_gp4, pct_gp5};
  double sum = 0.0;
  for (double p : pct) {
    require(std::isfinite(p) && p >= 0.0 && p <= 100.0, ErrorCode::kInvalidArgument,
            "Gleason pattern percentages must lie in [0, 100]");
    sum += p;
  }
  require(sum <= 100.0 + 1e-6, ErrorCode::kInvalidArgument, "Gleason pattern percentages exceed 100");
  if (sum == 0.0) fail(ErrorCode::kNoTumor, "slide has no tumor; Gleason score undefined");

  // Severe-first scan with strict comparison keeps the more severe on ties.
  int primary = -1;
  for (int i = 2; i >= 0; --i) {
    if (primary < 0 || pct[i] > pct[primary]) primary = i;
  }
  int secondary = -1;
  for (int i = 2; i >= 0; --i) {
    if (i == primary || pct[i] <= 0.0) continue;
    if (secondary < 0 || pct[i] > pct[secondary]) secondary = i;
  }
  if (secondary < 0) secondary = primary;
  return {static_cast<Pattern>(primary + 1), static_cast<Pattern>(secondary + 1)};
}

inline GleasonScore derive_gleason_score(const GpPercentages& p) { return derive_gleason_score(p.gp3, p.gp4, p.gp5); }

inline GradeGroup grade_group_from_score(const GleasonScore& score) {
  require(is_tumor(score.primary) && is_tumor(score.secondary), ErrorCode::kInvalidArgument,
          "Gleason score needs tumor patterns");
  const int total = score.value();
  if (total <= 6) return GradeGroup::kGG1;
  if (total == 7) return score.primary == Pattern::kGP3 ? GradeGroup::kGG2 : GradeGroup::kGG3;
  return GradeGroup::kGG4_5;
}

}  // namespace gleason
