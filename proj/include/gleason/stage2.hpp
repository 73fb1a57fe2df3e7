#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "gleason/core_model.hpp"
#include "gleason/stage1.hpp"

namespace gleason {

// Slide summary: %Tumor over tissue patches, %GP3/4/5 over tumor patches.
struct FeatureVector {
  double pct_tumor = 0.0;
  double pct_gp3 = 0.0;
  double pct_gp4 = 0.0;
  double pct_gp5 = 0.0;

  std::array<double, 4> as_array() const { return {pct_tumor, pct_gp3, pct_gp4, pct_gp5}; }
  GpPercentages gp() const { return {pct_gp3, pct_gp4, pct_gp5}; }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

namespace stage2_detail {

template <typename Likelihood>
FeatureVector count_features(std::size_t n, const TissueMask& tissue, Likelihood&& likelihood) {
  std::array<std::size_t, kNumPatterns> counts{};
  std::size_t n_tissue = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!tissue[i]) continue;
    ++n_tissue;
    ++counts[index_of(argmax_severe(likelihood(i)))];
  }
  require(n_tissue > 0, ErrorCode::kPrecondition, "extract_features: slide has no tissue patches");
  const std::size_t n_tumor = n_tissue - counts[0];
  if (n_tumor == 0) return {};
  const double tumor = static_cast<double>(n_tumor);
  return {100.0 * tumor / static_cast<double>(n_tissue), 100.0 * static_cast<double>(counts[1]) / tumor,
          100.0 * static_cast<double>(counts[2]) / tumor, 100.0 * static_cast<double>(counts[3]) / tumor};
}

}  // namespace stage2_detail

// Per-patch argmax (severe on ties) of calibrated likelihoods, counted.
inline FeatureVector extract_features(const LikelihoodMap& calibrated, const TissueMask& tissue) {
  require(calibrated.congruent(tissue) && calibrated.size() == tissue.size(), ErrorCode::kInvalidArgument,
          "extract_features: heatmap and tissue mask differ in shape");
  return stage2_detail::count_features(calibrated.size(), tissue, [&](std::size_t i) -> const Prob4& {
    return calibrated[i];
  });
}

// Same as extract_features(calibrate(raw, weights), tissue) without
// materializing the calibrated map.
inline FeatureVector extract_features(const SlideHeatmap& raw, const CalibrationWeights& weights) {
  const auto& map = raw.likelihoods;
  require(map.congruent(raw.tissue) && map.size() == raw.tissue.size(), ErrorCode::kInvalidArgument,
          "extract_features: heatmap and tissue mask differ in shape");
  return stage2_detail::count_features(map.size(), raw.tissue, [&](std::size_t i) { return calibrate(map[i], weights); });
}

using Point4 = std::array<double, 4>;

// Per-feature linear map of the training range onto [0, 1]. Values
// outside the range clamp; a constant feature maps to 0.
struct FeatureRescaler {
  Point4 min{};
  Point4 max{};

  Point4 apply(const FeatureVector& f) const {
    const auto x = f.as_array();
    Point4 out{};
    for (std::size_t i = 0; i < 4; ++i) {
      const double span = max[i] - min[i];
      out[i] = span > 0.0 ? std::clamp((x[i] - min[i]) / span, 0.0, 1.0) : 0.0;
    }
    return out;
  }
};

inline FeatureRescaler fit_rescaler(std::span<const FeatureVector> training) {
  require(!training.empty(), ErrorCode::kInvalidArgument, "fit_rescaler: empty training set");
  FeatureRescaler r;
  r.min = training.front().as_array();
  r.max = r.min;
  for (const auto& f : training) {
    const auto x = f.as_array();
    for (std::size_t i = 0; i < 4; ++i) {
      r.min[i] = std::min(r.min[i], x[i]);
      r.max[i] = std::max(r.max[i], x[i]);
    }
  }
  return r;
}

inline constexpr std::size_t kDefaultNeighbors = 24;

// Uniform-vote kNN over integer class labels, where a larger label is the
// more severe class (grade group index, or 0/1 for binary tasks).
struct KnnModel {
  std::vector<Point4> points;
  std::vector<int> labels;
  std::size_t k = kDefaultNeighbors;
  int num_classes = 4;
};

inline double squared_distance(const Point4& a, const Point4& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

inline void validate(const KnnModel& model) {
  require(model.points.size() == model.labels.size(), ErrorCode::kInvalidArgument,
          "kNN model: points and labels differ in length");
  require(model.k > 0, ErrorCode::kInvalidArgument, "kNN model: k must be positive");
  require(model.k <= model.points.size(), ErrorCode::kPrecondition,
          "kNN model: k = " + std::to_string(model.k) + " exceeds the " + std::to_string(model.points.size()) +
              " training points");
  for (int l : model.labels) {
    require(l >= 0 && l < model.num_classes, ErrorCode::kInvalidArgument, "kNN model: label out of range");
  }
}

// Indices of the k nearest training points; equal distances keep the
// earlier training point.
inline std::vector<std::size_t> knn_neighbors(const KnnModel& model, const Point4& query) {
  validate(model);
  std::vector<std::pair<double, std::size_t>> d(model.points.size());
  for (std::size_t i = 0; i < model.points.size(); ++i) d[i] = {squared_distance(model.points[i], query), i};
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(model.k - 1), d.end());
  std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(model.k));
  std::vector<std::size_t> out(model.k);
  for (std::size_t i = 0; i < model.k; ++i) out[i] = d[i].second;
  return out;
}

// Plurality label among the k nearest; vote ties go to the larger label.
inline int knn_predict_label(const KnnModel& model, const Point4& query) {
  const auto nn = knn_neighbors(model, query);
  std::vector<std::size_t> votes(static_cast<std::size_t>(model.num_classes), 0);
  for (auto i : nn) ++votes[static_cast<std::size_t>(model.labels[i])];
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] >= votes[best]) best = c;
  }
  return static_cast<int>(best);
}

inline GradeGroup knn_predict(const KnnModel& model, const Point4& query) {
  return static_cast<GradeGroup>(knn_predict_label(model, query));
}

// Fraction of the k nearest neighbors with a positive (label 1) vote.
inline double knn_binary_score(const KnnModel& model, const Point4& query) {
  require(model.num_classes == 2, ErrorCode::kInvalidArgument, "knn_binary_score needs a binary model");
  const auto nn = knn_neighbors(model, query);
  std::size_t pos = 0;
  for (auto i : nn) pos += model.labels[i] == 1 ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(nn.size());
}

inline KnnModel fit_knn(std::span<const Point4> points, std::span<const GradeGroup> labels,
                        std::size_t k = kDefaultNeighbors) {
  KnnModel m;
  m.points.assign(points.begin(), points.end());
  for (auto g : labels) m.labels.push_back(static_cast<int>(g));
  m.k = k;
  m.num_classes = 4;
  validate(m);
  return m;
}

// Binary model for the task GG >= threshold (threshold in {2, 3, 4}, as
// grade-group ordinal).
inline KnnModel fit_binary_knn(std::span<const Point4> points, std::span<const GradeGroup> labels, int threshold,
                               std::size_t k = kDefaultNeighbors) {
  require(threshold >= 2 && threshold <= 4, ErrorCode::kInvalidArgument, "binary threshold must be 2, 3 or 4");
  KnnModel m;
  m.points.assign(points.begin(), points.end());
  for (auto g : labels) m.labels.push_back(grade_group_ordinal(g) >= threshold ? 1 : 0);
  m.k = k;
  m.num_classes = 2;
  validate(m);
  return m;
}

inline constexpr std::array<int, 3> kBinaryThresholds = {2, 3, 4};

struct GraderModel {
  CalibrationWeights calibration;
  FeatureRescaler rescaler;
  KnnModel grade_group;
  std::array<KnnModel, 3> binary;  // GG >= 2, 3, 4
};

struct SlideGrade {
  GradeGroup grade_group = GradeGroup::kGG1;
  FeatureVector features;
  std::array<double, 3> binary_scores{};
};

// Stage 2 on an inferred heatmap: calibrate, summarize, rescale, vote.
inline SlideGrade grade_heatmap(const SlideHeatmap& heatmap, const GraderModel& model) {
  SlideGrade out;
  out.features = extract_features(heatmap, model.calibration);
  const auto x = model.rescaler.apply(out.features);
  out.grade_group = knn_predict(model.grade_group, x);
  for (std::size_t t = 0; t < 3; ++t) out.binary_scores[t] = knn_binary_score(model.binary[t], x);
  return out;
}

inline SlideGrade grade_slide(const SlideRecord& slide, const PatchClassifier& classifier, const GraderModel& model) {
  return grade_heatmap(infer_slide(classifier, slide), model);
}

}  // namespace gleason
