#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gleason/core_model.hpp"
#include "gleason/parallel.hpp"
#include "gleason/rng.hpp"

namespace gleason {

template <typename T>
double accuracy(std::span<const T> predictions, std::span<const T> references) {
  require(predictions.size() == references.size(), ErrorCode::kInvalidArgument, "accuracy: length mismatch");
  require(!predictions.empty(), ErrorCode::kInvalidArgument, "accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == references[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

template <typename T>
double accuracy(const std::vector<T>& predictions, const std::vector<T>& references) {
  return accuracy(std::span<const T>(predictions), std::span<const T>(references));
}

// Grade-group weights of the population the accuracy is adjusted to.
struct PopulationWeights {
  std::array<double, kNumGradeGroups> w = {7397.0, 8353.0, 3106.0, 1968.0};
};

// Population-weighted mean of per-grade-group recall.
inline double adjusted_accuracy(std::span<const GradeGroup> predictions, std::span<const GradeGroup> references,
                                const PopulationWeights& weights = {}) {
  require(predictions.size() == references.size(), ErrorCode::kInvalidArgument,
          "adjusted_accuracy: length mismatch");
  require(!predictions.empty(), ErrorCode::kInvalidArgument, "adjusted_accuracy: empty input");
  std::array<std::size_t, kNumGradeGroups> total{}, hits{};
  for (std::size_t i = 0; i < references.size(); ++i) {
    const auto g = static_cast<std::size_t>(references[i]);
    ++total[g];
    if (predictions[i] == references[i]) ++hits[g];
  }
  double num = 0.0, den = 0.0;
  for (std::size_t g = 0; g < kNumGradeGroups; ++g) {
    require(weights.w[g] >= 0.0, ErrorCode::kInvalidArgument, "population weights must be non-negative");
    if (weights.w[g] == 0.0) continue;
    require(total[g] > 0, ErrorCode::kPrecondition,
            "adjusted_accuracy: weighted grade group " + grade_group_name(static_cast<GradeGroup>(g)) +
                " absent from references");
    num += weights.w[g] * static_cast<double>(hits[g]) / static_cast<double>(total[g]);
    den += weights.w[g];
  }
  require(den > 0.0, ErrorCode::kInvalidArgument, "population weights sum to zero");
  return num / den;
}

struct KappaResult {
  double value = 0.0;
  bool degenerate = false;  // chance agreement was 1; value forced to 0
};

// Unweighted Cohen's kappa over any totally ordered category type.
template <typename T>
KappaResult cohens_kappa_detail(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), ErrorCode::kInvalidArgument, "cohens_kappa: length mismatch");
  require(!a.empty(), ErrorCode::kInvalidArgument, "cohens_kappa: empty input");
  std::map<T, std::array<std::size_t, 2>> marginals;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++marginals[a[i]][0];
    ++marginals[b[i]][1];
    if (a[i] == b[i]) ++agree;
  }
  const double n = static_cast<double>(a.size());
  const double p_o = static_cast<double>(agree) / n;
  double p_e = 0.0;
  for (const auto& [_, m] : marginals) p_e += (static_cast<double>(m[0]) / n) * (static_cast<double>(m[1]) / n);
  if (p_e >= 1.0) return {0.0, true};
  return {(p_o - p_e) / (1.0 - p_e), false};
}

template <typename T>
double cohens_kappa(std::span<const T> a, std::span<const T> b) {
  return cohens_kappa_detail(a, b).value;
}

template <typename T>
double cohens_kappa(const std::vector<T>& a, const std::vector<T>& b) {
  return cohens_kappa(std::span<const T>(a), std::span<const T>(b));
}

inline double quantitation_mae(std::span<const double> predicted, std::span<const double> reference) {
  require(predicted.size() == reference.size(), ErrorCode::kInvalidArgument, "quantitation_mae: length mismatch");
  require(!predicted.empty(), ErrorCode::kInvalidArgument, "quantitation_mae: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - reference[i]);
  return sum / static_cast<double>(predicted.size());
}

// MAE of one pattern's percentage across aligned slides.
inline double quantitation_mae(std::span<const GpPercentages> predicted, std::span<const GpPercentages> reference,
                               Pattern pattern) {
  require(is_tumor(pattern), ErrorCode::kInvalidArgument, "quantitation_mae needs a tumor pattern");
  std::vector<double> p, r;
  p.reserve(predicted.size());
  r.reserve(reference.size());
  for (const auto& x : predicted) p.push_back(x.of(pattern));
  for (const auto& x : reference) r.push_back(x.of(pattern));
  return quantitation_mae(p, r);
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  double auc = 0.5;
  std::vector<RocPoint> curve;  // starts at (0, 0), one point per distinct score
};

// Trapezoidal ROC AUC over all distinct thresholds (ties contribute 1/2).
inline RocResult roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require(scores.size() == labels.size(), ErrorCode::kInvalidArgument, "roc_auc: length mismatch");
  std::size_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  require(pos > 0 && neg > 0, ErrorCode::kPrecondition, "roc_auc needs both positive and negative labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult out;
  out.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the area in units of (pos * neg), kept integral until the end.
  double twice_area = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::size_t dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (labels[order[i]]) ++dtp; else ++dfp;
    }
    twice_area += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    out.curve.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos)});
  }
  out.auc = twice_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return out;
}

// Linear-interpolation percentile of sorted data, q in [0, 1].
inline double percentile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorCode::kInvalidArgument, "percentile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile interval of a replicate statistic. Replicate r uses its own
// stream derived from (seed, r), so results do not depend on `jobs`.
inline ConfidenceInterval percentile_interval(std::function<double(Rng&)> replicate, std::size_t replicates,
                                              std::uint64_t seed, double level = 0.95, std::size_t jobs = 1) {
  require(replicates > 0, ErrorCode::kInvalidArgument, "bootstrap needs at least one replicate");
  std::vector<double> stats(replicates);
  parallel_for(replicates, jobs, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    stats[r] = replicate(rng);
  });
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - level) / 2.0;
  return {percentile_sorted(stats, tail), percentile_sorted(stats, 1.0 - tail)};
}

// Nonparametric bootstrap over n exchangeable units: statistic receives
// the resampled unit indices.
inline ConfidenceInterval bootstrap_indices_ci(std::size_t n,
                                               const std::function<double(std::span<const std::size_t>)>& statistic,
                                               std::size_t replicates, std::uint64_t seed, std::size_t jobs = 1) {
  require(n > 0, ErrorCode::kInvalidArgument, "bootstrap of empty sample");
  return percentile_interval(
      [&](Rng& rng) {
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
        return statistic(idx);
      },
      replicates, seed, 0.95, jobs);
}

enum class RaterSubgroup : std::uint8_t { kTen, kNineteen, kOther };

inline std::string subgroup_name(RaterSubgroup s) {
  switch (s) {
    case RaterSubgroup::kTen: return "ten";
    case RaterSubgroup::kNineteen: return "nineteen";
    case RaterSubgroup::kOther: return "other";
  }
  return "other";
}

inline RaterSubgroup subgroup_from_name(const std::string& s) {
  if (s == "ten") return RaterSubgroup::kTen;
  if (s == "nineteen") return RaterSubgroup::kNineteen;
  if (s == "other") return RaterSubgroup::kOther;
  fail(ErrorCode::kSchema, "unknown rater subgroup '" + s + "'");
}

struct Rating {
  std::string rater_id;
  RaterSubgroup subgroup = RaterSubgroup::kOther;
  GradeGroup grade = GradeGroup::kGG1;
  std::optional<GpPercentages> pcts;
};

struct RatedSlide {
  std::string slide_id;
  GradeGroup reference = GradeGroup::kGG1;
  GradeGroup dls = GradeGroup::kGG1;
  std::vector<Rating> ratings;
  std::optional<GpPercentages> reference_pcts;
  std::optional<GpPercentages> dls_pcts;
};

struct RatingTable {
  std::vector<RatedSlide> slides;
};

inline double dls_accuracy(const RatingTable& table) {
  require(!table.slides.empty(), ErrorCode::kInvalidArgument, "empty rating table");
  std::size_t hits = 0;
  for (const auto& s : table.slides) hits += s.dls == s.reference ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(table.slides.size());
}

// Accuracy of each rater over the slides that rater graded.
inline std::map<std::string, double> rater_accuracies(const RatingTable& table) {
  std::map<std::string, std::array<std::size_t, 2>> counts;
  for (const auto& s : table.slides) {
    for (const auto& r : s.ratings) {
      auto& c = counts[r.rater_id];
      ++c[1];
      if (r.grade == s.reference) ++c[0];
    }
  }
  std::map<std::string, double> out;
  for (const auto& [id, c] : counts) out[id] = static_cast<double>(c[0]) / static_cast<double>(c[1]);
  return out;
}

inline double mean_rater_accuracy(const RatingTable& table) {
  const auto acc = rater_accuracies(table);
  require(!acc.empty(), ErrorCode::kPrecondition, "rating table has no pathologist ratings");
  double sum = 0.0;
  for (const auto& [_, a] : acc) sum += a;
  return sum / static_cast<double>(acc.size());
}

// One bootstrap table: slides drawn with replacement, raters drawn with
// replacement within their own subgroup. A rater drawn k times appears as
// k distinct clones named "<id>#<draw>".
inline RatingTable resample_rating_table(const RatingTable& table, Rng& rng) {
  std::array<std::vector<std::string>, 3> pools;
  {
    std::array<std::map<std::string, bool>, 3> seen;
    for (const auto& s : table.slides) {
      for (const auto& r : s.ratings) {
        const auto g = static_cast<std::size_t>(r.subgroup);
        if (!seen[g].contains(r.rater_id)) {
          seen[g][r.rater_id] = true;
          pools[g].push_back(r.rater_id);
        }
      }
    }
  }
  // Drawn clones per original rater id.
  std::unordered_map<std::string, std::vector<std::string>> clones;
  std::size_t draw = 0;
  for (auto& pool : pools) {
    const std::size_t n = pool.size();
    for (std::size_t k = 0; k < n; ++k) {
      const auto& id = pool[rng.below(n)];
      clones[id].push_back(id + "#" + std::to_string(draw++));
    }
  }

  RatingTable out;
  out.slides.reserve(table.slides.size());
  const std::size_t n = table.slides.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& src = table.slides[rng.below(n)];
    RatedSlide s = src;
    s.ratings.clear();
    for (const auto& r : src.ratings) {
      auto it = clones.find(r.rater_id);
      if (it == clones.end()) continue;
      for (const auto& clone_id : it->second) {
        Rating c = r;
        c.rater_id = clone_id;
        s.ratings.push_back(std::move(c));
      }
    }
    out.slides.push_back(std::move(s));
  }
  return out;
}

inline ConfidenceInterval bootstrap_ci(const std::function<double(const RatingTable&)>& metric,
                                       const RatingTable& table, std::size_t replicates, std::uint64_t seed,
                                       std::size_t jobs = 1) {
  require(!table.slides.empty(), ErrorCode::kInvalidArgument, "bootstrap of empty rating table");
  return percentile_interval(
      [&](Rng& rng) { return metric(resample_rating_table(table, rng)); }, replicates, seed, 0.95, jobs);
}

struct PermutationResult {
  double observed = 0.0;
  double p_value = 1.0;
  std::size_t iterations = 0;
};

// Two-tailed test of DLS accuracy minus mean pathologist accuracy. Each
// iteration swaps, per slide, the DLS rating with one of the slide's
// ratings chosen uniformly among DLS + pathologists (self-swap included).
inline PermutationResult permutation_test_vs_cohort(const RatingTable& table, std::size_t iterations,
                                                    std::uint64_t seed, bool cohort_design = true) {
  require(!table.slides.empty(), ErrorCode::kInvalidArgument, "permutation test on empty table");
  require(iterations > 0, ErrorCode::kInvalidArgument, "permutation test needs iterations");

  std::map<std::string, std::size_t> rater_index;
  for (const auto& s : table.slides) {
    if (cohort_design) {
      require(s.ratings.size() == 13, ErrorCode::kPrecondition,
              "slide " + s.slide_id + " has " + std::to_string(s.ratings.size()) +
                  " pathologist ratings; the cohort design needs 13");
    }
    for (const auto& r : s.ratings) rater_index.emplace(r.rater_id, rater_index.size());
  }
  require(!rater_index.empty(), ErrorCode::kPrecondition, "permutation test needs pathologist ratings");

  const std::size_t n_raters = rater_index.size();
  struct SlideRow {
    std::vector<std::size_t> rater;
    std::vector<std::uint8_t> correct;  // per rating
    std::uint8_t dls_correct = 0;
  };
  std::vector<SlideRow> rows;
  std::vector<double> rated(n_raters, 0.0);
  std::vector<double> base_hits(n_raters, 0.0);
  double base_dls = 0.0;
  for (const auto& s : table.slides) {
    SlideRow row;
    row.dls_correct = s.dls == s.reference ? 1 : 0;
    base_dls += row.dls_correct;
    for (const auto& r : s.ratings) {
      const std::size_t ri = rater_index.at(r.rater_id);
      row.rater.push_back(ri);
      row.correct.push_back(r.grade == s.reference ? 1 : 0);
      rated[ri] += 1.0;
      base_hits[ri] += row.correct.back();
    }
    rows.push_back(std::move(row));
  }
  const double n_slides = static_cast<double>(rows.size());
  auto statistic = [&](double dls_hits, const std::vector<double>& hits) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n_raters; ++r) mean += hits[r] / rated[r];
    return dls_hits / n_slides - mean / static_cast<double>(n_raters);
  };

  PermutationResult result;
  result.iterations = iterations;
  result.observed = statistic(base_dls, base_hits);
  const double threshold = std::abs(result.observed) - 1e-12;

  Rng rng(seed);
  std::vector<double> hits(n_raters);
  std::size_t exceed = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    hits = base_hits;
    double dls = base_dls;
    for (const auto& row : rows) {
      const std::size_t slot = rng.below(row.rater.size() + 1);
      if (slot == 0) continue;
      const std::size_t k = slot - 1;
      // Swap: the DLS takes the rating's correctness and vice versa.
      dls += static_cast<double>(row.correct[k]) - row.dls_correct;
      hits[row.rater[k]] += static_cast<double>(row.dls_correct) - row.correct[k];
    }
    if (std::abs(statistic(dls, hits)) >= threshold) ++exceed;
  }
  result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + iterations);
  return result;
}

// Index into slide.ratings of the one rating picked per slide: each of the
// 10 subgroup-Ten ratings with probability 1/29, each of the 3
// subgroup-Nineteen ratings with probability (19/29)(1/3).
inline std::vector<std::size_t> cohort29_sample(const RatingTable& table, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(table.slides.size());
  for (const auto& s : table.slides) {
    std::vector<std::size_t> ten, nineteen;
    for (std::size_t i = 0; i < s.ratings.size(); ++i) {
      if (s.ratings[i].subgroup == RaterSubgroup::kTen) ten.push_back(i);
      else if (s.ratings[i].subgroup == RaterSubgroup::kNineteen) nineteen.push_back(i);
    }
    require(ten.size() == 10 && nineteen.size() == 3, ErrorCode::kPrecondition,
            "slide " + s.slide_id + " does not follow the 10 + 3 rating design");
    // 87 equally likely outcomes: 3 per Ten rating, 19 per Nineteen rating.
    const auto r = static_cast<std::size_t>(rng.below(87));
    out.push_back(r < 30 ? ten[r / 3] : nineteen[(r - 30) / 19]);
  }
  return out;
}

struct Cohort29Median {
  std::size_t iteration = 0;
  double value = 0.0;
  std::vector<GradeGroup> grades;
};

// Runs `iterations` cohort-of-29 draws and returns the draw whose metric
// is the median (iterations should be odd); ties go to the earlier draw.
inline Cohort29Median cohort29_median(const RatingTable& table,
                                      const std::function<double(const std::vector<GradeGroup>&)>& metric,
                                      std::size_t iterations, std::uint64_t seed) {
  require(iterations > 0, ErrorCode::kInvalidArgument, "cohort29_median needs iterations");
  Rng rng(seed);
  std::vector<std::vector<GradeGroup>> draws;
  std::vector<std::pair<double, std::size_t>> values;
  draws.reserve(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto pick = cohort29_sample(table, rng);
    std::vector<GradeGroup> grades;
    grades.reserve(pick.size());
    for (std::size_t s = 0; s < pick.size(); ++s) grades.push_back(table.slides[s].ratings[pick[s]].grade);
    values.emplace_back(metric(grades), it);
    draws.push_back(std::move(grades));
  }
  // NaN metrics (undefined on a draw) sort after every number.
  std::sort(values.begin(), values.end(), [](const auto& a, const auto& b) {
    const bool na = std::isnan(a.first), nb = std::isnan(b.first);
    if (na != nb) return nb;
    if (!na && a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  const auto& [value, it] = values[(iterations - 1) / 2];
  return {it, value, draws[it]};
}

}  // namespace gleason
