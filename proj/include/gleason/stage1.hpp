#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gleason/core_model.hpp"
#include "gleason/eval_stats.hpp"
#include "gleason/parallel.hpp"
#include "gleason/rng.hpp"

namespace gleason {

inline constexpr double kLikelihoodFloor = 1e-12;

// Four 90-degree rotations, each with and without a left-right flip.
struct Orientation {
  std::uint8_t rotation = 0;  // quarter turns, 0..3
  bool flipped = false;
};

inline std::array<Orientation, 8> all_orientations() {
  std::array<Orientation, 8> out{};
  for (std::uint8_t i = 0; i < 8; ++i) out[i] = {static_cast<std::uint8_t>(i % 4), i >= 4};
  return out;
}

// Stage-1 patch classifier: likelihoods over (NonTumor, GP3, GP4, GP5) for
// one patch seen in one orientation, or nullopt for patches it cannot
// classify.
class PatchClassifier {
 public:
  virtual ~PatchClassifier() = default;
  virtual std::optional<Prob4> classify(const SlideRecord& slide, std::size_t patch, Orientation orientation) const = 0;
  // True when classify ignores the orientation; the ensemble then needs a
  // single call.
  virtual bool orientation_invariant() const { return false; }
};

using ConfusionMatrix = std::array<Prob4, kNumPatterns>;

// Leaks mass only to severity-adjacent categories.
inline ConfusionMatrix adjacent_confusion() {
  return {{
      {0.0, 1.0, 0.0, 0.0},
      {0.5, 0.0, 0.5, 0.0},
      {0.0, 0.5, 0.0, 0.5},
      {0.0, 0.0, 1.0, 0.0},
  }};
}

struct SyntheticOracleConfig {
  double noise_eps = 0.0;
  ConfusionMatrix confusion_bias = adjacent_confusion();
  std::uint64_t seed = 0;
  // Dirichlet concentration of the per-patch noise draw around the
  // confusion row; 0 uses the row itself.
  double concentration = 0.0;
  // When positive, each slide first draws its own confusion row around the
  // configured one (slide-level bias shared by all its patches).
  double slide_concentration = 0.0;
};

namespace oracle_detail {

// Dirichlet(alpha * mean) over the support of mean; falls back to mean
// when every gamma draw underflows.
inline Prob4 dirichlet_around(const Prob4& mean, double alpha, SplitMix64& engine) {
  Prob4 out{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumPatterns; ++i) {
    if (mean[i] > 0.0) {
      std::gamma_distribution<double> gamma(alpha * mean[i], 1.0);
      out[i] = gamma(engine);
    }
    sum += out[i];
  }
  if (!(sum > 0.0)) return mean;
  for (auto& x : out) x /= sum;
  return out;
}

}  // namespace oracle_detail

// Mixes the one-hot ground truth with a (possibly randomized) confusion
// row. Randomness is keyed by (seed, slide_id, patch) only.
inline std::optional<Prob4> oracle_classify(const SlideRecord& slide, std::size_t patch,
                                            const SyntheticOracleConfig& cfg) {
  const auto truth = resolved_patch_label(slide, patch);
  if (!truth) return std::nullopt;
  const std::size_t t = index_of(*truth);
  Prob4 noise = cfg.confusion_bias[t];
  if (cfg.noise_eps > 0.0) {
    const std::uint64_t slide_key = hash_string(slide.slide_id);
    if (cfg.slide_concentration > 0.0) {
      SplitMix64 engine(derive_seed(cfg.seed, slide_key, ~std::uint64_t{0} - t));
      noise = oracle_detail::dirichlet_around(noise, cfg.slide_concentration, engine);
    }
    if (cfg.concentration > 0.0) {
      SplitMix64 engine(derive_seed(cfg.seed, slide_key, patch));
      noise = oracle_detail::dirichlet_around(noise, cfg.concentration, engine);
    }
  }
  Prob4 out{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumPatterns; ++i) {
    out[i] = (1.0 - cfg.noise_eps) * (i == t ? 1.0 : 0.0) + cfg.noise_eps * noise[i];
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

class SyntheticOracle final : public PatchClassifier {
 public:
  explicit SyntheticOracle(SyntheticOracleConfig cfg) : cfg_(cfg) {}

  std::optional<Prob4> classify(const SlideRecord& slide, std::size_t patch, Orientation) const override {
    return oracle_classify(slide, patch, cfg_);
  }
  bool orientation_invariant() const override { return true; }

  const SyntheticOracleConfig& config() const { return cfg_; }

 private:
  SyntheticOracleConfig cfg_;
};

// Componentwise geometric mean (entries floored at 1e-12), renormalized.
inline Prob4 geometric_mean_ensemble(std::span<const Prob4> predictions) {
  require(!predictions.empty(), ErrorCode::kInvalidArgument, "geometric_mean_ensemble of empty list");
  Prob4 log_sum{};
  for (const auto& p : predictions) {
    for (std::size_t i = 0; i < kNumPatterns; ++i) log_sum[i] += std::log(std::max(p[i], kLikelihoodFloor));
  }
  Prob4 out{};
  double sum = 0.0;
  const double n = static_cast<double>(predictions.size());
  for (std::size_t i = 0; i < kNumPatterns; ++i) {
    out[i] = std::exp(log_sum[i] / n);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

inline std::optional<Prob4> ensemble_orientations(const PatchClassifier& classifier, const SlideRecord& slide,
                                                  std::size_t patch) {
  std::array<Prob4, 8> preds{};
  std::size_t k = 0;
  if (classifier.orientation_invariant()) {
    auto p = classifier.classify(slide, patch, Orientation{});
    if (!p) return std::nullopt;
    return geometric_mean_ensemble(std::span<const Prob4>(&*p, 1));
  }
  for (const auto& o : all_orientations()) {
    auto p = classifier.classify(slide, patch, o);
    if (!p) return std::nullopt;
    preds[k++] = *p;
  }
  return geometric_mean_ensemble(preds);
}

struct CalibrationWeights {
  Prob4 w = {1.0, 1.0, 1.0, 1.0};

  friend bool operator==(const CalibrationWeights&, const CalibrationWeights&) = default;
};

inline Prob4 calibrate(const Prob4& likelihoods, const CalibrationWeights& weights) {
  Prob4 out{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumPatterns; ++i) {
    require(weights.w[i] > 0.0, ErrorCode::kInvalidArgument, "calibration weights must be positive");
    out[i] = weights.w[i] * likelihoods[i];
    sum += out[i];
  }
  require(sum > 0.0, ErrorCode::kInvalidArgument, "calibrate: likelihoods sum to zero");
  for (auto& x : out) x /= sum;
  return out;
}

inline LikelihoodMap calibrate(const LikelihoodMap& map, const CalibrationWeights& weights) {
  LikelihoodMap out = map;
  for (auto& v : out.values) v = calibrate(v, weights);
  return out;
}

// Runs the stage-1 classifier over every patch of a slide. Patches the
// classifier cannot label keep a one-hot NonTumor vector and are dropped
// from the returned tissue mask.
struct SlideHeatmap {
  LikelihoodMap likelihoods;
  TissueMask tissue;
};

inline SlideHeatmap infer_slide(const PatchClassifier& classifier, const SlideRecord& slide) {
  const auto& m = slide.mask;
  SlideHeatmap out{LikelihoodMap(m.rows, m.cols, one_hot(Pattern::kNonTumor), m.stride_um),
                   TissueMask(m.rows, m.cols, 0, m.stride_um)};
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (auto p = ensemble_orientations(classifier, slide, i)) {
      out.likelihoods[i] = *p;
      out.tissue[i] = 1;
    }
  }
  return out;
}

// Weight vectors searched by fit_calibration: NonTumor fixed at 1, the three
// tumor weights on {2^k : k = k_min..k_max}. Exponent tuples run in
// lexicographic order with each axis ordered 0, -1, 1, -2, 2, ... so the
// identity comes first and ties resolve toward the mildest recalibration.
inline std::vector<int> calibration_exponents(int k_min, int k_max) {
  require(k_min <= k_max, ErrorCode::kInvalidArgument, "calibration lattice: empty exponent range");
  std::vector<int> ks;
  for (int k = k_min; k <= k_max; ++k) ks.push_back(k);
  std::stable_sort(ks.begin(), ks.end(), [](int a, int b) {
    const int ma = a < 0 ? -a : a, mb = b < 0 ? -b : b;
    return ma != mb ? ma < mb : a < b;
  });
  return ks;
}

inline std::vector<CalibrationWeights> calibration_lattice(int k_min = -3, int k_max = 3) {
  const auto ks = calibration_exponents(k_min, k_max);
  std::vector<CalibrationWeights> out;
  for (int a : ks) {
    for (int b : ks) {
      for (int c : ks) out.push_back({{1.0, std::ldexp(1.0, a), std::ldexp(1.0, b), std::ldexp(1.0, c)}});
    }
  }
  return out;
}

struct CalibrationFit {
  CalibrationWeights weights;
  double kappa = 0.0;
  std::vector<double> lattice_kappa;  // aligned with the searched lattice
};

// Grader: tuning-set grade-group predictions under the given weights.
using TuningGrader = std::function<std::vector<GradeGroup>(const CalibrationWeights&)>;

// Picks the lattice point maximizing Cohen's kappa of the downstream
// grader on the tuning set; the first maximizer wins.
inline CalibrationFit fit_calibration(std::span<const GradeGroup> tuning_reference, const TuningGrader& grader,
                                      const std::vector<CalibrationWeights>& lattice = calibration_lattice(),
                                      std::size_t jobs = 1) {
  require(!tuning_reference.empty(), ErrorCode::kInvalidArgument, "fit_calibration: empty tuning set");
  require(!lattice.empty(), ErrorCode::kInvalidArgument, "fit_calibration: empty lattice");
  CalibrationFit fit;
  fit.lattice_kappa.assign(lattice.size(), 0.0);
  parallel_for(lattice.size(), jobs, [&](std::size_t i) {
    const auto predicted = grader(lattice[i]);
    require(predicted.size() == tuning_reference.size(), ErrorCode::kInvalidArgument,
            "fit_calibration: grader returned the wrong number of predictions");
    fit.lattice_kappa[i] = cohens_kappa(std::span<const GradeGroup>(predicted), tuning_reference);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < lattice.size(); ++i) {
    if (fit.lattice_kappa[i] > fit.lattice_kappa[best]) best = i;
  }
  fit.weights = lattice[best];
  fit.kappa = fit.lattice_kappa[best];
  return fit;
}

}  // namespace gleason
