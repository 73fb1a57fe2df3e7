#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "gleason/stage1.hpp"

using namespace gleason;

namespace {

SlideRecord uniform_slide(const std::string& id, Pattern p, std::size_t rows = 4, std::size_t cols = 4) {
  SlideRecord s;
  s.slide_id = id;
  s.mask = LabelMask(rows, cols, RegionLabel::pattern(p));
  return s;
}

void expect_prob_near(const Prob4& a, const Prob4& b, double tol) {
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], tol) << "component " << i;
}

class FixedOrientationClassifier final : public PatchClassifier {
 public:
  explicit FixedOrientationClassifier(std::array<Prob4, 8> preds) : preds_(preds) {}
  std::optional<Prob4> classify(const SlideRecord&, std::size_t, Orientation o) const override {
    return preds_[o.rotation + (o.flipped ? 4 : 0)];
  }

 private:
  std::array<Prob4, 8> preds_;
};

}  // namespace

TEST(OracleClassify, ZeroNoiseIsOneHot) {
  const auto slide = uniform_slide("s", Pattern::kGP4);
  SyntheticOracleConfig cfg;
  cfg.noise_eps = 0.0;
  cfg.concentration = 5.0;
  cfg.slide_concentration = 5.0;
  EXPECT_EQ(*oracle_classify(slide, 3, cfg), (Prob4{0, 0, 1, 0}));
}

TEST(OracleClassify, PureNoiseReturnsBiasRow) {
  const auto slide = uniform_slide("s", Pattern::kGP3);
  SyntheticOracleConfig cfg;
  cfg.noise_eps = 1.0;
  for (auto& row : cfg.confusion_bias) row = {0.25, 0.25, 0.25, 0.25};
  expect_prob_near(*oracle_classify(slide, 0, cfg), {0.25, 0.25, 0.25, 0.25}, 1e-15);
}

TEST(OracleClassify, MixesOneHotWithBiasRow) {
  const auto slide = uniform_slide("s", Pattern::kGP3);
  SyntheticOracleConfig cfg;
  cfg.noise_eps = 0.4;
  cfg.confusion_bias[1] = {0.1, 0.5, 0.3, 0.1};
  expect_prob_near(*oracle_classify(slide, 0, cfg), {0.04, 0.80, 0.12, 0.04}, 1e-12);
}

TEST(OracleClassify, UnresolvablePatchIsUndefined) {
  auto slide = uniform_slide("s", Pattern::kGP3);
  slide.mask[2] = RegionLabel::consult();
  EXPECT_FALSE(oracle_classify(slide, 2, {}).has_value());
}

TEST(OracleClassify, RandomizedNoiseIsKeyedAndValid) {
  auto a = uniform_slide("a", Pattern::kGP4, 6, 6);
  auto b = uniform_slide("b", Pattern::kGP4, 6, 6);
  SyntheticOracleConfig cfg;
  cfg.noise_eps = 0.6;
  cfg.concentration = 1.0;
  cfg.slide_concentration = 4.0;
  cfg.seed = 99;
  bool differs_by_patch = false, differs_by_slide = false;
  for (std::size_t p = 0; p < a.mask.size(); ++p) {
    const auto x = *oracle_classify(a, p, cfg);
    EXPECT_TRUE(is_probability_vector(x));
    EXPECT_EQ(x, *oracle_classify(a, p, cfg));
    EXPECT_EQ(x[0], 0.0);  // adjacent bias row of GP4 has no NonTumor mass
    EXPECT_GE(x[2], 0.4 - 1e-12);
    if (x != *oracle_classify(a, 0, cfg)) differs_by_patch = true;
    if (x != *oracle_classify(b, p, cfg)) differs_by_slide = true;
  }
  EXPECT_TRUE(differs_by_patch);
  EXPECT_TRUE(differs_by_slide);
  const auto first = *oracle_classify(a, 0, cfg);
  cfg.seed = 100;
  EXPECT_NE(*oracle_classify(a, 0, cfg), first);
}

TEST(GeometricMeanEnsemble, Idempotent) {
  const Prob4 p = {0.1, 0.2, 0.3, 0.4};
  const std::vector<Prob4> v = {p, p, p};
  expect_prob_near(geometric_mean_ensemble(v), p, 1e-15);
}

TEST(GeometricMeanEnsemble, FloorsZerosBeforeLogs) {
  const std::vector<Prob4> v = {{0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}};
  const auto g = geometric_mean_ensemble(v);
  // Every entry is sqrt(0.5 * 1e-12); symmetry makes them equal.
  expect_prob_near(g, {0.25, 0.25, 0.25, 0.25}, 1e-12);
}

TEST(GeometricMeanEnsemble, OrderInvariantAndEmptyRejected) {
  std::vector<Prob4> v = {{0.1, 0.2, 0.3, 0.4}, {0.4, 0.3, 0.2, 0.1}, {0.7, 0.1, 0.1, 0.1}};
  const auto a = geometric_mean_ensemble(v);
  std::swap(v[0], v[2]);
  expect_prob_near(geometric_mean_ensemble(v), a, 1e-15);
  EXPECT_THROW(geometric_mean_ensemble(std::vector<Prob4>{}), Error);
}

TEST(GeometricMeanEnsemble, BetweenInputsBeforeRenormalization) {
  std::mt19937_64 gen(3);
  std::gamma_distribution<double> g(1.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<Prob4> v(3);
    for (auto& p : v) {
      double s = 0;
      for (auto& x : p) s += (x = g(gen));
      for (auto& x : p) x /= s;
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const double raw = std::cbrt(v[0][i] * v[1][i] * v[2][i]);
      const double lo = std::min({v[0][i], v[1][i], v[2][i]});
      const double hi = std::max({v[0][i], v[1][i], v[2][i]});
      EXPECT_GE(raw, lo * (1 - 1e-12));
      EXPECT_LE(raw, hi * (1 + 1e-12));
    }
    EXPECT_TRUE(is_probability_vector(geometric_mean_ensemble(v)));
  }
}

TEST(EnsembleOrientations, OracleMatchesSingleCall) {
  const auto slide = uniform_slide("s", Pattern::kGP5);
  SyntheticOracleConfig cfg;
  cfg.noise_eps = 0.3;
  cfg.concentration = 2.0;
  cfg.seed = 5;
  SyntheticOracle oracle(cfg);
  for (std::size_t p = 0; p < slide.mask.size(); ++p) {
    // Exact zeros are floored at 1e-12 before the renormalization.
    expect_prob_near(*ensemble_orientations(oracle, slide, p), *oracle_classify(slide, p, cfg), 1e-11);
  }
}

TEST(EnsembleOrientations, EightDistinctVectors) {
  std::array<Prob4, 8> preds{};
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (auto& p : preds) {
    double s = 0;
    for (auto& x : p) s += (x = u(gen));
    for (auto& x : p) x /= s;
  }
  FixedOrientationClassifier clf(preds);
  const auto slide = uniform_slide("s", Pattern::kGP3);
  // Oracle: eighth root of the componentwise product, then normalize.
  Prob4 expected{};
  double sum = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    double prod = 1.0;
    for (const auto& p : preds) prod *= p[i];
    expected[i] = std::pow(prod, 1.0 / 8.0);
    sum += expected[i];
  }
  for (auto& x : expected) x /= sum;
  expect_prob_near(*ensemble_orientations(clf, slide, 0), expected, 1e-12);
}

TEST(Calibrate, Examples) {
  const Prob4 l = {0.1, 0.2, 0.3, 0.4};
  expect_prob_near(calibrate(l, {}), l, 1e-15);
  expect_prob_near(calibrate({0.25, 0.25, 0.25, 0.25}, {{1, 2, 3, 4}}), {0.1, 0.2, 0.3, 0.4}, 1e-15);
  expect_prob_near(calibrate(l, {{3, 6, 9, 12}}), calibrate(l, {{1, 2, 3, 4}}), 1e-15);
  EXPECT_THROW(calibrate(l, {{0, 1, 1, 1}}), Error);
}

TEST(Calibrate, PreservesZerosAndIdentityArgmax) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    Prob4 l{};
    double s = 0;
    for (auto& x : l) s += (x = u(gen) < 0.3 ? 0.0 : u(gen));
    if (s == 0) continue;
    for (auto& x : l) x /= s;
    const CalibrationWeights w{{std::ldexp(1.0, t % 5 - 2), 2.0, 0.5, 8.0}};
    const auto c = calibrate(l, w);
    for (std::size_t i = 0; i < 4; ++i) {
      if (l[i] == 0.0) {
        EXPECT_EQ(c[i], 0.0);
      }
    }
    EXPECT_EQ(argmax_severe(calibrate(l, {})), argmax_severe(l));
  }
}

TEST(CalibrationLattice, ShapeAndOrder) {
  const auto lattice = calibration_lattice();
  ASSERT_EQ(lattice.size(), 343u);
  EXPECT_EQ(lattice.front(), CalibrationWeights{});
  for (const auto& w : lattice) EXPECT_EQ(w.w[0], 1.0);
  EXPECT_EQ(lattice[1].w, (Prob4{1, 1, 1, 0.5}));
  EXPECT_EQ(lattice[2].w, (Prob4{1, 1, 1, 2}));
  EXPECT_EQ(lattice.back().w, (Prob4{1, 8, 8, 8}));
  EXPECT_EQ(calibration_exponents(-3, 3), (std::vector<int>{0, -1, 1, -2, 2, -3, 3}));
}

namespace {

// Per-slide prediction: grade group indexed by the calibrated argmax.
TuningGrader argmax_grader(const std::vector<Prob4>& slides) {
  return [slides](const CalibrationWeights& w) {
    std::vector<GradeGroup> out;
    for (const auto& l : slides) out.push_back(static_cast<GradeGroup>(index_of(argmax_severe(calibrate(l, w)))));
    return out;
  };
}

}  // namespace

TEST(FitCalibration, PerfectClassifierKeepsIdentity) {
  std::vector<Prob4> slides;
  std::vector<GradeGroup> ref;
  for (int i = 0; i < 12; ++i) {
    const auto p = static_cast<Pattern>(i % 4);
    slides.push_back(one_hot(p));
    ref.push_back(static_cast<GradeGroup>(i % 4));
  }
  const auto fit = fit_calibration(ref, argmax_grader(slides));
  EXPECT_DOUBLE_EQ(fit.kappa, 1.0);
  const auto lattice = calibration_lattice();
  const auto it = std::find(lattice.begin(), lattice.end(), CalibrationWeights{});
  ASSERT_NE(it, lattice.end());
  EXPECT_DOUBLE_EQ(fit.lattice_kappa[static_cast<std::size_t>(it - lattice.begin())], 1.0);
  EXPECT_EQ(fit.weights, CalibrationWeights{});
}

TEST(FitCalibration, SingleSlideStillReturnsWeights) {
  const auto fit = fit_calibration(std::vector<GradeGroup>{GradeGroup::kGG3},
                                   argmax_grader({{0.1, 0.2, 0.6, 0.1}}));
  for (double w : fit.weights.w) EXPECT_GT(w, 0.0);
}

TEST(FitCalibration, RecoversSkewedClassifier) {
  // GP4 likelihood inflated 8x: the fit must shrink it.
  std::vector<Prob4> slides;
  std::vector<GradeGroup> ref;
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (int i = 0; i < 40; ++i) {
    const std::size_t t = static_cast<std::size_t>(i % 4);
    Prob4 l = {0.1, 0.1, 0.1, 0.1};
    l[t] = u(gen);
    l[2] *= 8.0;
    double s = 0;
    for (double x : l) s += x;
    for (auto& x : l) x /= s;
    slides.push_back(l);
    ref.push_back(static_cast<GradeGroup>(t));
  }
  const auto fit = fit_calibration(ref, argmax_grader(slides));
  EXPECT_DOUBLE_EQ(fit.kappa, 1.0);
  EXPECT_LT(fit.weights.w[2], 1.0);
}

TEST(FitCalibration, OrderInvariantAndParallelSafe) {
  std::vector<Prob4> slides;
  std::vector<GradeGroup> ref;
  std::mt19937_64 gen(9);
  std::gamma_distribution<double> g(0.7, 1.0);
  for (int i = 0; i < 30; ++i) {
    Prob4 l{};
    double s = 0;
    for (auto& x : l) s += (x = g(gen) + 1e-3);
    for (auto& x : l) x /= s;
    slides.push_back(l);
    ref.push_back(static_cast<GradeGroup>(gen() % 4));
  }
  const auto a = fit_calibration(ref, argmax_grader(slides));
  std::swap(slides[3], slides[17]);
  std::swap(ref[3], ref[17]);
  const auto b = fit_calibration(ref, argmax_grader(slides), calibration_lattice(), 4);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_DOUBLE_EQ(a.kappa, b.kappa);
  EXPECT_THROW(fit_calibration(std::vector<GradeGroup>{}, argmax_grader({})), Error);
}

TEST(InferSlide, UnlabeledPatchesLeaveTissue) {
  auto slide = uniform_slide("s", Pattern::kGP3, 2, 2);
  slide.mask[1] = RegionLabel::unlabeled();
  SyntheticOracle oracle({});
  const auto h = infer_slide(oracle, slide);
  EXPECT_EQ(h.tissue[0], 1);
  EXPECT_EQ(h.tissue[1], 0);
  EXPECT_EQ(argmax_severe(h.likelihoods[0]), Pattern::kGP3);
  EXPECT_TRUE(is_valid_likelihood_map(h.likelihoods));
}
