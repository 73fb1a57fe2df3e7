#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gleason/core_model.hpp"

namespace gleason {

struct TopTwoTumor {
  Pattern lo;  // lower pattern number of the two
  Pattern hi;
  double l_lo;
  double l_hi;
};

// The two most likely tumor patterns; ties prefer the more severe one.
inline TopTwoTumor top_two_tumor(const Prob4& likelihoods) {
  int first = -1;
  for (int i = 3; i >= 1; --i) {
    if (first < 0 || likelihoods[i] > likelihoods[first]) first = i;
  }
  int second = -1;
  for (int i = 3; i >= 1; --i) {
    if (i == first) continue;
    if (second < 0 || likelihoods[i] > likelihoods[second]) second = i;
  }
  require(likelihoods[first] > 0.0, ErrorCode::kPrecondition, "quantitative GP needs a positive tumor likelihood");
  const int lo = std::min(first, second);
  const int hi = std::max(first, second);
  return {static_cast<Pattern>(lo), static_cast<Pattern>(hi), likelihoods[lo], likelihoods[hi]};
}

// Literal interpolation: P_lo + l_lo / (l_lo + l_hi). A one-hot GP3
// prediction maps to 4.0 under this form.
inline double quantitative_gp_verbatim(const Prob4& likelihoods) {
  const auto t = top_two_tumor(likelihoods);
  return pattern_number(t.lo) + t.l_lo / (t.l_lo + t.l_hi);
}

// Continuous form: P_lo + l_hi / (l_lo + l_hi), in [3, 5], exact on
// one-hot tumor predictions.
inline double quantitative_gp_smooth(const Prob4& likelihoods) {
  const auto t = top_two_tumor(likelihoods);
  return pattern_number(t.lo) + t.l_hi / (t.l_lo + t.l_hi);
}

using Rgb8 = std::array<std::uint8_t, 3>;
using Lab = std::array<double, 3>;

namespace color_detail {

inline constexpr std::array<double, 3> kWhiteD65 = {0.95047, 1.0, 1.08883};

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

inline double lab_f_inv(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta ? t * t * t : 3.0 * delta * delta * (t - 4.0 / 29.0);
}

}  // namespace color_detail

inline Lab srgb_to_lab(const Rgb8& rgb) {
  using namespace color_detail;
  const double r = srgb_to_linear(rgb[0] / 255.0);
  const double g = srgb_to_linear(rgb[1] / 255.0);
  const double b = srgb_to_linear(rgb[2] / 255.0);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  const double fx = lab_f(x / kWhiteD65[0]);
  const double fy = lab_f(y / kWhiteD65[1]);
  const double fz = lab_f(z / kWhiteD65[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Out-of-gamut channels clamp to [0, 255].
inline Rgb8 lab_to_srgb(const Lab& lab) {
  using namespace color_detail;
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const double x = kWhiteD65[0] * lab_f_inv(fx);
  const double y = kWhiteD65[1] * lab_f_inv(fy);
  const double z = kWhiteD65[2] * lab_f_inv(fz);
  const std::array<double, 3> lin = {
      3.2404542 * x - 1.5371385 * y - 0.4985314 * z,
      -0.9692660 * x + 1.8760108 * y + 0.0415560 * z,
      0.0556434 * x - 0.2040259 * y + 1.0572252 * z,
  };
  Rgb8 out{};
  for (std::size_t i = 0; i < 3; ++i) {
    const double c = std::clamp(linear_to_srgb(std::max(lin[i], 0.0)), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
  }
  return out;
}

// GP3 green, GP4 yellow, GP5 red.
inline constexpr std::array<Rgb8, 3> kGpAnchors = {{{0, 128, 0}, {255, 255, 0}, {255, 0, 0}}};

// Quantitative GP in [3, 5] to sRGB, interpolating linearly in CIELAB
// between the flanking anchors. Values outside [3, 5] clamp.
inline Rgb8 colormap_cielab(double qgp) {
  const double q = std::clamp(qgp, 3.0, 5.0);
  const std::size_t seg = q < 4.0 ? 0 : 1;
  const double t = q - 3.0 - static_cast<double>(seg);
  const Lab a = srgb_to_lab(kGpAnchors[seg]);
  const Lab b = srgb_to_lab(kGpAnchors[seg + 1]);
  Lab mid{};
  for (std::size_t i = 0; i < 3; ++i) mid[i] = (1.0 - t) * a[i] + t * b[i];
  return lab_to_srgb(mid);
}

// Index of the candidate whose quantitative GP is nearest the target;
// the first wins on ties.
inline std::size_t exemplar_retrieval(double target, std::span<const double> qgps) {
  require(!qgps.empty(), ErrorCode::kInvalidArgument, "exemplar_retrieval: empty candidate list");
  std::size_t best = 0;
  double best_d = std::abs(qgps[0] - target);
  for (std::size_t i = 1; i < qgps.size(); ++i) {
    const double d = std::abs(qgps[i] - target);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

struct FineGrainedFeatures {
  double pct_gp3 = 0.0;
  double pct_gp35 = 0.0;
  double pct_gp4 = 0.0;
  double pct_gp45 = 0.0;
  double pct_gp5 = 0.0;

  std::array<double, 5> as_array() const { return {pct_gp3, pct_gp35, pct_gp4, pct_gp45, pct_gp5}; }
};

// Nearest of {3, 3.5, 4, 4.5, 5}; edges 3.25/3.75/4.25/4.75 are
// right-closed (a value on an edge joins the lower bucket).
inline std::size_t finegrained_bucket(double qgp) {
  constexpr std::array<double, 4> edges = {3.25, 3.75, 4.25, 4.75};
  std::size_t b = 0;
  while (b < edges.size() && qgp > edges[b]) ++b;
  return b;
}

inline FineGrainedFeatures finegrained_features_from_values(std::span<const double> qgps) {
  std::array<std::size_t, 5> counts{};
  for (double q : qgps) ++counts[finegrained_bucket(q)];
  if (qgps.empty()) return {};
  const double n = static_cast<double>(qgps.size());
  auto pct = [&](std::size_t i) { return 100.0 * static_cast<double>(counts[i]) / n; };
  return {pct(0), pct(1), pct(2), pct(3), pct(4)};
}

// Smooth quantitative GP of each tumor-predicted tissue patch, bucketed.
inline FineGrainedFeatures finegrained_features(const LikelihoodMap& calibrated, const TissueMask& tissue) {
  require(calibrated.congruent(tissue) && calibrated.size() == tissue.size(), ErrorCode::kInvalidArgument,
          "finegrained_features: heatmap and tissue mask differ in shape");
  std::vector<double> q;
  for (std::size_t i = 0; i < calibrated.size(); ++i) {
    if (tissue[i] && is_tumor(argmax_severe(calibrated[i]))) q.push_back(quantitative_gp_smooth(calibrated[i]));
  }
  return finegrained_features_from_values(q);
}

enum class RenderBackground { kTransparent, kWhite };

// One RGBA pixel per patch; non-tumor and non-tissue patches get the
// background.
inline std::vector<std::uint8_t> render_finegrained_rgba(const LikelihoodMap& calibrated, const TissueMask& tissue,
                                                         RenderBackground background) {
  require(calibrated.congruent(tissue) && calibrated.size() == tissue.size(), ErrorCode::kInvalidArgument,
          "render: heatmap and tissue mask differ in shape");
  const std::array<std::uint8_t, 4> bg =
      background == RenderBackground::kWhite ? std::array<std::uint8_t, 4>{255, 255, 255, 255}
                                             : std::array<std::uint8_t, 4>{0, 0, 0, 0};
  std::vector<std::uint8_t> out(calibrated.size() * 4);
  for (std::size_t i = 0; i < calibrated.size(); ++i) {
    std::array<std::uint8_t, 4> px = bg;
    if (tissue[i] && is_tumor(argmax_severe(calibrated[i]))) {
      const auto c = colormap_cielab(quantitative_gp_smooth(calibrated[i]));
      px = {c[0], c[1], c[2], 255};
    }
    std::copy(px.begin(), px.end(), out.begin() + static_cast<std::ptrdiff_t>(4 * i));
  }
  return out;
}

}  // namespace gleason
