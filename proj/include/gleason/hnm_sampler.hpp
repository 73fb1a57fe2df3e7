#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gleason/core_model.hpp"
#include "gleason/parallel.hpp"
#include "gleason/rng.hpp"
#include "gleason/stage1.hpp"

namespace gleason {

// Fenwick tree over non-negative slot weights: O(log n) point update and
// inverse-CDF sampling.
class WeightedIndex {
 public:
  WeightedIndex() = default;
  explicit WeightedIndex(std::size_t n, double w = 1.0) { assign(std::vector<double>(n, w)); }
  explicit WeightedIndex(std::span<const double> weights) { assign(weights); }

  void assign(std::span<const double> weights) {
    weights_.assign(weights.begin(), weights.end());
    tree_.assign(weights_.size() + 1, 0.0);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      require(weights_[i] >= 0.0 && std::isfinite(weights_[i]), ErrorCode::kInvalidArgument,
              "WeightedIndex weights must be finite and non-negative");
      tree_[i + 1] += weights_[i];
      const std::size_t parent = (i + 1) + ((i + 1) & (~(i + 1) + 1));
      if (parent <= weights_.size()) tree_[parent] += tree_[i + 1];
    }
  }

  std::size_t size() const { return weights_.size(); }
  double weight(std::size_t i) const { return weights_[i]; }
  std::span<const double> weights() const { return weights_; }

  void update(std::size_t i, double w) {
    require(i < weights_.size(), ErrorCode::kInvalidArgument, "WeightedIndex::update out of range");
    require(w >= 0.0 && std::isfinite(w), ErrorCode::kInvalidArgument,
            "WeightedIndex weights must be finite and non-negative");
    const double delta = w - weights_[i];
    weights_[i] = w;
    for (std::size_t k = i + 1; k <= weights_.size(); k += k & (~k + 1)) tree_[k] += delta;
  }

  // Sum of weights[0, end).
  double prefix(std::size_t end) const {
    double s = 0.0;
    for (std::size_t k = end; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  double total() const { return prefix(weights_.size()); }

  // Slot i such that prefix(i) <= u * total < prefix(i + 1), u in [0, 1).
  std::size_t sample(double u) const {
    const double t = total();
    require(!weights_.empty() && t > 0.0, ErrorCode::kPrecondition, "sampling from an empty WeightedIndex");
    double remaining = u * t;
    std::size_t pos = 0;
    for (std::size_t step = std::bit_floor(weights_.size()); step > 0; step >>= 1) {
      const std::size_t next = pos + step;
      if (next <= weights_.size() && tree_[next] <= remaining) {
        pos = next;
        remaining -= tree_[next];
      }
    }
    // Rounding can push past the last positive slot; fall back to it.
    if (pos >= weights_.size() || weights_[pos] <= 0.0) {
      pos = std::min(pos, weights_.size() - 1);
      while (pos > 0 && weights_[pos] <= 0.0) --pos;
    }
    return pos;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> tree_;  // 1-based
};

inline double cross_entropy_loss(const Prob4& prediction, Pattern truth) {
  return -std::log(std::max(prediction[index_of(truth)], kLikelihoodFloor));
}

struct PatchGroup {
  std::vector<std::size_t> patches;  // patch indices within the slide
  WeightedIndex index;
};

struct TrainingDraw {
  std::size_t slide = 0;  // position in the sampler's slide list
  std::string slide_id;
  std::size_t patch = 0;
  Pattern category = Pattern::kNonTumor;
};

// Three-level draw: category by ratio, slide uniformly among slides holding
// that category, patch by the slide's (category) weights.
class SamplerState {
 public:
  static constexpr std::array<double, kNumPatterns> kDefaultRatios = {4.0, 2.0, 2.0, 1.0};

  SamplerState(std::span<const SlideRecord> slides, std::uint64_t seed,
               std::array<double, kNumPatterns> ratios = kDefaultRatios)
      : ratios_(ratios), rng_(seed) {
    for (double r : ratios_) {
      require(r >= 0.0 && std::isfinite(r), ErrorCode::kInvalidArgument, "category ratios must be non-negative");
    }
    groups_.resize(slides.size());
    for (std::size_t s = 0; s < slides.size(); ++s) {
      slide_ids_.push_back(slides[s].slide_id);
      for (std::size_t p = 0; p < slides[s].mask.size(); ++p) {
        if (auto c = resolved_patch_label(slides[s], p)) groups_[s][index_of(*c)].patches.push_back(p);
      }
      for (std::size_t c = 0; c < kNumPatterns; ++c) {
        auto& g = groups_[s][c];
        g.index = WeightedIndex(g.patches.size(), 1.0);
        if (!g.patches.empty()) slides_with_[c].push_back(s);
      }
    }
  }

  std::size_t num_slides() const { return groups_.size(); }
  const std::string& slide_id(std::size_t s) const { return slide_ids_[s]; }
  const PatchGroup& group(std::size_t slide, Pattern c) const { return groups_[slide][index_of(c)]; }
  PatchGroup& group(std::size_t slide, Pattern c) { return groups_[slide][index_of(c)]; }
  std::span<const std::size_t> slides_with(Pattern c) const { return slides_with_[index_of(c)]; }
  const std::array<double, kNumPatterns>& ratios() const { return ratios_; }
  Rng& rng() { return rng_; }

 private:
  std::array<double, kNumPatterns> ratios_;
  Rng rng_;
  std::vector<std::string> slide_ids_;
  std::vector<std::array<PatchGroup, kNumPatterns>> groups_;
  std::array<std::vector<std::size_t>, kNumPatterns> slides_with_;
};

// Categories absent from every slide are redrawn up to `max_retries` times.
inline TrainingDraw sample_training_patch(SamplerState& state, std::size_t max_retries = 64) {
  const auto& ratios = state.ratios();
  double ratio_total = 0.0;
  for (double r : ratios) ratio_total += r;
  require(ratio_total > 0.0, ErrorCode::kInvalidArgument, "category ratios sum to zero");

  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    double u = state.rng().uniform() * ratio_total;
    std::size_t c = 0;
    while (c + 1 < kNumPatterns && (u >= ratios[c] || ratios[c] == 0.0)) {
      u -= ratios[c];
      ++c;
    }
    const auto category = static_cast<Pattern>(c);
    const auto holders = state.slides_with(category);
    if (holders.empty()) continue;
    const std::size_t slide = holders[state.rng().below(holders.size())];
    const auto& group = state.group(slide, category);
    const std::size_t slot = group.index.sample(state.rng().uniform());
    return {slide, state.slide_id(slide), group.patches[slot], category};
  }
  fail(ErrorCode::kPrecondition, "sampler: no slide contains the drawn category after retry budget");
}

struct PatchLoss {
  std::string slide_id;
  std::size_t patch = 0;
  double loss = 0.0;
};

// One inference pass over all labeled patches; sampling weights inside
// every (slide, category) group become proportional to the current loss.
// Groups whose losses are all zero go back to uniform.
inline std::vector<PatchLoss> mining_round(SamplerState& state, const PatchClassifier& classifier,
                                           std::span<const SlideRecord> slides, std::size_t jobs = 1) {
  require(slides.size() == state.num_slides(), ErrorCode::kInvalidArgument,
          "mining_round: slide list does not match the sampler");
  std::vector<std::vector<PatchLoss>> per_slide(slides.size());
  parallel_for(slides.size(), jobs, [&](std::size_t s) {
    for (std::size_t c = 0; c < kNumPatterns; ++c) {
      auto& group = state.group(s, static_cast<Pattern>(c));
      if (group.patches.empty()) continue;
      std::vector<double> losses(group.patches.size());
      double total = 0.0;
      for (std::size_t k = 0; k < group.patches.size(); ++k) {
        const auto pred = ensemble_orientations(classifier, slides[s], group.patches[k]);
        require(pred.has_value(), ErrorCode::kPrecondition,
                "mining_round: classifier undefined on a labeled patch");
        losses[k] = cross_entropy_loss(*pred, static_cast<Pattern>(c));
        total += losses[k];
      }
      if (total > 0.0) {
        group.index.assign(losses);
      } else {
        group.index.assign(std::vector<double>(losses.size(), 1.0));
      }
      for (std::size_t k = 0; k < group.patches.size(); ++k) {
        per_slide[s].push_back({slides[s].slide_id, group.patches[k], losses[k]});
      }
    }
    std::sort(per_slide[s].begin(), per_slide[s].end(),
              [](const PatchLoss& a, const PatchLoss& b) { return a.patch < b.patch; });
  });
  std::vector<PatchLoss> out;
  for (auto& v : per_slide) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline void write_loss_csv(std::ostream& os, std::span<const PatchLoss> losses) {
  os << "slide_id,patch_index,loss\n";
  char buf[64];
  for (const auto& l : losses) {
    std::snprintf(buf, sizeof buf, "%.17g", l.loss);
    os << l.slide_id << ',' << l.patch << ',' << buf << '\n';
  }
}

// Mining cadence: a mining round before sampling starts and after every
// `samples_per_round` draws, `rounds` times in total.
struct MiningSchedule {
  std::size_t rounds = 1;
  std::size_t samples_per_round = 1000;
};

struct MiningRun {
  std::vector<std::vector<PatchLoss>> round_losses;
  std::vector<std::array<std::size_t, kNumPatterns>> round_category_counts;
};

inline MiningRun run_mining(SamplerState& state, const PatchClassifier& classifier,
                            std::span<const SlideRecord> slides, const MiningSchedule& schedule,
                            std::size_t jobs = 1) {
  MiningRun run;
  for (std::size_t r = 0; r < schedule.rounds; ++r) {
    run.round_losses.push_back(mining_round(state, classifier, slides, jobs));
    std::array<std::size_t, kNumPatterns> counts{};
    for (std::size_t k = 0; k < schedule.samples_per_round; ++k) {
      ++counts[index_of(sample_training_patch(state).category)];
    }
    run.round_category_counts.push_back(counts);
  }
  return run;
}

}  // namespace gleason
