#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "gleason/eval_stats.hpp"
#include "test_support.hpp"

using namespace gleason;
using gleason::testing::cohort_table;
using gleason::testing::ks_uniform_p;

namespace {

std::vector<GradeGroup> ggs(std::initializer_list<int> v) {
  std::vector<GradeGroup> out;
  for (int x : v) out.push_back(static_cast<GradeGroup>(x));
  return out;
}

double pair_count_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      den += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

}  // namespace

TEST(Accuracy, Examples) {
  const auto a = ggs({0, 1, 2, 3, 0, 1, 2, 3, 0, 1});
  auto b = a;
  EXPECT_DOUBLE_EQ(accuracy(a, b), 1.0);
  b[0] = b[1] = b[2] = GradeGroup::kGG4_5;
  b[3] = GradeGroup::kGG1;
  EXPECT_DOUBLE_EQ(accuracy(a, b), 0.6);
  b[3] = GradeGroup::kGG4_5;
  EXPECT_DOUBLE_EQ(accuracy(a, b), 0.7);
  EXPECT_DOUBLE_EQ(accuracy(ggs({0, 1}), ggs({1, 0})), 0.0);
  EXPECT_THROW(accuracy(ggs({}), ggs({})), Error);
  EXPECT_THROW(accuracy(ggs({1}), ggs({1, 2})), Error);
}

TEST(AdjustedAccuracy, Examples) {
  const auto ref = ggs({0, 0, 1, 1, 2, 2, 3, 3});
  EXPECT_DOUBLE_EQ(adjusted_accuracy(ref, ref), 1.0);
  const auto pred = ggs({0, 0, 0, 0, 2, 2, 2, 2});  // recalls (1, 0, 1, 0)
  EXPECT_DOUBLE_EQ(adjusted_accuracy(pred, ref, {{1, 1, 1, 1}}), 0.5);
  EXPECT_THROW(adjusted_accuracy(ggs({0, 1}), ggs({0, 1})), Error);  // GG3, GG4-5 weighted but absent
  EXPECT_DOUBLE_EQ(adjusted_accuracy(ggs({0, 0}), ggs({0, 1}), {{1, 1, 0, 0}}), 0.5);
}

TEST(AdjustedAccuracy, EmpiricalWeightsGivePlainAccuracy) {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<GradeGroup> ref, pred;
    PopulationWeights w{{0, 0, 0, 0}};
    for (int i = 0; i < 80; ++i) {
      ref.push_back(static_cast<GradeGroup>(i % 4));
      pred.push_back(static_cast<GradeGroup>(gen() % 4));
    }
    for (auto g : ref) w.w[static_cast<std::size_t>(g)] += 1;
    EXPECT_NEAR(adjusted_accuracy(pred, ref, w), accuracy(pred, ref), 1e-12);
  }
}

TEST(CohensKappa, Examples) {
  const auto a = ggs({0, 1, 2, 3, 1});
  EXPECT_DOUBLE_EQ(cohens_kappa(a, a), 1.0);
  // 20 items, 10/10 marginals on both sides, 14 agreements: p_o 0.7, p_e 0.5.
  std::vector<int> x(20), y(20);
  for (int i = 0; i < 20; ++i) {
    x[i] = i < 10;
    y[i] = i < 7 || (i >= 10 && i < 13);
  }
  EXPECT_NEAR(cohens_kappa(x, y), 0.4, 1e-15);
  const auto d = cohens_kappa_detail(std::span<const int>(std::vector<int>{1, 1}), std::span<const int>(std::vector<int>{1, 1}));
  EXPECT_TRUE(d.degenerate);
  EXPECT_EQ(d.value, 0.0);
  EXPECT_THROW(cohens_kappa(std::vector<int>{}, std::vector<int>{}), Error);
}

TEST(CohensKappa, IndependentSequencesNearZero) {
  std::mt19937_64 gen(2);
  std::vector<int> a(10000), b(10000);
  for (auto& x : a) x = static_cast<int>(gen() % 4);
  for (auto& x : b) x = static_cast<int>(gen() % 4);
  EXPECT_LT(std::abs(cohens_kappa(a, b)), 0.05);
}

TEST(QuantitationMae, Examples) {
  EXPECT_DOUBLE_EQ(quantitation_mae(std::vector<double>{10, 20}, std::vector<double>{0, 40}), 15.0);
  const std::vector<GpPercentages> p = {{50, 50, 0}, {100, 0, 0}}, r = {{40, 60, 0}, {100, 0, 0}};
  EXPECT_DOUBLE_EQ(quantitation_mae(p, r, Pattern::kGP3), 5.0);
  EXPECT_DOUBLE_EQ(quantitation_mae(p, p, Pattern::kGP4), 0.0);
  EXPECT_THROW(quantitation_mae(p, r, Pattern::kNonTumor), Error);
  EXPECT_THROW(quantitation_mae(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST(RocAuc, Examples) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<std::uint8_t>{0, 0, 1, 1}).auc, 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 1, 1, 1}, std::vector<std::uint8_t>{0, 1, 0, 1}).auc, 0.5);
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<std::uint8_t>{1, 1}), Error);
  const auto r = roc_auc(std::vector<double>{0.3, 0.3, 0.9}, std::vector<std::uint8_t>{0, 1, 1});
  ASSERT_EQ(r.curve.size(), 3u);
  EXPECT_TRUE(std::isinf(r.curve[0].threshold));
  EXPECT_DOUBLE_EQ(r.curve[1].tpr, 0.5);
  EXPECT_DOUBLE_EQ(r.curve[2].fpr, 1.0);
  EXPECT_DOUBLE_EQ(r.auc, 0.75);
}

TEST(RocAuc, MatchesPairCounting) {
  std::mt19937_64 gen(3);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + gen() % 199;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = inst % 2 ? static_cast<double>(gen() % 7) : std::ldexp(static_cast<double>(gen() >> 11), -53);
      y[i] = gen() % 2;
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(roc_auc(s, y).auc, pair_count_auc(s, y), 1e-12);
  }
}

TEST(RocAuc, NegatedScoresWithoutTies) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(50), neg(50);
  std::vector<std::uint8_t> y(50);
  for (int i = 0; i < 50; ++i) {
    s[i] = u(gen);
    neg[i] = -s[i];
    y[i] = i % 3 == 0;
  }
  EXPECT_NEAR(roc_auc(neg, y).auc, 1.0 - roc_auc(s, y).auc, 1e-12);
}

TEST(Bootstrap, PercentileHelpers) {
  EXPECT_DOUBLE_EQ(percentile_sorted(std::vector<double>{1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(std::vector<double>{0, 10}, 0.25), 2.5);
  const auto ci = percentile_interval([](Rng&) { return 4.2; }, 50, 1);
  EXPECT_EQ(ci.lo, 4.2);
  EXPECT_EQ(ci.hi, 4.2);
}

TEST(Bootstrap, DeterministicAcrossJobs) {
  std::vector<double> x(60);
  Rng g(5);
  for (auto& v : x) v = g.normal();
  auto mean = [&](std::span<const std::size_t> idx) {
    double s = 0;
    for (auto i : idx) s += x[i];
    return s / static_cast<double>(idx.size());
  };
  const auto a = bootstrap_indices_ci(x.size(), mean, 300, 77, 1);
  const auto b = bootstrap_indices_ci(x.size(), mean, 300, 77, 3);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  const auto c = bootstrap_indices_ci(x.size(), mean, 300, 78, 1);
  EXPECT_NE(a.lo, c.lo);
}

TEST(Bootstrap, MeanOfNormalsCoverage) {
  int covered = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    Rng g(derive_seed(900, t));
    std::vector<double> x(100);
    for (auto& v : x) v = g.normal();
    const auto ci = bootstrap_indices_ci(
        x.size(),
        [&](std::span<const std::size_t> idx) {
          double s = 0;
          for (auto i : idx) s += x[i];
          return s / 100.0;
        },
        1000, derive_seed(901, t));
    covered += ci.lo <= 0.0 && 0.0 <= ci.hi;
  }
  EXPECT_GE(covered, 450);
  EXPECT_LE(covered, 490);
}

TEST(Bootstrap, RatersResampledWithinSubgroups) {
  std::mt19937_64 gen(6);
  const auto table = cohort_table(20, [&](int) { return static_cast<GradeGroup>(gen() % 4); });
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto r = resample_rating_table(table, rng);
    ASSERT_EQ(r.slides.size(), 20u);
    std::set<std::string> ten, nineteen;
    for (const auto& s : r.slides) {
      for (const auto& x : s.ratings) {
        const auto original = x.rater_id.substr(0, x.rater_id.find('#'));
        if (x.subgroup == RaterSubgroup::kTen) {
          EXPECT_EQ(original[0], 't');
          ten.insert(x.rater_id);
        } else {
          EXPECT_EQ(original[0], 'n');
          nineteen.insert(x.rater_id);
        }
      }
    }
    // Ten raters rate every slide, so all ten clones always appear.
    EXPECT_EQ(ten.size(), 10u);
    EXPECT_LE(nineteen.size(), 19u);
  }
}

TEST(Bootstrap, SubgroupDrawCountsAreExact) {
  // One slide rated by everyone: draws per subgroup equal the pool size.
  RatedSlide s;
  s.slide_id = "all";
  for (int t = 0; t < 10; ++t) s.ratings.push_back({"t" + std::to_string(t), RaterSubgroup::kTen, GradeGroup::kGG1, {}});
  for (int t = 0; t < 19; ++t) s.ratings.push_back({"n" + std::to_string(t), RaterSubgroup::kNineteen, GradeGroup::kGG1, {}});
  RatingTable table{{s}};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto r = resample_rating_table(table, rng);
    std::size_t ten = 0, nineteen = 0;
    for (const auto& x : r.slides[0].ratings) (x.subgroup == RaterSubgroup::kTen ? ten : nineteen)++;
    EXPECT_EQ(ten, 10u);
    EXPECT_EQ(nineteen, 19u);
  }
}

TEST(Bootstrap, RatingTableCiIsDeterministic) {
  std::mt19937_64 gen(7);
  const auto table = cohort_table(30, [&](int) { return static_cast<GradeGroup>(gen() % 4); });
  const auto a = bootstrap_ci(mean_rater_accuracy, table, 200, 3);
  const auto b = bootstrap_ci(mean_rater_accuracy, table, 200, 3, 2);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_LE(a.lo, mean_rater_accuracy(table));
  EXPECT_GE(a.hi, mean_rater_accuracy(table));
}

TEST(PermutationTest, IdenticalRatingsGiveOne) {
  const auto table = cohort_table(15, [](int) { return GradeGroup::kGG2; });
  const auto r = permutation_test_vs_cohort(table, 500, 1);
  EXPECT_EQ(r.observed, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(PermutationTest, RequiresCohortDesign) {
  auto table = cohort_table(3, [](int) { return GradeGroup::kGG1; });
  table.slides[1].ratings.pop_back();
  try {
    permutation_test_vs_cohort(table, 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPrecondition);
  }
  EXPECT_NO_THROW(permutation_test_vs_cohort(table, 10, 1, false));
}

TEST(PermutationTest, SameSeedSameP) {
  std::mt19937_64 gen(8);
  const auto table = cohort_table(25, [&](int) { return static_cast<GradeGroup>(gen() % 4); });
  EXPECT_EQ(permutation_test_vs_cohort(table, 300, 4).p_value, permutation_test_vs_cohort(table, 300, 4).p_value);
}

TEST(PermutationTest, ObservedStatisticMatchesDefinition) {
  std::mt19937_64 gen(9);
  const auto table = cohort_table(12, [&](int) { return static_cast<GradeGroup>(gen() % 4); });
  const auto r = permutation_test_vs_cohort(table, 10, 1);
  EXPECT_NEAR(r.observed, dls_accuracy(table) - mean_rater_accuracy(table), 1e-12);
}

TEST(PermutationTest, NullPValuesAreUniform) {
  std::vector<double> p;
  for (int run = 0; run < 200; ++run) {
    std::mt19937_64 gen(derive_seed(1000, run));
    std::discrete_distribution<int> rater({0.2, 0.5, 0.2, 0.1});
    auto table = cohort_table(40, [&](int who) {
      return who < 0 ? GradeGroup::kGG2 : static_cast<GradeGroup>(rater(gen));
    });
    p.push_back(permutation_test_vs_cohort(table, 999, derive_seed(2000, run)).p_value);
  }
  EXPECT_GT(ks_uniform_p(p), 0.01);
}

TEST(Cohort29, MarginalFrequencies) {
  const auto table = cohort_table(1, [](int) { return GradeGroup::kGG1; });
  Rng rng(10);
  std::vector<std::size_t> counts(13);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[cohort29_sample(table, rng)[0]];
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(counts[k] / double(n), 1.0 / 29, 0.005);
  double nineteen = 0;
  for (int k = 10; k < 13; ++k) {
    EXPECT_NEAR(counts[k] / double(n), 19.0 / 87, 0.005);
    nineteen += counts[k] / double(n);
  }
  EXPECT_NEAR(nineteen, 19.0 / 29, 0.005);
}

TEST(Cohort29, RejectsOtherDesigns) {
  auto table = cohort_table(2, [](int) { return GradeGroup::kGG1; });
  table.slides[0].ratings[12].subgroup = RaterSubgroup::kTen;
  Rng rng(1);
  EXPECT_THROW(cohort29_sample(table, rng), Error);
}

TEST(Cohort29, MedianDrawMatchesBruteForce) {
  std::mt19937_64 gen(11);
  const auto table = cohort_table(30, [&](int) { return static_cast<GradeGroup>(gen() % 4); });
  std::vector<GradeGroup> ref;
  for (const auto& s : table.slides) ref.push_back(s.reference);
  auto metric = [&](const std::vector<GradeGroup>& g) { return accuracy(g, ref); };
  const auto m = cohort29_median(table, metric, 99, 12);
  Rng rng(12);
  std::vector<std::pair<double, std::size_t>> vals;
  for (std::size_t it = 0; it < 99; ++it) {
    const auto pick = cohort29_sample(table, rng);
    std::vector<GradeGroup> g;
    for (std::size_t s = 0; s < pick.size(); ++s) g.push_back(table.slides[s].ratings[pick[s]].grade);
    vals.emplace_back(metric(g), it);
  }
  std::stable_sort(vals.begin(), vals.end(), [](auto& a, auto& b) { return a.first < b.first; });
  EXPECT_EQ(m.iteration, vals[49].second);
  EXPECT_EQ(m.value, vals[49].first);
  EXPECT_EQ(metric(m.grades), m.value);
}

TEST(Cohort29, NanMetricsSortLast) {
  const auto table = cohort_table(5, [](int) { return GradeGroup::kGG1; });
  int calls = 0;
  const auto m = cohort29_median(
      table, [&](const std::vector<GradeGroup>&) { return calls++ % 2 ? std::nan("") : double(calls); }, 5, 1);
  // Values: 1, NaN, 3, NaN, 5 -> sorted 1, 3, 5, NaN, NaN; median is 5.
  EXPECT_EQ(m.value, 5.0);
  EXPECT_EQ(m.iteration, 4u);
}
