#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gleason/survival.hpp"
#include "test_support.hpp"

using namespace gleason;
using gleason::testing::brute_cindex;
using gleason::testing::brute_partial_log_likelihood;
using gleason::testing::two_group_survival;

namespace {

SurvivalDataset one_covariate(const std::vector<double>& t, const std::vector<std::uint8_t>& e,
                              const std::vector<double>& x) {
  SurvivalDataset d;
  d.time = t;
  d.event = e;
  d.covariates.resize(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) d.covariates(static_cast<Eigen::Index>(i), 0) = x[i];
  return d;
}

SurvivalDataset random_dataset(std::mt19937_64& gen, std::size_t n, int p, bool tied_times) {
  std::normal_distribution<double> z;
  std::exponential_distribution<double> ex(1.0);
  SurvivalDataset d;
  d.covariates.resize(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i) {
    double lp = 0;
    for (int c = 0; c < p; ++c) {
      const double x = z(gen);
      d.covariates(static_cast<Eigen::Index>(i), c) = x;
      lp += 0.5 * x / (c + 1);
    }
    double t = ex(gen) / std::exp(lp);
    if (tied_times) t = std::ceil(t * 4) / 4;
    d.time.push_back(t);
    d.event.push_back(gen() % 5 != 0);
  }
  return d;
}

}  // namespace

TEST(ConcordanceIndex, Examples) {
  const std::vector<double> t = {1, 2, 3, 4};
  const std::vector<std::uint8_t> e = {1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(concordance_index(std::vector<double>{4, 3, 2, 1}, t, e), 1.0);
  EXPECT_DOUBLE_EQ(concordance_index(std::vector<double>{1, 2, 3, 4}, t, e), 0.0);
  EXPECT_DOUBLE_EQ(concordance_index(std::vector<double>{7, 7, 7, 7}, t, e), 0.5);
  EXPECT_THROW(concordance_index(std::vector<double>{1, 2}, std::vector<double>{1, 2},
                                 std::vector<std::uint8_t>{0, 0}),
               Error);
}

TEST(ConcordanceIndex, MatchesPairEnumeration) {
  std::mt19937_64 gen(1);
  for (int inst = 0; inst < 60; ++inst) {
    const std::size_t n = 2 + gen() % 299;
    std::vector<double> s(n), t(n);
    std::vector<std::uint8_t> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(gen() % (inst % 3 ? 1000 : 5));
      t[i] = 1.0 + static_cast<double>(gen() % (inst % 2 ? 1000 : 10));
      e[i] = gen() % 3 != 0;
    }
    e[0] = 1;
    t[0] = 0.5;
    EXPECT_NEAR(concordance_index(s, t, e), brute_cindex(s, t, e), 1e-12);
  }
}

TEST(ConcordanceIndex, MonotoneTransformInvariance) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> s(200), t(200);
  std::vector<std::uint8_t> e(200);
  for (std::size_t i = 0; i < 200; ++i) {
    s[i] = std::round(u(gen) * 10) / 10;
    t[i] = 1 + gen() % 50;
    e[i] = gen() % 2;
  }
  const double c = concordance_index(s, t, e);
  for (int k = 0; k < 20; ++k) {
    const double a = 0.1 + k, b = u(gen);
    std::vector<double> f(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) f[i] = k % 2 ? std::exp(a * s[i]) + b : std::atan(a * s[i] + b);
    EXPECT_NEAR(concordance_index(f, t, e), c, 1e-12);
  }
}

TEST(KaplanMeier, NoEvents) {
  const auto km = kaplan_meier(std::vector<double>{1, 2, 3}, std::vector<std::uint8_t>{0, 0, 0});
  for (const auto& s : km) EXPECT_EQ(s.survival, 1.0);
}

TEST(KaplanMeier, AllEvents) {
  const auto km = kaplan_meier(std::vector<double>{3, 1, 2}, std::vector<std::uint8_t>{1, 1, 1});
  ASSERT_EQ(km.size(), 3u);
  EXPECT_DOUBLE_EQ(km[0].survival, 2.0 / 3);
  EXPECT_DOUBLE_EQ(km[1].survival, 1.0 / 3);
  EXPECT_EQ(km[2].survival, 0.0);
  EXPECT_EQ(km[2].at_risk, 1u);
}

TEST(KaplanMeier, CensoredLeavesRiskSetAfterItsTime) {
  const auto km = kaplan_meier(std::vector<double>{1, 2}, std::vector<std::uint8_t>{0, 1});
  ASSERT_EQ(km.size(), 2u);
  EXPECT_EQ(km[0].survival, 1.0);
  EXPECT_EQ(km[0].censored, 1u);
  EXPECT_EQ(km[1].at_risk, 1u);
  EXPECT_EQ(km[1].survival, 0.0);
  EXPECT_EQ(survival_at(km, 1.5), 1.0);
  EXPECT_EQ(survival_at(km, 0.5), 1.0);
}

TEST(KaplanMeier, CensoredAtEventTimeStillAtRisk) {
  const auto km = kaplan_meier(std::vector<double>{2, 2, 3}, std::vector<std::uint8_t>{1, 0, 1});
  EXPECT_EQ(km[0].at_risk, 3u);
  EXPECT_DOUBLE_EQ(km[0].survival, 2.0 / 3);
  EXPECT_EQ(km[1].at_risk, 1u);
  EXPECT_EQ(km[1].survival, 0.0);
}

TEST(KaplanMeier, MonotoneOnRandomData) {
  std::mt19937_64 gen(3);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + gen() % 200;
    std::vector<double> t(n);
    std::vector<std::uint8_t> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = 1 + gen() % 40;
      e[i] = gen() % 2;
    }
    const auto km = kaplan_meier(t, e);
    double prev = 1.0;
    for (const auto& s : km) {
      EXPECT_LE(s.survival, prev);
      EXPECT_GE(s.survival, 0.0);
      prev = s.survival;
    }
  }
}

TEST(Cox, LikelihoodMatchesBruteForce) {
  std::mt19937_64 gen(4);
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = random_dataset(gen, 80, 1 + inst % 3, inst % 2);
    Eigen::VectorXd beta = Eigen::VectorXd::Random(d.covariates.cols());
    EXPECT_NEAR(cox_partial_log_likelihood(d, beta), brute_partial_log_likelihood(d, beta), 1e-9);
  }
}

TEST(Cox, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(5);
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = random_dataset(gen, 100, 3, inst % 2);
    Eigen::VectorXd beta = 0.5 * Eigen::VectorXd::Random(3);
    const auto der = cox_derivatives(d, beta);
    for (int c = 0; c < 3; ++c) {
      Eigen::VectorXd hi = beta, lo = beta;
      hi[c] += 1e-5;
      lo[c] -= 1e-5;
      const double fd = (brute_partial_log_likelihood(d, hi) - brute_partial_log_likelihood(d, lo)) / 2e-5;
      EXPECT_NEAR(der.gradient[c], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Cox, FitStationaryAndMonotone) {
  std::mt19937_64 gen(6);
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = random_dataset(gen, 150, 1 + inst % 4, inst % 2);
    const auto fit = cox_fit(d);
    EXPECT_TRUE(fit.converged);
    EXPECT_LT(cox_derivatives(d, fit.beta).gradient.cwiseAbs().maxCoeff(), 1e-6);
    for (std::size_t k = 1; k < fit.log_likelihood_trace.size(); ++k) {
      // Steps inside the rounding band of the likelihood are judged by the gradient.
      const double band = 1e-12 * std::max(1.0, std::abs(fit.log_likelihood_trace[k - 1]));
      EXPECT_GE(fit.log_likelihood_trace[k], fit.log_likelihood_trace[k - 1] - band);
    }
  }
}

TEST(Cox, OneCovariateMatchesGridSearch) {
  std::mt19937_64 gen(7);
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = random_dataset(gen, 60, 1, inst % 2);
    double best_beta = 0, best_ll = -INFINITY;
    Eigen::VectorXd b(1);
    for (int k = -5000; k <= 5000; ++k) {
      b[0] = k * 1e-3;
      const double ll = brute_partial_log_likelihood(d, b);
      if (ll > best_ll) {
        best_ll = ll;
        best_beta = b[0];
      }
    }
    EXPECT_NEAR(cox_fit(d).beta[0], best_beta, 1e-3);
  }
}

TEST(Cox, NullCovariateIntervalContainsZero) {
  auto d = two_group_survival(200, 1.0, 0.2, 8);
  std::mt19937_64 gen(8);
  Eigen::VectorXd x = d.covariates.col(0);
  for (Eigen::Index i = x.size() - 1; i > 0; --i) std::swap(x[i], x[static_cast<Eigen::Index>(gen() % (i + 1))]);
  d.covariates.col(0) = x;
  const auto fit = cox_fit(d);
  EXPECT_LT(std::abs(fit.beta[0]), kZ975 * fit.standard_errors[0]);
}

TEST(Cox, ErrorsAndDivergence) {
  auto constant = one_covariate({1, 2, 3}, {1, 1, 1}, {2, 2, 2});
  try {
    cox_fit(constant);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonIdentifiable);
  }
  EXPECT_THROW(cox_fit(one_covariate({1, 2}, {0, 0}, {0, 1})), Error);
  // Perfect separation: the event subjects all carry x = 1 and fail first.
  const auto sep = one_covariate({1, 2, 3, 4}, {1, 1, 1, 1}, {1, 1, 0, 0});
  const auto fit = cox_fit(sep);
  EXPECT_FALSE(fit.converged);
  EXPECT_LE(std::abs(fit.beta[0]), 50.0);
  EXPECT_GT(fit.beta[0], 5.0);
}

TEST(HazardRatio, RecoversTruthAndInvertsOnSwap) {
  const auto d = two_group_survival(2000, 2.0, 0.2, 9);
  std::vector<std::uint8_t> g, flipped;
  for (Eigen::Index i = 0; i < d.covariates.rows(); ++i) {
    g.push_back(d.covariates(i, 0) > 0.5);
    flipped.push_back(!g.back());
  }
  const auto hr = hazard_ratio(d.time, d.event, g);
  EXPECT_TRUE(hr.converged);
  EXPECT_LT(hr.ci_lo, 2.0);
  EXPECT_GT(hr.ci_hi, 2.0);
  const auto inv = hazard_ratio(d.time, d.event, flipped);
  EXPECT_NEAR(inv.hr, 1.0 / hr.hr, 1e-9);
  const auto null = two_group_survival(2000, 1.0, 0.2, 10);
  std::vector<std::uint8_t> ng;
  for (Eigen::Index i = 0; i < null.covariates.rows(); ++i) ng.push_back(null.covariates(i, 0) > 0.5);
  const auto h0 = hazard_ratio(null.time, null.event, ng);
  EXPECT_LT(h0.ci_lo, 1.0);
  EXPECT_GT(h0.ci_hi, 1.0);
  EXPECT_THROW(hazard_ratio(d.time, d.event, std::vector<std::uint8_t>(d.size(), 1)), Error);
}

TEST(HazardRatio, CoverageOfTrueRatioThree) {
  int covered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = two_group_survival(500, 3.0, 0.2, derive_seed(33, trial));
    std::vector<std::uint8_t> g;
    for (Eigen::Index i = 0; i < d.covariates.rows(); ++i) g.push_back(d.covariates(i, 0) > 0.5);
    const auto hr = hazard_ratio(d.time, d.event, g);
    covered += hr.ci_lo <= 3.0 && 3.0 <= hr.ci_hi;
  }
  EXPECT_GE(covered, 90);
}

TEST(CoxCindex, EqualsRawCovariateCindexForPositiveBeta) {
  std::mt19937_64 gen(11);
  const auto d = random_dataset(gen, 200, 1, false);
  const auto fit = cox_fit(d);
  ASSERT_GT(fit.beta[0], 0.0);
  const Eigen::VectorXd x = d.covariates.col(0);
  EXPECT_NEAR(cox_cindex_of_fit(fit, d),
              concordance_index(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), d), 1e-12);
  CoxFit zero = fit;
  zero.beta.setZero();
  EXPECT_DOUBLE_EQ(cox_cindex_of_fit(zero, d), 0.5);
}
