#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gleason/error.hpp"

namespace gleason {

// Right-censored survival data: one row of `covariates` per subject.
struct SurvivalDataset {
  std::vector<double> time;
  std::vector<std::uint8_t> event;  // 1 = event observed, 0 = censored
  Eigen::MatrixXd covariates;

  std::size_t size() const { return time.size(); }
};

inline void validate(const SurvivalDataset& d, bool need_covariates) {
  require(d.time.size() == d.event.size(), ErrorCode::kInvalidArgument, "survival data: time/event length mismatch");
  for (double t : d.time) {
    require(std::isfinite(t) && t > 0.0, ErrorCode::kInvalidArgument, "survival times must be finite and positive");
  }
  if (need_covariates) {
    require(static_cast<std::size_t>(d.covariates.rows()) == d.time.size() && d.covariates.cols() > 0,
            ErrorCode::kInvalidArgument, "survival data: covariate matrix has the wrong shape");
  }
}

// Harrell's c: over pairs with event_i and time_i < time_j, the share where
// score_i > score_j, score ties counting 1/2. O(n log n) via a Fenwick
// tree over score ranks.
inline double concordance_index(std::span<const double> scores, std::span<const double> times,
                                std::span<const std::uint8_t> events) {
  require(scores.size() == times.size() && times.size() == events.size(), ErrorCode::kInvalidArgument,
          "concordance_index: length mismatch");
  const std::size_t n = scores.size();
  std::vector<double> distinct(scores.begin(), scores.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  auto rank_of = [&](double s) {
    return static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), s) - distinct.begin());
  };

  std::vector<std::uint64_t> tree(distinct.size() + 1, 0);
  auto add = [&](std::size_t r) {
    for (std::size_t k = r + 1; k < tree.size(); k += k & (~k + 1)) ++tree[k];
  };
  auto count_le = [&](std::size_t r) {  // inserted scores with rank <= r
    std::uint64_t c = 0;
    for (std::size_t k = r + 1; k > 0; k -= k & (~k + 1)) c += tree[k];
    return c;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  std::uint64_t inserted = 0, comparable = 0, concordant = 0, tied = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t s = order[k];
      if (!events[s]) continue;
      const std::size_t r = rank_of(scores[s]);
      const std::uint64_t le = count_le(r);
      const std::uint64_t lt = r > 0 ? count_le(r - 1) : 0;
      comparable += inserted;
      concordant += lt;
      tied += le - lt;
    }
    for (std::size_t k = i; k < j; ++k) add(rank_of(scores[order[k]]));
    inserted += j - i;
    i = j;
  }
  require(comparable > 0, ErrorCode::kPrecondition, "concordance_index: no comparable pairs");
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) / static_cast<double>(comparable);
}

inline double concordance_index(std::span<const double> scores, const SurvivalDataset& d) {
  validate(d, false);
  return concordance_index(scores, d.time, d.event);
}

struct KaplanMeierStep {
  double time = 0.0;
  double survival = 1.0;  // S(time), right-continuous
  std::size_t at_risk = 0;
  std::size_t events = 0;
  std::size_t censored = 0;
};

// One step per distinct observed time (event or censoring). Subjects
// censored at t are still at risk at t.
inline std::vector<KaplanMeierStep> kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events) {
  require(times.size() == events.size(), ErrorCode::kInvalidArgument, "kaplan_meier: length mismatch");
  require(!times.empty(), ErrorCode::kInvalidArgument, "kaplan_meier: empty dataset");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  std::vector<KaplanMeierStep> out;
  double s = 1.0;
  std::size_t at_risk = times.size();
  for (std::size_t i = 0; i < order.size();) {
    KaplanMeierStep step;
    step.time = times[order[i]];
    step.at_risk = at_risk;
    std::size_t j = i;
    for (; j < order.size() && times[order[j]] == step.time; ++j) {
      if (events[order[j]]) ++step.events; else ++step.censored;
    }
    if (step.events > 0) {
      s *= 1.0 - static_cast<double>(step.events) / static_cast<double>(at_risk);
    }
    step.survival = s;
    at_risk -= j - i;
    out.push_back(step);
    i = j;
  }
  return out;
}

inline double survival_at(std::span<const KaplanMeierStep> curve, double t) {
  double s = 1.0;
  for (const auto& step : curve) {
    if (step.time > t) break;
    s = step.survival;
  }
  return s;
}

struct CoxDerivatives {
  double log_likelihood = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;  // negative Hessian
};

// Breslow partial likelihood and its first two derivatives at beta.
inline CoxDerivatives cox_derivatives(const SurvivalDataset& d, const Eigen::VectorXd& beta) {
  const std::size_t n = d.size();
  const auto p = d.covariates.cols();
  const Eigen::VectorXd eta = d.covariates * beta;
  const double shift = n > 0 ? eta.maxCoeff() : 0.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.time[a] > d.time[b]; });

  CoxDerivatives out{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p), mean(p), x_events(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t deaths = 0;
    double eta_events = 0.0;
    x_events.setZero();
    for (; j < n && d.time[order[j]] == d.time[order[i]]; ++j) {
      const auto k = static_cast<Eigen::Index>(order[j]);
      const double w = std::exp(eta[k] - shift);
      const auto x = d.covariates.row(k);
      s0 += w;
      s1.noalias() += w * x.transpose();
      s2.noalias() += w * x.transpose() * x;
      if (d.event[order[j]]) {
        ++deaths;
        eta_events += eta[k];
        x_events.noalias() += x.transpose();
      }
    }
    if (deaths > 0) {
      const double m = static_cast<double>(deaths);
      mean = s1 / s0;
      out.log_likelihood += eta_events - m * (std::log(s0) + shift);
      out.gradient.noalias() += x_events - m * mean;
      out.information.noalias() += (m / s0) * s2 - m * mean * mean.transpose();
    }
    i = j;
  }
  return out;
}

inline double cox_partial_log_likelihood(const SurvivalDataset& d, const Eigen::VectorXd& beta) {
  return cox_derivatives(d, beta).log_likelihood;
}

struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd standard_errors;
  double log_partial_likelihood = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double gradient_max_norm = 0.0;
  std::vector<double> log_likelihood_trace;  // one entry per accepted iterate
};

struct CoxOptions {
  std::size_t max_iterations = 100;
  double gradient_tolerance = 1e-8;
  double beta_cap = 50.0;
  std::size_t max_halvings = 40;
};

// Newton-Raphson with step halving on the Breslow partial likelihood.
// Near the optimum the likelihood gain falls below its rounding error; a
// step is then accepted when it shrinks the gradient instead. Monotone
// likelihood (separation) shows up as collapsing information and is
// flagged as not converged.
inline CoxFit cox_fit(const SurvivalDataset& d, const CoxOptions& opt = {}) {
  validate(d, true);
  require(std::any_of(d.event.begin(), d.event.end(), [](auto e) { return e != 0; }), ErrorCode::kPrecondition,
          "cox_fit: dataset has no events");
  const auto p = d.covariates.cols();
  for (Eigen::Index c = 0; c < p; ++c) {
    const auto col = d.covariates.col(c);
    require(col.maxCoeff() > col.minCoeff(), ErrorCode::kNonIdentifiable,
            "cox_fit: covariate " + std::to_string(c) + " is constant");
  }

  CoxFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  auto cur = cox_derivatives(d, fit.beta);
  const double info0 = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cur.information).eigenvalues().maxCoeff();
  fit.log_likelihood_trace.push_back(cur.log_likelihood);
  auto noise = [](double ll) { return 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(ll)); };
  auto improves = [&](const CoxDerivatives& cand) {
    if (cand.log_likelihood > cur.log_likelihood + noise(cur.log_likelihood)) return true;
    return cand.log_likelihood >= cur.log_likelihood - noise(cur.log_likelihood) &&
           cand.gradient.cwiseAbs().maxCoeff() < cur.gradient.cwiseAbs().maxCoeff();
  };
  bool capped = false;
  while (fit.iterations < opt.max_iterations) {
    if (cur.gradient.cwiseAbs().maxCoeff() < opt.gradient_tolerance) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
    require(ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff()),
            ErrorCode::kNonIdentifiable, "cox_fit: information matrix is singular");
    Eigen::VectorXd step = ldlt.solve(cur.gradient);
    ++fit.iterations;

    Eigen::VectorXd next = fit.beta + step;
    auto cand = cox_derivatives(d, next);
    for (std::size_t h = 0; h < opt.max_halvings && !improves(cand); ++h) {
      step *= 0.5;
      next = fit.beta + step;
      cand = cox_derivatives(d, next);
    }
    if (!improves(cand)) break;  // no progress left at machine precision

    if (next.cwiseAbs().maxCoeff() > opt.beta_cap) {
      fit.beta = next.cwiseMax(-opt.beta_cap).cwiseMin(opt.beta_cap);
      cur = cox_derivatives(d, fit.beta);
      fit.log_likelihood_trace.push_back(cur.log_likelihood);
      capped = true;
      break;
    }
    fit.beta = next;
    cur = std::move(cand);
    fit.log_likelihood_trace.push_back(cur.log_likelihood);
  }

  fit.log_partial_likelihood = cur.log_likelihood;
  fit.gradient_max_norm = cur.gradient.cwiseAbs().maxCoeff();
  const double info_min = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cur.information).eigenvalues().minCoeff();
  const bool collapsed = !(info_min > 1e-6 * info0);
  fit.converged = !capped && !collapsed && fit.gradient_max_norm < opt.gradient_tolerance;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0) {
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    fit.standard_errors = cov.diagonal().cwiseSqrt();
  } else {
    fit.standard_errors = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
  }
  return fit;
}

inline constexpr double kZ975 = 1.959963984540054;

struct HazardRatio {
  double hr = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool converged = false;
};

// Univariate Cox hazard ratio of group 1 vs group 0 with a Wald 95% CI.
inline HazardRatio hazard_ratio(std::span<const double> times, std::span<const std::uint8_t> events,
                                std::span<const std::uint8_t> group) {
  require(times.size() == group.size() && times.size() == events.size(), ErrorCode::kInvalidArgument,
          "hazard_ratio: length mismatch");
  const auto n1 = static_cast<std::size_t>(std::count_if(group.begin(), group.end(), [](auto g) { return g != 0; }));
  require(n1 > 0 && n1 < group.size(), ErrorCode::kPrecondition, "hazard_ratio: both groups must be non-empty");
  SurvivalDataset d;
  d.time.assign(times.begin(), times.end());
  d.event.assign(events.begin(), events.end());
  d.covariates.resize(static_cast<Eigen::Index>(times.size()), 1);
  for (std::size_t i = 0; i < times.size(); ++i) d.covariates(static_cast<Eigen::Index>(i), 0) = group[i] ? 1.0 : 0.0;
  const auto fit = cox_fit(d);
  const double b = fit.beta[0];
  const double se = fit.standard_errors[0];
  return {std::exp(b), std::exp(b - kZ975 * se), std::exp(b + kZ975 * se), fit.converged};
}

inline Eigen::VectorXd linear_predictor(const CoxFit& fit, const SurvivalDataset& d) {
  require(fit.beta.size() == d.covariates.cols(), ErrorCode::kInvalidArgument,
          "linear_predictor: coefficient count does not match covariates");
  return d.covariates * fit.beta;
}

inline double cox_cindex_of_fit(const CoxFit& fit, const SurvivalDataset& d) {
  const Eigen::VectorXd lp = linear_predictor(fit, d);
  return concordance_index(std::span<const double>(lp.data(), static_cast<std::size_t>(lp.size())), d);
}

}  // namespace gleason
