#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcbpl/errors.hpp"
#include "dcbpl/rng.hpp"
#include "dcbpl/scm.hpp"

namespace dcbpl::causal {

using json = nlohmann::json;
using scm::ProviderRule;

inline constexpr double kDefaultPropensityFloor = 0.01;
inline constexpr double kQClipLo = 0.005;
inline constexpr double kQClipHi = 0.995;

struct Unit {
  int stratum = 0;
  int provider = 0;
  double outcome = 0.0;  // in [0, 1]
};

struct Dims {
  int n_providers = 0;
  int n_strata = 0;
};

inline std::vector<Unit> units_from_cohort(const std::vector<scm::Trajectory>& cohort,
                                           const scm::ScmConfig& cfg) {
  std::vector<Unit> units;
  units.reserve(cohort.size());
  for (const auto& t : cohort)
    units.push_back({cfg.stratum_index(t.baseline), t.provider, t.outcome});
  return units;
}

struct Nuisances {
  std::vector<std::vector<double>> g_hat;  // [stratum][provider], floored, sums to 1
  std::vector<std::vector<double>> q_hat;  // [stratum][provider], in [0,1]
};

// Per-stratum empirical provider frequencies, floored at delta by mixing with
// the uniform distribution (keeps the floor exact after normalization).
// Strata with no units get the uniform vector.
inline std::vector<std::vector<double>> fit_provider_mechanism(std::span<const Unit> units,
                                                               const Dims& dims, double delta) {
  if (delta < 0.0 || (dims.n_providers > 0 && delta >= 1.0 / dims.n_providers))
    throw EstimationError("propensity floor must lie in [0, 1/n_providers)");
  std::vector<std::vector<double>> counts(dims.n_strata,
                                          std::vector<double>(dims.n_providers, 0.0));
  std::vector<double> totals(dims.n_strata, 0.0);
  for (const auto& u : units) {
    counts[u.stratum][u.provider] += 1.0;
    totals[u.stratum] += 1.0;
  }
  for (int s = 0; s < dims.n_strata; ++s) {
    if (totals[s] == 0.0) {
      counts[s].assign(dims.n_providers, 1.0 / dims.n_providers);
      continue;
    }
    for (int j = 0; j < dims.n_providers; ++j) {
      double p = counts[s][j] / totals[s];
      counts[s][j] = (1.0 - dims.n_providers * delta) * p + delta;
    }
  }
  return counts;
}

// Saturated stratified means over (provider, stratum); empty cells fall back
// to the stratum mean, then the global mean.
inline std::vector<std::vector<double>> fit_outcome_regression(std::span<const Unit> units,
                                                               const Dims& dims) {
  if (units.empty()) throw EstimationError("outcome regression requires at least one unit");
  std::vector<std::vector<double>> sums(dims.n_strata, std::vector<double>(dims.n_providers, 0.0));
  std::vector<std::vector<double>> counts(dims.n_strata,
                                          std::vector<double>(dims.n_providers, 0.0));
  double global_sum = 0.0;
  for (const auto& u : units) {
    sums[u.stratum][u.provider] += u.outcome;
    counts[u.stratum][u.provider] += 1.0;
    global_sum += u.outcome;
  }
  double global_mean = global_sum / static_cast<double>(units.size());
  std::vector<std::vector<double>> q(dims.n_strata, std::vector<double>(dims.n_providers, 0.0));
  for (int s = 0; s < dims.n_strata; ++s) {
    double stratum_sum = 0.0, stratum_count = 0.0;
    for (int j = 0; j < dims.n_providers; ++j) {
      stratum_sum += sums[s][j];
      stratum_count += counts[s][j];
    }
    double stratum_mean = stratum_count > 0.0 ? stratum_sum / stratum_count : global_mean;
    for (int j = 0; j < dims.n_providers; ++j)
      q[s][j] = counts[s][j] > 0.0 ? sums[s][j] / counts[s][j] : stratum_mean;
  }
  return q;
}

inline Nuisances fit_nuisances(std::span<const Unit> units, const Dims& dims,
                               double delta = kDefaultPropensityFloor) {
  return {fit_provider_mechanism(units, dims, delta), fit_outcome_regression(units, dims)};
}

inline double pairwise_blip(const std::vector<std::vector<double>>& q_hat, int j_prime, int j,
                            int stratum) {
  return q_hat[stratum][j_prime] - q_hat[stratum][j];
}

inline double pseudo_blip(const std::vector<std::vector<double>>& q_hat, int j_prime,
                          int stratum) {
  const auto& row = q_hat[stratum];
  double mean = 0.0;
  for (double v : row) mean += v;
  mean /= static_cast<double>(row.size());
  return row[j_prime] - mean;
}

// Per-stratum argmax of the pseudo-blip over providers with cell support >=
// support_min (ties to the lowest provider id). Strata where no provider
// meets the threshold fall back to the unrestricted argmax, flagged.
inline ProviderRule rule_from_pseudo_blip(std::span<const Unit> units, const Dims& dims,
                                          int support_min = 0) {
  auto q_hat = fit_outcome_regression(units, dims);
  std::vector<std::vector<int>> support(dims.n_strata, std::vector<int>(dims.n_providers, 0));
  for (const auto& u : units) ++support[u.stratum][u.provider];
  ProviderRule rule;
  rule.assignment.resize(dims.n_strata);
  rule.low_support.assign(dims.n_strata, false);
  for (int s = 0; s < dims.n_strata; ++s) {
    int best = -1;
    for (int j = 0; j < dims.n_providers; ++j) {
      if (support[s][j] < support_min) continue;
      if (best < 0 || pseudo_blip(q_hat, j, s) > pseudo_blip(q_hat, best, s)) best = j;
    }
    if (best < 0) {
      rule.low_support[s] = true;
      best = 0;
      for (int j = 1; j < dims.n_providers; ++j)
        if (pseudo_blip(q_hat, j, s) > pseudo_blip(q_hat, best, s)) best = j;
    }
    rule.assignment[s] = best;
  }
  return rule;
}

struct PolicyValueEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::string estimator;
  int n = 0;
};

inline void to_json(json& j, const PolicyValueEstimate& e) {
  j = json{{"value", e.value}, {"se", e.std_error}, {"estimator", e.estimator}, {"n", e.n}};
}

namespace detail {

inline double sd_over_sqrt_n(const std::vector<double>& terms) {
  std::size_t n = terms.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double t : terms) mean += t;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double t : terms) ss += (t - mean) * (t - mean);
  return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

inline double clip_q(double q) { return std::clamp(q, kQClipLo, kQClipHi); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> aipw_terms(std::span<const Unit> units, const ProviderRule& rule,
                                      const Nuisances& nuis) {
  std::vector<double> terms;
  terms.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    int d = rule.provider_for(u.stratum);
    double term = nuis.q_hat[u.stratum][d];
    if (u.provider == d) {
      double g = nuis.g_hat[u.stratum][u.provider];
      if (g <= 0.0)
        throw EstimationError("zero propensity for unit " + std::to_string(i) + " (stratum " +
                              std::to_string(u.stratum) + ", provider " +
                              std::to_string(u.provider) + ")");
      term += (u.outcome - nuis.q_hat[u.stratum][u.provider]) / g;
    }
    terms.push_back(term);
  }
  return terms;
}

struct TmleTerms {
  std::vector<double> plugin;  // Q*(d(I_i), I_i)
  std::vector<double> ic;      // efficient influence curve (without centering)
  double epsilon = 0.0;
  double score = 0.0;  // mean H_i (Y_i - Q*_i) after fluctuation
};

// Logit-scale fluctuation along the clever covariate, Newton on the Bernoulli
// quasi-log-likelihood. Works per unit so cross-fitting can reuse it.
inline TmleTerms tmle_terms(std::span<const Unit> units, const ProviderRule& rule,
                            const Nuisances& nuis) {
  std::size_t n = units.size();
  std::vector<double> h(n, 0.0), logit_q_obs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = units[i];
    if (u.outcome < 0.0 || u.outcome > 1.0)
      throw EstimationError("tmle requires outcomes in [0, 1]");
    int d = rule.provider_for(u.stratum);
    if (u.provider == d) {
      double g = nuis.g_hat[u.stratum][u.provider];
      if (g <= 0.0) throw EstimationError("zero propensity in tmle clever covariate");
      h[i] = 1.0 / g;
    }
    logit_q_obs[i] = logit(clip_q(nuis.q_hat[u.stratum][u.provider]));
  }
  double eps = 0.0;
  double score = 0.0;
  bool converged = false;
  for (int iter = 0; iter < 100; ++iter) {
    score = 0.0;
    double fisher = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (h[i] == 0.0) continue;
      double q = expit(logit_q_obs[i] + eps * h[i]);
      score += h[i] * (units[i].outcome - q);
      fisher += h[i] * h[i] * q * (1.0 - q);
    }
    score /= static_cast<double>(n);
    fisher /= static_cast<double>(n);
    if (std::abs(score) < 1e-10) {
      converged = true;
      break;
    }
    if (fisher <= 0.0) break;
    eps += score / fisher;
  }
  if (!converged && std::abs(score) >= 1e-10)
    throw EstimationError("tmle fluctuation did not converge; final score " +
                          std::to_string(score));
  TmleTerms out;
  out.epsilon = eps;
  out.score = score;
  out.plugin.resize(n);
  out.ic.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = units[i];
    int d = rule.provider_for(u.stratum);
    double h_d = 1.0 / nuis.g_hat[u.stratum][d];
    double q_star_d = expit(logit(clip_q(nuis.q_hat[u.stratum][d])) + eps * h_d);
    out.plugin[i] = q_star_d;
    double q_star_obs = expit(logit_q_obs[i] + eps * h[i]);
    out.ic[i] = h[i] * (u.outcome - q_star_obs) + q_star_d;
  }
  return out;
}

}  // namespace detail

inline PolicyValueEstimate aipw_value(std::span<const Unit> units, const ProviderRule& rule,
                                      const Nuisances& nuis) {
  if (units.empty()) throw EstimationError("aipw_value: no units");
  auto terms = detail::aipw_terms(units, rule, nuis);
  PolicyValueEstimate est;
  est.estimator = "aipw";
  est.n = static_cast<int>(units.size());
  double sum = 0.0;
  for (double t : terms) sum += t;
  est.value = sum / static_cast<double>(terms.size());
  est.std_error = detail::sd_over_sqrt_n(terms);
  return est;
}

inline PolicyValueEstimate tmle_value(std::span<const Unit> units, const ProviderRule& rule,
                                      const Nuisances& nuis) {
  if (units.empty()) throw EstimationError("tmle_value: no units");
  auto terms = detail::tmle_terms(units, rule, nuis);
  PolicyValueEstimate est;
  est.estimator = "tmle";
  est.n = static_cast<int>(units.size());
  double sum = 0.0;
  for (double v : terms.plugin) sum += v;
  est.value = sum / static_cast<double>(terms.plugin.size());
  est.std_error = detail::sd_over_sqrt_n(terms.ic);
  return est;
}

// Untargeted g-computation plug-in: mean Q-hat(d(I), I).
inline PolicyValueEstimate plugin_value(std::span<const Unit> units, const ProviderRule& rule,
                                        const Nuisances& nuis) {
  if (units.empty()) throw EstimationError("plugin_value: no units");
  PolicyValueEstimate est;
  est.estimator = "plugin";
  est.n = static_cast<int>(units.size());
  std::vector<double> terms;
  terms.reserve(units.size());
  for (const auto& u : units) terms.push_back(nuis.q_hat[u.stratum][rule.provider_for(u.stratum)]);
  double sum = 0.0;
  for (double t : terms) sum += t;
  est.value = sum / static_cast<double>(terms.size());
  est.std_error = detail::sd_over_sqrt_n(terms);
  return est;
}

enum class EstimatorKind { aipw, tmle, plugin };

inline EstimatorKind estimator_kind_from_string(const std::string& s) {
  if (s == "aipw") return EstimatorKind::aipw;
  if (s == "tmle") return EstimatorKind::tmle;
  if (s == "plugin") return EstimatorKind::plugin;
  throw UsageError("unknown estimator kind: " + s);
}

inline PolicyValueEstimate estimate_value(std::span<const Unit> units, const ProviderRule& rule,
                                          const Nuisances& nuis, EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::aipw:
      return aipw_value(units, rule, nuis);
    case EstimatorKind::tmle:
      return tmle_value(units, rule, nuis);
    case EstimatorKind::plugin:
      return plugin_value(units, rule, nuis);
  }
  throw UsageError("unreachable estimator kind");
}

inline std::vector<int> fold_assignment(std::size_t n, int v, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng::Stream stream(seed, 0xf01d);
  stream.shuffle(order);
  std::vector<int> fold(n, 0);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = static_cast<int>(i % v);
  return fold;
}

// V-fold cross-fitting: nuisances fit out-of-fold, per-unit estimator terms
// evaluated in-fold, pooled point estimate and influence-curve SE.
inline PolicyValueEstimate crossfit_value(std::span<const Unit> units, const ProviderRule& rule,
                                          int v, EstimatorKind kind, std::uint64_t seed,
                                          const Dims& dims,
                                          double delta = kDefaultPropensityFloor) {
  if (v < 2) throw EstimationError("crossfit requires V >= 2");
  if (static_cast<int>(units.size()) < v)
    throw EstimationError("crossfit requires n >= V");
  auto fold = fold_assignment(units.size(), v, seed);
  std::vector<double> pooled_terms;
  pooled_terms.reserve(units.size());
  for (int f = 0; f < v; ++f) {
    std::vector<Unit> in_fold, out_fold;
    for (std::size_t i = 0; i < units.size(); ++i)
      (fold[i] == f ? in_fold : out_fold).push_back(units[i]);
    if (in_fold.empty() || out_fold.empty())
      throw EstimationError("crossfit fold " + std::to_string(f) + " has no units");
    auto nuis = fit_nuisances(out_fold, dims, delta);
    switch (kind) {
      case EstimatorKind::aipw: {
        auto terms = detail::aipw_terms(in_fold, rule, nuis);
        pooled_terms.insert(pooled_terms.end(), terms.begin(), terms.end());
        break;
      }
      case EstimatorKind::tmle: {
        auto terms = detail::tmle_terms(in_fold, rule, nuis);
        // IC terms pool both roles: their mean is the targeted plug-in plus
        // the (solved-to-zero) score, their spread gives the SE.
        pooled_terms.insert(pooled_terms.end(), terms.ic.begin(), terms.ic.end());
        break;
      }
      case EstimatorKind::plugin: {
        for (const auto& u : in_fold)
          pooled_terms.push_back(nuis.q_hat[u.stratum][rule.provider_for(u.stratum)]);
        break;
      }
    }
  }
  PolicyValueEstimate est;
  est.estimator = kind == EstimatorKind::aipw   ? "aipw"
                  : kind == EstimatorKind::tmle ? "tmle"
                                                : "plugin";
  est.n = static_cast<int>(units.size());
  double sum = 0.0;
  for (double t : pooled_terms) sum += t;
  est.value = sum / static_cast<double>(pooled_terms.size());
  est.std_error = detail::sd_over_sqrt_n(pooled_terms);
  return est;
}

struct RuleLearner {
  std::string name;
  std::function<ProviderRule(std::span<const Unit>)> fit;
};

// Discrete cross-validated selector: each learner is fit per training fold,
// its rule valued on the held-out fold by A-IPW; the learner with the highest
// cross-validated mean value wins (ties to the earliest in the list) and is
// refit on the full data.
inline ProviderRule select_rule_cv(std::span<const Unit> units,
                                   const std::vector<RuleLearner>& learners, int v,
                                   std::uint64_t seed, const Dims& dims,
                                   double delta = kDefaultPropensityFloor,
                                   std::vector<double>* cv_values = nullptr) {
  if (learners.empty()) throw UsageError("select_rule_cv: no learners");
  if (learners.size() == 1) return learners[0].fit(units);
  if (v < 2 || static_cast<int>(units.size()) < v)
    throw EstimationError("select_rule_cv requires 2 <= V <= n");
  auto fold = fold_assignment(units.size(), v, seed);
  std::vector<double> mean_value(learners.size(), 0.0);
  for (int f = 0; f < v; ++f) {
    std::vector<Unit> valid, train;
    for (std::size_t i = 0; i < units.size(); ++i)
      (fold[i] == f ? valid : train).push_back(units[i]);
    if (valid.empty() || train.empty())
      throw EstimationError("select_rule_cv fold " + std::to_string(f) + " has no units");
    auto nuis = fit_nuisances(train, dims, delta);
    for (std::size_t l = 0; l < learners.size(); ++l) {
      auto rule = learners[l].fit(train);
      mean_value[l] += aipw_value(valid, rule, nuis).value / static_cast<double>(v);
    }
  }
  std::size_t best = 0;
  for (std::size_t l = 1; l < learners.size(); ++l)
    if (mean_value[l] > mean_value[best]) best = l;
  if (cv_values) *cv_values = mean_value;
  return learners[best].fit(units);
}

}  // namespace dcbpl::causal
