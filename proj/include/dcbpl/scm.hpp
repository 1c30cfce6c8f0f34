#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcbpl/errors.hpp"
#include "dcbpl/rng.hpp"

namespace dcbpl::scm {

using json = nlohmann::json;
using Matrix = std::vector<std::vector<double>>;

// Assignment softmax floor: every provider keeps at least this probability
// in every stratum, so positivity holds by construction.
inline constexpr double kAssignmentFloor = 0.01;
inline constexpr int kMaxSetSize = 3;

struct Stratum {
  int complaint = 0;
  int severity = 0;
  bool operator==(const Stratum&) const = default;
};

struct ScmConfig {
  int n_providers = 3;
  int n_actions = 8;
  int n_complaints = 6;
  int n_severities = 3;
  int horizon = 4;
  Matrix skill;            // [provider][complaint]
  Matrix action_effects;   // [action][complaint]
  Matrix provider_style;   // [provider][action]
  Matrix assignment_bias;  // [complaint][provider]
  double noise_sd = 0.1;
  std::uint64_t seed = 1;

  int n_strata() const { return n_complaints * n_severities; }
  int stratum_index(const Stratum& s) const { return s.complaint * n_severities + s.severity; }
  Stratum stratum_at(int idx) const { return {idx / n_severities, idx % n_severities}; }

  void validate() const {
    auto check_matrix = [](const Matrix& m, std::size_t rows, std::size_t cols,
                           const char* name) {
      if (m.size() != rows)
        throw ConfigError(std::string(name) + ": expected " + std::to_string(rows) + " rows, got " +
                          std::to_string(m.size()));
      for (const auto& row : m)
        if (row.size() != cols)
          throw ConfigError(std::string(name) + ": expected " + std::to_string(cols) +
                            " columns, got " + std::to_string(row.size()));
    };
    if (n_providers < 1) throw ConfigError("n_providers must be >= 1");
    if (n_actions < 2) throw ConfigError("n_actions must be >= 2");
    if (n_complaints < 1 || n_severities < 1) throw ConfigError("stratum counts must be >= 1");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (noise_sd < 0.0) throw ConfigError("noise_sd must be >= 0");
    check_matrix(skill, n_providers, n_complaints, "skill");
    check_matrix(action_effects, n_actions, n_complaints, "action_effects");
    check_matrix(provider_style, n_providers, n_actions, "provider_style");
    check_matrix(assignment_bias, n_complaints, n_providers, "assignment_bias");
  }
};

inline Matrix zeros_matrix(int rows, int cols) {
  return Matrix(rows, std::vector<double>(cols, 0.0));
}

// A config with all-zero structural matrices; callers fill in what they need.
inline ScmConfig make_default_config() {
  ScmConfig cfg;
  cfg.skill = zeros_matrix(cfg.n_providers, cfg.n_complaints);
  cfg.action_effects = zeros_matrix(cfg.n_actions, cfg.n_complaints);
  cfg.provider_style = zeros_matrix(cfg.n_providers, cfg.n_actions);
  cfg.assignment_bias = zeros_matrix(cfg.n_complaints, cfg.n_providers);
  return cfg;
}

struct Step {
  std::vector<int> actions;  // distinct, ascending
  double delta = 0.0;        // realized latent-health increment
};

struct Trajectory {
  std::int64_t pid = 0;
  Stratum baseline;
  int provider = 0;
  std::vector<Step> steps;
  double outcome = 0.0;
};

struct ProviderRule {
  std::vector<int> assignment;    // by stratum index
  std::vector<bool> low_support;  // set by learners when no provider met the support threshold

  int provider_for(int stratum_idx) const { return assignment.at(stratum_idx); }
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double initial_health(const Stratum& s) { return -0.25 * s.severity; }

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

// State transition: actions and states only. The provider influences the
// path solely through which actions get chosen, which keeps the exclusion
// restriction true by construction.
inline double action_increment(const ScmConfig& cfg, const std::vector<int>& actions,
                               int complaint) {
  double inc = 0.0;
  for (int a : actions) inc += cfg.action_effects[a][complaint];
  return inc;
}

// Stream id0 domains; distinct per purpose so cohort simulation and the
// counterfactual oracle never share randomness.
inline constexpr std::uint64_t kDomainCohort = 0x10;
inline constexpr std::uint64_t kDomainCounterfactual = 0x20;
inline constexpr std::uint64_t kDomainEmulated = 0x30;

}  // namespace detail

inline std::vector<double> assignment_distribution(const ScmConfig& cfg, int complaint) {
  auto p = detail::softmax(cfg.assignment_bias[complaint]);
  double floor = kAssignmentFloor;
  int m = cfg.n_providers;
  if (floor * m > 1.0) floor = 1.0 / m;
  for (auto& v : p) v = (1.0 - m * floor) * v + floor;
  return p;
}

// The exact per-draw categorical policy of provider j: competence scales how
// strongly the provider's action choice tracks the current latent state.
inline std::vector<double> true_action_distribution(const ScmConfig& cfg, int j,
                                                    double latent_state, int complaint) {
  std::vector<double> logits(cfg.n_actions);
  for (int a = 0; a < cfg.n_actions; ++a)
    logits[a] = cfg.provider_style[j][a] +
                cfg.skill[j][complaint] * latent_state * cfg.action_effects[a][complaint];
  return detail::softmax(logits);
}

namespace detail {

inline std::vector<int> draw_action_set(const ScmConfig& cfg, int j, double h, int complaint,
                                        rng::Stream& stream) {
  int max_size = std::min(kMaxSetSize, cfg.n_actions);
  int size = stream.uniform_int(1, max_size);
  auto probs = true_action_distribution(cfg, j, h, complaint);
  std::vector<int> chosen;
  for (int k = 0; k < size; ++k) {
    int a = stream.categorical(probs);
    chosen.push_back(a);
    probs[a] = 0.0;  // without replacement: action sets hold distinct actions
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

template <typename ActionSampler>
Trajectory simulate_path(const ScmConfig& cfg, std::int64_t pid, rng::Stream& stream,
                         std::optional<int> forced_provider, std::optional<Stratum> forced_stratum,
                         ActionSampler&& sample_actions) {
  Trajectory traj;
  traj.pid = pid;
  if (forced_stratum) {
    traj.baseline = *forced_stratum;
  } else {
    traj.baseline.complaint = stream.uniform_int(0, cfg.n_complaints - 1);
    traj.baseline.severity = stream.uniform_int(0, cfg.n_severities - 1);
  }
  if (forced_provider) {
    traj.provider = *forced_provider;
  } else {
    auto g = assignment_distribution(cfg, traj.baseline.complaint);
    traj.provider = stream.categorical(g);
  }
  double h = initial_health(traj.baseline);
  for (int t = 0; t < cfg.horizon; ++t) {
    Step step;
    step.actions = sample_actions(traj.provider, h, traj.baseline.complaint, stream);
    double noise = cfg.noise_sd > 0.0 ? stream.normal(0.0, cfg.noise_sd) : 0.0;
    step.delta = action_increment(cfg, step.actions, traj.baseline.complaint) + noise;
    h += step.delta;
    traj.steps.push_back(std::move(step));
  }
  traj.outcome = logistic(h);
  return traj;
}

inline Trajectory simulate_one(const ScmConfig& cfg, std::int64_t pid, std::uint64_t domain,
                               std::uint64_t stream_id, std::optional<int> forced_provider,
                               std::optional<Stratum> forced_stratum) {
  rng::Stream stream(cfg.seed, domain, stream_id);
  return simulate_path(cfg, pid, stream, forced_provider, forced_stratum,
                       [&](int j, double h, int c, rng::Stream& s) {
                         return draw_action_set(cfg, j, h, c, s);
                       });
}

}  // namespace detail

inline std::vector<Trajectory> simulate_cohort(const ScmConfig& cfg, std::int64_t n_patients) {
  cfg.validate();
  if (n_patients < 0) throw ConfigError("n_patients must be >= 0");
  std::vector<Trajectory> cohort;
  cohort.reserve(static_cast<std::size_t>(n_patients));
  for (std::int64_t i = 0; i < n_patients; ++i)
    cohort.push_back(detail::simulate_one(cfg, i, detail::kDomainCohort,
                                          static_cast<std::uint64_t>(i), std::nullopt,
                                          std::nullopt));
  return cohort;
}

// Recomputes the outcome from the recorded action sets and realized deltas.
// No provider input anywhere: the replay harness for the exclusion restriction.
inline double replay_outcome(const ScmConfig& cfg, const Trajectory& traj) {
  double h = initial_health(traj.baseline);
  for (const auto& step : traj.steps) h += step.delta;
  return logistic(h);
}

struct MonteCarloValue {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t n = 0;
};

namespace detail {

template <typename Simulate>
MonteCarloValue mc_value(std::int64_t n_mc, Simulate&& one) {
  if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t i = 0; i < n_mc; ++i) {
    double y = one(i);
    sum += y;
    sum_sq += y * y;
  }
  MonteCarloValue v;
  v.n = n_mc;
  v.mean = sum / n_mc;
  double var = n_mc > 1 ? (sum_sq - n_mc * v.mean * v.mean) / (n_mc - 1) : 0.0;
  v.std_error = std::sqrt(std::max(var, 0.0) / n_mc);
  return v;
}

}  // namespace detail

inline MonteCarloValue counterfactual_value_mc(const ScmConfig& cfg, int j, const Stratum& stratum,
                                               std::int64_t n_mc) {
  cfg.validate();
  if (j < 0 || j >= cfg.n_providers) throw ConfigError("provider id out of range");
  std::uint64_t cell = static_cast<std::uint64_t>(cfg.stratum_index(stratum)) *
                           static_cast<std::uint64_t>(cfg.n_providers) +
                       static_cast<std::uint64_t>(j);
  return detail::mc_value(n_mc, [&](std::int64_t i) {
    auto traj = detail::simulate_one(cfg, i, detail::kDomainCounterfactual,
                                     cell * 0x100000000ULL + static_cast<std::uint64_t>(i), j,
                                     stratum);
    return traj.outcome;
  });
}

inline double counterfactual_value(const ScmConfig& cfg, int j, const Stratum& stratum,
                                   std::int64_t n_mc) {
  return counterfactual_value_mc(cfg, j, stratum, n_mc).mean;
}

// Value of emulating provider j's behavioral policy for a stratum: action sets
// sampled from true_action_distribution instead of forcing the provider id.
// Equals counterfactual_value up to Monte Carlo error (the value-equivalence
// property the oracle checks).
inline MonteCarloValue emulated_policy_value_mc(const ScmConfig& cfg, int j,
                                                const Stratum& stratum, std::int64_t n_mc) {
  cfg.validate();
  std::uint64_t cell = static_cast<std::uint64_t>(cfg.stratum_index(stratum)) *
                           static_cast<std::uint64_t>(cfg.n_providers) +
                       static_cast<std::uint64_t>(j);
  return detail::mc_value(n_mc, [&](std::int64_t i) {
    rng::Stream stream(cfg.seed, detail::kDomainEmulated,
                       cell * 0x100000000ULL + static_cast<std::uint64_t>(i));
    // Provider id in the path is a placeholder; every action draw comes from
    // the emulated provider's distribution.
    auto traj = detail::simulate_path(cfg, i, stream, 0, stratum,
                                      [&](int, double h, int c, rng::Stream& s) {
                                        return detail::draw_action_set(cfg, j, h, c, s);
                                      });
    return traj.outcome;
  });
}

inline ProviderRule oracle_optimal_rule(const ScmConfig& cfg, std::int64_t n_mc = 20000) {
  cfg.validate();
  ProviderRule rule;
  rule.assignment.resize(cfg.n_strata());
  rule.low_support.assign(cfg.n_strata(), false);
  for (int s = 0; s < cfg.n_strata(); ++s) {
    int best = 0;
    double best_value = -1.0;
    for (int j = 0; j < cfg.n_providers; ++j) {
      double v = counterfactual_value(cfg, j, cfg.stratum_at(s), n_mc);
      if (v > best_value) {  // strict: ties go to the lowest provider id
        best_value = v;
        best = j;
      }
    }
    rule.assignment[s] = best;
  }
  return rule;
}

// --- serialization ---

inline void to_json(json& j, const ScmConfig& cfg) {
  j = json{{"n_providers", cfg.n_providers},
           {"n_actions", cfg.n_actions},
           {"n_complaints", cfg.n_complaints},
           {"n_severities", cfg.n_severities},
           {"horizon", cfg.horizon},
           {"skill", cfg.skill},
           {"action_effects", cfg.action_effects},
           {"provider_style", cfg.provider_style},
           {"assignment_bias", cfg.assignment_bias},
           {"noise_sd", cfg.noise_sd},
           {"seed", cfg.seed}};
}

inline void from_json(const json& j, ScmConfig& cfg) {
  j.at("n_providers").get_to(cfg.n_providers);
  j.at("n_actions").get_to(cfg.n_actions);
  j.at("n_complaints").get_to(cfg.n_complaints);
  j.at("n_severities").get_to(cfg.n_severities);
  j.at("horizon").get_to(cfg.horizon);
  j.at("skill").get_to(cfg.skill);
  j.at("action_effects").get_to(cfg.action_effects);
  j.at("provider_style").get_to(cfg.provider_style);
  j.at("assignment_bias").get_to(cfg.assignment_bias);
  j.at("noise_sd").get_to(cfg.noise_sd);
  j.at("seed").get_to(cfg.seed);
}

inline json trajectory_to_json(const Trajectory& t) {
  json steps = json::array();
  for (const auto& s : t.steps) steps.push_back(json{{"actions", s.actions}, {"delta", s.delta}});
  return json{{"pid", t.pid},        {"complaint", t.baseline.complaint},
              {"severity", t.baseline.severity}, {"provider", t.provider},
              {"steps", steps},      {"y", t.outcome}};
}

inline Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  j.at("pid").get_to(t.pid);
  j.at("complaint").get_to(t.baseline.complaint);
  j.at("severity").get_to(t.baseline.severity);
  j.at("provider").get_to(t.provider);
  j.at("y").get_to(t.outcome);
  for (const auto& sj : j.at("steps")) {
    Step s;
    sj.at("actions").get_to(s.actions);
    sj.at("delta").get_to(s.delta);
    t.steps.push_back(std::move(s));
  }
  return t;
}

inline void to_json(json& j, const ProviderRule& rule) {
  j = json{{"assignment", rule.assignment}, {"low_support", rule.low_support}};
}

inline void from_json(const json& j, ProviderRule& rule) {
  j.at("assignment").get_to(rule.assignment);
  if (j.contains("low_support"))
    j.at("low_support").get_to(rule.low_support);
  else
    rule.low_support.assign(rule.assignment.size(), false);
}

}  // namespace dcbpl::scm
