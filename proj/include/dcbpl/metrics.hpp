#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "dcbpl/corpus.hpp"
#include "dcbpl/errors.hpp"
#include "dcbpl/rng.hpp"

namespace dcbpl::metrics {

using corpus::OrderSetPair;
using corpus::Vocabulary;
using json = nlohmann::json;

// prefix -> probability vector over the full vocabulary
using DistFn = std::function<std::vector<double>(const std::vector<int>&)>;

inline std::vector<std::vector<double>> predict_all(const DistFn& fn,
                                                    std::span<const OrderSetPair> pairs) {
  std::vector<std::vector<double>> dists;
  dists.reserve(pairs.size());
  for (const auto& p : pairs) dists.push_back(fn(p.prefix));
  return dists;
}

// 0-based rank of action token `a` by descending probability over non-special
// tokens only; ties broken by ascending token id.
inline int rank_of(std::span<const double> dist, const Vocabulary& vocab, int a) {
  if (Vocabulary::is_special(a)) throw UsageError("rank_of: special token queried");
  if (a >= static_cast<int>(dist.size())) throw UsageError("rank_of: token outside distribution");
  int rank = 0;
  for (int b = Vocabulary::kNumSpecials; b < static_cast<int>(dist.size()); ++b) {
    if (b == a) continue;
    if (dist[b] > dist[a] || (dist[b] == dist[a] && b < a)) ++rank;
  }
  return rank;
}

inline double q_accuracy(std::span<const double> dist, const Vocabulary& vocab, int a) {
  return 1.0 - static_cast<double>(rank_of(dist, vocab, a)) /
                   static_cast<double>(vocab.n_actions());
}

struct PairEval {
  double mean_rank = 0.0;
  int min_rank = 0;
  double q_acc = 0.0;  // mean q-accuracy over the target set
};

inline PairEval evaluate_pair(std::span<const double> dist, const Vocabulary& vocab,
                              const OrderSetPair& pair) {
  PairEval e;
  e.min_rank = std::numeric_limits<int>::max();
  for (int a : pair.target) {
    int r = rank_of(dist, vocab, a);
    e.mean_rank += r;
    e.min_rank = std::min(e.min_rank, r);
    e.q_acc += q_accuracy(dist, vocab, a);
  }
  e.mean_rank /= static_cast<double>(pair.target.size());
  e.q_acc /= static_cast<double>(pair.target.size());
  return e;
}

inline double mean_top_k(const DistFn& fn, const Vocabulary& vocab,
                         std::span<const OrderSetPair> pairs, int k) {
  if (k < 1) throw UsageError("mean_top_k: k must be >= 1");
  if (pairs.empty()) return 0.0;
  int hits = 0;
  for (const auto& p : pairs)
    if (evaluate_pair(fn(p.prefix), vocab, p).mean_rank <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

inline double min_top_k(const DistFn& fn, const Vocabulary& vocab,
                        std::span<const OrderSetPair> pairs, int k) {
  if (k < 1) throw UsageError("min_top_k: k must be >= 1");
  if (pairs.empty()) return 0.0;
  int hits = 0;
  for (const auto& p : pairs)
    if (evaluate_pair(fn(p.prefix), vocab, p).min_rank <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

struct SeparationStat {
  int action = 0;  // token id
  double delta = 0.0;
  double mean_p1 = 0.0;
  double mean_p0 = 0.0;
  int n1 = 0;
  int n0 = 0;
  double p_value = 1.0;
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  int n = 0;
};

inline Moments moments(std::span<const double> xs) {
  Moments m;
  m.n = static_cast<int>(xs.size());
  for (double x : xs) m.mean += x;
  m.mean /= m.n;
  if (m.n > 1) {
    for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
    m.var /= (m.n - 1);
  }
  return m;
}

// Welch unequal-variance two-sample mean test, two-sided.
inline double welch_p_value(const Moments& a, const Moments& b) {
  double se2 = a.var / a.n + b.var / b.n;
  if (se2 <= 0.0) return a.mean == b.mean ? 1.0 : 0.0;
  double t = (a.mean - b.mean) / std::sqrt(se2);
  double df = se2 * se2 / (a.var * a.var / (static_cast<double>(a.n) * a.n * (a.n - 1)) +
                           b.var * b.var / (static_cast<double>(b.n) * b.n * (b.n - 1)));
  if (!std::isfinite(df) || df < 1.0) df = 1.0;
  boost::math::students_t_distribution<double> dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace detail

// Difference-in-means separation for one action: mean predicted probability
// over pairs where the action occurs next minus where it does not. The larger
// side is down-sampled to the smaller by a seeded draw.
inline SeparationStat learned_separation(const DistFn& fn, std::span<const OrderSetPair> pairs_pos,
                                         std::span<const OrderSetPair> pairs_neg, int a,
                                         std::uint64_t seed = 0) {
  if (pairs_pos.empty() || pairs_neg.empty())
    throw MetricError("learned_separation: empty sample for token " + std::to_string(a));
  std::vector<double> probs_pos, probs_neg;
  for (const auto& p : pairs_pos) probs_pos.push_back(fn(p.prefix)[a]);
  std::vector<std::size_t> neg_idx(pairs_neg.size());
  for (std::size_t i = 0; i < neg_idx.size(); ++i) neg_idx[i] = i;
  if (pairs_neg.size() > pairs_pos.size()) {
    rng::Stream stream(seed, 0x5e9, static_cast<std::uint64_t>(a));
    stream.shuffle(neg_idx);
    neg_idx.resize(pairs_pos.size());
    std::sort(neg_idx.begin(), neg_idx.end());
  }
  for (std::size_t i : neg_idx) probs_neg.push_back(fn(pairs_neg[i].prefix)[a]);
  auto m1 = detail::moments(probs_pos);
  auto m0 = detail::moments(probs_neg);
  SeparationStat stat;
  stat.action = a;
  stat.mean_p1 = m1.mean;
  stat.mean_p0 = m0.mean;
  stat.delta = m1.mean - m0.mean;
  stat.n1 = m1.n;
  stat.n0 = m0.n;
  stat.p_value = detail::welch_p_value(m1, m0);
  return stat;
}

// Per-action separation across the vocabulary on a calibration set; actions
// never (or always) occurring in targets are skipped. Distributions are
// computed once per pair.
inline std::vector<SeparationStat> separation_table(const DistFn& fn, const Vocabulary& vocab,
                                                    std::span<const OrderSetPair> pairs,
                                                    std::uint64_t seed = 0) {
  auto dists = predict_all(fn, pairs);
  std::vector<SeparationStat> table;
  for (int a = Vocabulary::kNumSpecials; a < vocab.size(); ++a) {
    std::vector<double> pos, neg_all;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      bool in_target = std::binary_search(pairs[i].target.begin(), pairs[i].target.end(), a);
      (in_target ? pos : neg_all).push_back(dists[i][a]);
    }
    if (pos.empty() || neg_all.empty()) continue;
    std::vector<double> neg = neg_all;
    if (neg.size() > pos.size()) {
      std::vector<std::size_t> idx(neg.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng::Stream stream(seed, 0x5e9, static_cast<std::uint64_t>(a));
      stream.shuffle(idx);
      idx.resize(pos.size());
      std::sort(idx.begin(), idx.end());
      neg.clear();
      for (std::size_t i : idx) neg.push_back(neg_all[i]);
    }
    auto m1 = detail::moments(pos);
    auto m0 = detail::moments(neg);
    SeparationStat stat;
    stat.action = a;
    stat.mean_p1 = m1.mean;
    stat.mean_p0 = m0.mean;
    stat.delta = m1.mean - m0.mean;
    stat.n1 = m1.n;
    stat.n0 = m0.n;
    stat.p_value = detail::welch_p_value(m1, m0);
    table.push_back(stat);
  }
  return table;
}

struct ReportRow {
  std::string stratum;
  int k = 0;
  double mean_top_k = 0.0;
  double min_top_k = 0.0;
  double q_acc_mean = 0.0;
  double q_acc_median = 0.0;
  int n = 0;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
};

struct StrataSpec {
  enum class Kind { single, context_len, delta_quantile };
  Kind kind = Kind::single;
  // upper bounds (exclusive) for context-length bins; a final open bin is added
  std::vector<int> context_edges;
  // ascending quantile levels for the delta grid (deciles by default)
  std::vector<double> delta_quantiles = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  double pos = q * (sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  return quantile_sorted(xs, 0.5);
}

inline ReportRow make_row(const std::string& label, int k, std::span<const PairEval> evals) {
  ReportRow row;
  row.stratum = label;
  row.k = k;
  row.n = static_cast<int>(evals.size());
  if (evals.empty()) {
    row.mean_top_k = row.min_top_k = row.q_acc_mean = row.q_acc_median =
        std::numeric_limits<double>::quiet_NaN();
    return row;
  }
  int mean_hits = 0, min_hits = 0;
  std::vector<double> qaccs;
  for (const auto& e : evals) {
    if (e.mean_rank <= k) ++mean_hits;
    if (e.min_rank <= k) ++min_hits;
    row.q_acc_mean += e.q_acc;
    qaccs.push_back(e.q_acc);
  }
  row.mean_top_k = static_cast<double>(mean_hits) / row.n;
  row.min_top_k = static_cast<double>(min_hits) / row.n;
  row.q_acc_mean /= row.n;
  row.q_acc_median = median(std::move(qaccs));
  return row;
}

}  // namespace detail

// Stratified accuracy report. Context bins partition the pairs; delta rows are
// cumulative (pairs whose mean separation over the target set exceeds the
// quantile cut). The delta stratification needs a per-action separation table
// from a calibration set disjoint from `pairs`.
inline MetricsReport stratified_report(const DistFn& fn, const Vocabulary& vocab,
                                       std::span<const OrderSetPair> pairs,
                                       const StrataSpec& spec, std::span<const int> ks,
                                       const std::vector<SeparationStat>& calibration = {}) {
  auto dists = predict_all(fn, pairs);
  std::vector<PairEval> evals;
  evals.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    evals.push_back(evaluate_pair(dists[i], vocab, pairs[i]));

  MetricsReport report;
  auto emit = [&](const std::string& label, const std::vector<PairEval>& subset) {
    for (int k : ks) report.rows.push_back(detail::make_row(label, k, subset));
  };

  switch (spec.kind) {
    case StrataSpec::Kind::single: {
      emit("all", evals);
      break;
    }
    case StrataSpec::Kind::context_len: {
      std::vector<int> edges = spec.context_edges;
      std::sort(edges.begin(), edges.end());
      for (std::size_t b = 0; b <= edges.size(); ++b) {
        int lo = b == 0 ? 0 : edges[b - 1];
        int hi = b < edges.size() ? edges[b] : std::numeric_limits<int>::max();
        std::vector<PairEval> subset;
        for (std::size_t i = 0; i < pairs.size(); ++i)
          if (pairs[i].context_len >= lo && pairs[i].context_len < hi) subset.push_back(evals[i]);
        std::string label = b < edges.size()
                                ? std::to_string(lo) + "<=t<" + std::to_string(hi)
                                : "t>=" + std::to_string(lo);
        emit(label, subset);
      }
      break;
    }
    case StrataSpec::Kind::delta_quantile: {
      if (calibration.empty())
        throw MetricError("delta stratification requires a calibration separation table");
      std::unordered_map<int, double> delta_of;
      for (const auto& s : calibration) delta_of[s.action] = s.delta;
      std::vector<double> pair_delta(pairs.size(), 0.0);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        double acc = 0.0;
        for (int a : pairs[i].target) {
          auto it = delta_of.find(a);
          if (it != delta_of.end()) acc += it->second;
        }
        pair_delta[i] = acc / static_cast<double>(pairs[i].target.size());
      }
      std::vector<double> sorted = pair_delta;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t qi = 0; qi < spec.delta_quantiles.size(); ++qi) {
        double cut = detail::quantile_sorted(sorted, spec.delta_quantiles[qi]);
        std::vector<PairEval> subset;
        for (std::size_t i = 0; i < pairs.size(); ++i)
          if (pair_delta[i] >= cut) subset.push_back(evals[i]);
        emit("Q" + std::to_string(qi + 1), subset);
      }
      break;
    }
  }
  return report;
}

// --- tabular output ---

namespace detail {

inline std::string fmt_metric(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string report_to_csv(const MetricsReport& report) {
  std::string out = "stratum,k,mean_top_k,min_top_k,q_acc_mean,q_acc_median,n\n";
  for (const auto& r : report.rows) {
    out += r.stratum + "," + std::to_string(r.k) + "," + detail::fmt_metric(r.mean_top_k) + "," +
           detail::fmt_metric(r.min_top_k) + "," + detail::fmt_metric(r.q_acc_mean) + "," +
           detail::fmt_metric(r.q_acc_median) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

inline json report_to_json(const MetricsReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row{{"stratum", r.stratum}, {"k", r.k}, {"n", r.n}};
    auto put = [&](const char* key, double v) {
      if (std::isnan(v))
        row[key] = nullptr;
      else
        row[key] = v;
    };
    put("mean_top_k", r.mean_top_k);
    put("min_top_k", r.min_top_k);
    put("q_acc_mean", r.q_acc_mean);
    put("q_acc_median", r.q_acc_median);
    rows.push_back(row);
  }
  return json{{"rows", rows}};
}

inline std::string separation_to_csv(std::span<const SeparationStat> table) {
  std::string out = "action,delta,p_value,n1,n0\n";
  for (const auto& s : table)
    out += std::to_string(s.action) + "," + detail::fmt_metric(s.delta) + "," +
           detail::fmt_metric(s.p_value) + "," + std::to_string(s.n1) + "," +
           std::to_string(s.n0) + "\n";
  return out;
}

}  // namespace dcbpl::metrics
