#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dcbpl/errors.hpp"
#include "dcbpl/rng.hpp"
#include "dcbpl/scm.hpp"

namespace dcbpl::corpus {

using json = nlohmann::json;

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kNumSpecials = 3;

  // token id -> action id for tokens >= kNumSpecials, in rank order
  std::vector<int> actions;
  std::unordered_map<int, int> token_of_action;

  int size() const { return kNumSpecials + static_cast<int>(actions.size()); }
  int n_actions() const { return static_cast<int>(actions.size()); }
  static bool is_special(int token) { return token < kNumSpecials; }

  bool has_action(int action) const { return token_of_action.contains(action); }
  int token(int action) const { return token_of_action.at(action); }
  int action(int token) const {
    if (is_special(token)) throw UsageError("special token has no action");
    return actions.at(token - kNumSpecials);
  }
};

struct OrderSetPair {
  std::int64_t eid = 0;
  int provider = 0;
  std::vector<int> prefix;  // BOS + action tokens with SEP step delimiters
  std::vector<int> target;  // ascending token ids, non-empty
  int context_len = 0;      // action tokens in the (untruncated) prefix
};

struct SplitSpec {
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

inline Vocabulary build_vocabulary(const std::vector<scm::Trajectory>& cohort, int max_actions) {
  if (cohort.empty()) throw CorpusError("cannot build a vocabulary from an empty cohort");
  std::map<int, std::int64_t> counts;
  for (const auto& traj : cohort)
    for (const auto& step : traj.steps)
      for (int a : step.actions) ++counts[a];
  // rank: descending frequency, ties by ascending action id
  std::vector<std::pair<int, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  Vocabulary vocab;
  for (const auto& [action, _] : ranked) {
    if (vocab.n_actions() >= max_actions) break;
    vocab.token_of_action[action] = vocab.size();
    vocab.actions.push_back(action);
  }
  return vocab;
}

// One pair per (encounter, step t) with t in [0, len-2]: prefix holds the
// SEP-delimited action sets through step t, target is step t+1's set.
// Out-of-vocabulary actions are dropped entirely; a pair whose target empties
// out is skipped. Over-long prefixes keep the most recent tokens.
inline std::vector<OrderSetPair> make_pairs(const std::vector<scm::Trajectory>& cohort,
                                            const Vocabulary& vocab, int max_context) {
  if (max_context < 1) throw CorpusError("max_context must be >= 1");
  std::vector<OrderSetPair> pairs;
  for (const auto& traj : cohort) {
    std::vector<int> prefix = {Vocabulary::kBos};
    int action_tokens = 0;
    for (std::size_t t = 0; t + 1 < traj.steps.size(); ++t) {
      std::vector<int> set_tokens;
      for (int a : traj.steps[t].actions)
        if (vocab.has_action(a)) set_tokens.push_back(vocab.token(a));
      std::sort(set_tokens.begin(), set_tokens.end());
      prefix.insert(prefix.end(), set_tokens.begin(), set_tokens.end());
      prefix.push_back(Vocabulary::kSep);
      action_tokens += static_cast<int>(set_tokens.size());

      std::vector<int> target;
      for (int a : traj.steps[t + 1].actions)
        if (vocab.has_action(a)) target.push_back(vocab.token(a));
      std::sort(target.begin(), target.end());
      if (target.empty()) continue;

      OrderSetPair pair;
      pair.eid = traj.pid;
      pair.provider = traj.provider;
      pair.target = std::move(target);
      pair.context_len = action_tokens;
      if (static_cast<int>(prefix.size()) > max_context)
        pair.prefix.assign(prefix.end() - max_context, prefix.end());
      else
        pair.prefix = prefix;
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

namespace detail {

inline double split_draw(std::int64_t eid, std::uint64_t seed) {
  return static_cast<double>(
             rng::mix(rng::key_of(seed, 0xec0de, static_cast<std::uint64_t>(eid))) >> 11) *
         0x1.0p-53;
}

}  // namespace detail

// Encounter-level split by a deterministic hash of (eid, seed). When the data
// holds >= 2 encounters, both sides are clamped to hold at least one encounter.
inline std::pair<std::vector<OrderSetPair>, std::vector<OrderSetPair>> split_encounters(
    const std::vector<OrderSetPair>& pairs, const SplitSpec& spec) {
  std::map<std::int64_t, double> draw;
  for (const auto& p : pairs) draw.emplace(p.eid, detail::split_draw(p.eid, spec.seed));
  std::set<std::int64_t> test_eids;
  for (const auto& [eid, u] : draw)
    if (u < spec.test_fraction) test_eids.insert(eid);
  if (draw.size() >= 2) {
    auto extreme = [&](bool want_max) {
      auto it = std::max_element(draw.begin(), draw.end(), [&](const auto& x, const auto& y) {
        return want_max ? x.second < y.second : x.second > y.second;
      });
      return it->first;
    };
    if (test_eids.empty()) test_eids.insert(extreme(false));
    if (test_eids.size() == draw.size()) test_eids.erase(extreme(true));
  }
  std::vector<OrderSetPair> train, test;
  for (const auto& p : pairs)
    (test_eids.contains(p.eid) ? test : train).push_back(p);
  return {std::move(train), std::move(test)};
}

// Three-way encounter split for the pretrain / fine-tune / test partition.
// Fine-tune encounters are disjoint from pre-training ones so fine-tuning
// sees previously unused data.
struct ThreeWaySplit {
  std::vector<OrderSetPair> pretrain, finetune, test;
};

inline ThreeWaySplit split_three_way(const std::vector<OrderSetPair>& pairs, double finetune_fraction,
                                     double test_fraction, std::uint64_t seed) {
  if (finetune_fraction < 0 || test_fraction < 0 || finetune_fraction + test_fraction >= 1.0)
    throw CorpusError("invalid three-way split fractions");
  ThreeWaySplit out;
  for (const auto& p : pairs) {
    double u = detail::split_draw(p.eid, seed);
    if (u < test_fraction)
      out.test.push_back(p);
    else if (u < test_fraction + finetune_fraction)
      out.finetune.push_back(p);
    else
      out.pretrain.push_back(p);
  }
  return out;
}

inline std::vector<OrderSetPair> provider_subset(const std::vector<OrderSetPair>& pairs, int j) {
  std::vector<OrderSetPair> out;
  for (const auto& p : pairs)
    if (p.provider == j) out.push_back(p);
  return out;
}

// --- serialization ---

inline void to_json(json& j, const OrderSetPair& p) {
  j = json{{"eid", p.eid},
           {"provider", p.provider},
           {"prefix", p.prefix},
           {"target", p.target},
           {"t", p.context_len}};
}

inline void from_json(const json& j, OrderSetPair& p) {
  j.at("eid").get_to(p.eid);
  j.at("provider").get_to(p.provider);
  j.at("prefix").get_to(p.prefix);
  j.at("target").get_to(p.target);
  j.at("t").get_to(p.context_len);
}

inline void to_json(json& j, const Vocabulary& v) {
  json mapping = json::object();
  for (int t = Vocabulary::kNumSpecials; t < v.size(); ++t)
    mapping[std::to_string(v.action(t))] = t;
  j = json{{"actions", mapping},
           {"specials",
            {{"pad", Vocabulary::kPad}, {"bos", Vocabulary::kBos}, {"sep", Vocabulary::kSep}}}};
}

inline void from_json(const json& j, Vocabulary& v) {
  std::map<int, int> by_token;  // token -> action
  for (const auto& [action_str, token] : j.at("actions").items())
    by_token[token.get<int>()] = std::stoi(action_str);
  v.actions.clear();
  v.token_of_action.clear();
  for (const auto& [token, action] : by_token) {
    if (token != v.size()) throw CorpusError("vocabulary token ids are not dense");
    v.token_of_action[action] = token;
    v.actions.push_back(action);
  }
}

}  // namespace dcbpl::corpus
