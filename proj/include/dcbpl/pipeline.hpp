#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "dcbpl/causal.hpp"
#include "dcbpl/corpus.hpp"
#include "dcbpl/errors.hpp"
#include "dcbpl/metrics.hpp"
#include "dcbpl/model.hpp"
#include "dcbpl/scm.hpp"

namespace dcbpl::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct PipelineError : std::runtime_error {
  std::string stage;
  PipelineError(std::string stage_name, const std::string& msg)
      : std::runtime_error("stage '" + stage_name + "': " + msg), stage(std::move(stage_name)) {}
};

// --- file helpers ---

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw UsageError("cannot write " + path.string());
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw UsageError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline void write_cohort_jsonl(const fs::path& path, const std::vector<scm::Trajectory>& cohort) {
  std::string out;
  for (const auto& t : cohort) out += scm::trajectory_to_json(t).dump() + "\n";
  write_file(path, out);
}

inline std::vector<scm::Trajectory> read_cohort_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::vector<scm::Trajectory> cohort;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    cohort.push_back(scm::trajectory_from_json(json::parse(line)));
  }
  return cohort;
}

inline void write_pairs_jsonl(const fs::path& path,
                              const std::vector<corpus::OrderSetPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += json(p).dump() + "\n";
  write_file(path, out);
}

inline std::vector<corpus::OrderSetPair> read_pairs_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::vector<corpus::OrderSetPair> pairs;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) pairs.push_back(json::parse(line).get<corpus::OrderSetPair>());
  return pairs;
}

// --- run configuration ---

struct RunConfig {
  scm::ScmConfig scm = scm::make_default_config();
  std::int64_t n_patients = 4000;
  int max_actions = 64;
  int max_context = 48;
  double finetune_fraction = 0.2;
  double test_fraction = 0.2;
  lcbm::ModelHyperparams model{.heads = 4,
                               .head_dim = 8,
                               .embed_dim = 32,
                               .ff_dim = 64,
                               .layers = 1,
                               .context = 56,
                               .vocab_size = 0};  // vocab filled from data
  lcbm::TrainConfig pretrain{.learning_rate = 0.1, .batch_size = 16, .epochs = 4, .seed = 0};
  double finetune_lr_factor = 0.1;
  int finetune_epochs = 4;
  int v_folds = 5;
  double propensity_floor = causal::kDefaultPropensityFloor;
  int support_min = 50;
  std::vector<int> ks = {1, 5, 10};
  std::vector<int> context_edges = {3, 6, 9};
  std::string rule_method = "pseudo-blip";  // or "cv-select"
  std::string value_estimator = "tmle";     // rule valuation in run_dcbpl
  std::uint64_t run_seed = 1;
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"scm", c.scm},
           {"n_patients", c.n_patients},
           {"max_actions", c.max_actions},
           {"max_context", c.max_context},
           {"finetune_fraction", c.finetune_fraction},
           {"test_fraction", c.test_fraction},
           {"model", c.model},
           {"pretrain", c.pretrain},
           {"finetune_lr_factor", c.finetune_lr_factor},
           {"finetune_epochs", c.finetune_epochs},
           {"v_folds", c.v_folds},
           {"propensity_floor", c.propensity_floor},
           {"support_min", c.support_min},
           {"ks", c.ks},
           {"context_edges", c.context_edges},
           {"rule_method", c.rule_method},
           {"value_estimator", c.value_estimator},
           {"run_seed", c.run_seed}};
}

inline void from_json(const json& j, RunConfig& c) {
  RunConfig defaults;
  c.scm = j.value("scm", defaults.scm);
  c.n_patients = j.value("n_patients", defaults.n_patients);
  c.max_actions = j.value("max_actions", defaults.max_actions);
  c.max_context = j.value("max_context", defaults.max_context);
  c.finetune_fraction = j.value("finetune_fraction", defaults.finetune_fraction);
  c.test_fraction = j.value("test_fraction", defaults.test_fraction);
  c.model = j.value("model", defaults.model);
  c.pretrain = j.value("pretrain", defaults.pretrain);
  c.finetune_lr_factor = j.value("finetune_lr_factor", defaults.finetune_lr_factor);
  c.finetune_epochs = j.value("finetune_epochs", defaults.finetune_epochs);
  c.v_folds = j.value("v_folds", defaults.v_folds);
  c.propensity_floor = j.value("propensity_floor", defaults.propensity_floor);
  c.support_min = j.value("support_min", defaults.support_min);
  c.ks = j.value("ks", defaults.ks);
  c.context_edges = j.value("context_edges", defaults.context_edges);
  c.rule_method = j.value("rule_method", defaults.rule_method);
  c.value_estimator = j.value("value_estimator", defaults.value_estimator);
  c.run_seed = j.value("run_seed", defaults.run_seed);
}

inline RunConfig load_run_config(const fs::path& path) {
  return json::parse(read_file(path)).get<RunConfig>();
}

inline causal::Dims dims_of(const RunConfig& cfg) {
  return {cfg.scm.n_providers, cfg.scm.n_strata()};
}

// --- stages ---
// Each stage reads only the previous stage's files under `out`, so the CLI
// subcommands reproduce exactly the slices run_dcbpl produces.

inline void stage_simulate(const RunConfig& cfg, const fs::path& out) {
  auto cohort = scm::simulate_cohort(cfg.scm, cfg.n_patients);
  write_cohort_jsonl(out / "cohort.jsonl", cohort);
  write_file(out / "config.json", json(cfg).dump(2) + "\n");
}

inline void stage_prepare(const RunConfig& cfg, const fs::path& out) {
  auto cohort = read_cohort_jsonl(out / "cohort.jsonl");
  auto vocab = corpus::build_vocabulary(cohort, cfg.max_actions);
  auto pairs = corpus::make_pairs(cohort, vocab, cfg.max_context);
  auto split = corpus::split_three_way(pairs, cfg.finetune_fraction, cfg.test_fraction,
                                       cfg.run_seed);
  write_file(out / "vocab.json", json(vocab).dump(2) + "\n");
  write_pairs_jsonl(out / "pairs_pretrain.jsonl", split.pretrain);
  write_pairs_jsonl(out / "pairs_finetune.jsonl", split.finetune);
  write_pairs_jsonl(out / "pairs_test.jsonl", split.test);
}

inline corpus::Vocabulary load_vocab(const fs::path& out) {
  return json::parse(read_file(out / "vocab.json")).get<corpus::Vocabulary>();
}

inline void stage_pretrain(const RunConfig& cfg, const fs::path& out) {
  auto vocab = load_vocab(out);
  auto pairs = read_pairs_jsonl(out / "pairs_pretrain.jsonl");
  auto hp = cfg.model;
  hp.vocab_size = vocab.size();
  auto model = lcbm::init_model(hp, cfg.run_seed + 1);
  auto train_cfg = cfg.pretrain;
  train_cfg.seed = cfg.run_seed + 1;
  train_cfg.mode = lcbm::TrainConfig::Mode::pretrain;
  auto trace = lcbm::train(model, pairs, train_cfg);
  lcbm::save_checkpoint(model, out / "checkpoints" / "pretrain");
  write_file(out / "loss_pretrain.json", json{{"trace", trace}}.dump(2) + "\n");
}

inline void stage_finetune(const RunConfig& cfg, const fs::path& out, int provider) {
  auto pretrained = lcbm::load_checkpoint(out / "checkpoints" / "pretrain");
  auto pairs = corpus::provider_subset(read_pairs_jsonl(out / "pairs_finetune.jsonl"), provider);
  auto train_cfg = cfg.pretrain;
  train_cfg.learning_rate = cfg.pretrain.learning_rate * cfg.finetune_lr_factor;
  train_cfg.epochs = cfg.finetune_epochs;
  train_cfg.seed = cfg.run_seed + 2 + static_cast<std::uint64_t>(provider);
  train_cfg.mode = lcbm::TrainConfig::Mode::finetune;
  std::vector<double> trace;
  auto model = lcbm::finetune(pretrained, pairs, train_cfg, &trace);
  lcbm::save_checkpoint(model, out / "checkpoints" / ("provider_" + std::to_string(provider)));
  write_file(out / ("loss_finetune_" + std::to_string(provider) + ".json"),
             json{{"trace", trace}, {"n_pairs", pairs.size()}}.dump(2) + "\n");
}

inline scm::ProviderRule fit_rule(const RunConfig& cfg, std::span<const causal::Unit> units,
                                  const std::string& method) {
  auto dims = dims_of(cfg);
  if (method == "pseudo-blip")
    return causal::rule_from_pseudo_blip(units, dims, cfg.support_min);
  if (method == "cv-select") {
    std::vector<causal::RuleLearner> learners;
    learners.push_back({"pseudo-blip", [&](std::span<const causal::Unit> u) {
                          return causal::rule_from_pseudo_blip(u, dims, cfg.support_min);
                        }});
    learners.push_back({"pseudo-blip-unrestricted", [&](std::span<const causal::Unit> u) {
                          return causal::rule_from_pseudo_blip(u, dims, 0);
                        }});
    return causal::select_rule_cv(units, learners, cfg.v_folds, cfg.run_seed + 7, dims,
                                  cfg.propensity_floor);
  }
  throw UsageError("unknown rule method: " + method);
}

inline json stage_rule(const RunConfig& cfg, const fs::path& out) {
  auto cohort = read_cohort_jsonl(out / "cohort.jsonl");
  auto units = causal::units_from_cohort(cohort, cfg.scm);
  auto rule = fit_rule(cfg, units, cfg.rule_method);
  auto kind = causal::estimator_kind_from_string(cfg.value_estimator);
  auto rule_value = causal::crossfit_value(units, rule, cfg.v_folds, kind, cfg.run_seed + 8,
                                           dims_of(cfg), cfg.propensity_floor);
  json values{{"rule_value", rule_value}};
  // per-provider constant-rule values, the provider "skill" profile
  json per_provider = json::array();
  for (int j = 0; j < cfg.scm.n_providers; ++j) {
    scm::ProviderRule constant;
    constant.assignment.assign(cfg.scm.n_strata(), j);
    constant.low_support.assign(cfg.scm.n_strata(), false);
    per_provider.push_back(json{
        {"provider", j},
        {"value", causal::crossfit_value(units, constant, cfg.v_folds, kind,
                                         cfg.run_seed + 9 + static_cast<std::uint64_t>(j),
                                         dims_of(cfg), cfg.propensity_floor)}});
  }
  values["per_provider"] = per_provider;
  write_file(out / "rule.json", json(rule).dump(2) + "\n");
  write_file(out / "values.json", values.dump(2) + "\n");
  return values;
}

inline json stage_estimate(const RunConfig& cfg, const fs::path& out, const std::string& estimator,
                           int v_folds, const std::optional<fs::path>& rule_path = {}) {
  auto cohort = read_cohort_jsonl(out / "cohort.jsonl");
  auto units = causal::units_from_cohort(cohort, cfg.scm);
  scm::ProviderRule rule;
  fs::path rp = rule_path.value_or(out / "rule.json");
  if (fs::exists(rp))
    rule = json::parse(read_file(rp)).get<scm::ProviderRule>();
  else
    rule = fit_rule(cfg, units, cfg.rule_method);
  auto kind = causal::estimator_kind_from_string(estimator);
  causal::PolicyValueEstimate est;
  if (v_folds >= 2) {
    est = causal::crossfit_value(units, rule, v_folds, kind, cfg.run_seed + 8, dims_of(cfg),
                                 cfg.propensity_floor);
  } else {
    auto nuis = causal::fit_nuisances(units, dims_of(cfg), cfg.propensity_floor);
    est = causal::estimate_value(units, rule, nuis, kind);
  }
  json result{{"estimate", est}, {"crossfit", v_folds >= 2 ? v_folds : 0}};
  write_file(out / ("estimate_" + estimator + ".json"), result.dump(2) + "\n");
  return result;
}

inline metrics::DistFn dist_fn_of(const lcbm::PolicyModel& model) {
  return [&model](const std::vector<int>& prefix) {
    return lcbm::forward_next_distribution(model, prefix);
  };
}

inline void stage_evaluate(const RunConfig& cfg, const fs::path& out,
                           const std::string& report = "all") {
  auto vocab = load_vocab(out);
  auto test_pairs = read_pairs_jsonl(out / "pairs_test.jsonl");
  auto calib_pairs = read_pairs_jsonl(out / "pairs_finetune.jsonl");
  auto pretrained = lcbm::load_checkpoint(out / "checkpoints" / "pretrain");
  auto fn = dist_fn_of(pretrained);
  bool all = report == "all";

  std::vector<metrics::SeparationStat> separation;
  if (all || report == "separation" || report == "qacc" || report == "topk") {
    separation = metrics::separation_table(fn, vocab, calib_pairs, cfg.run_seed + 10);
    if (all || report == "separation")
      write_file(out / "reports" / "separation.csv", metrics::separation_to_csv(separation));
  }
  if (all || report == "topk" || report == "qacc") {
    metrics::StrataSpec by_context{.kind = metrics::StrataSpec::Kind::context_len,
                                   .context_edges = cfg.context_edges};
    auto ctx_report = metrics::stratified_report(fn, vocab, test_pairs, by_context, cfg.ks);
    write_file(out / "reports" / "pretrain_by_context.csv", metrics::report_to_csv(ctx_report));
    metrics::StrataSpec by_delta{.kind = metrics::StrataSpec::Kind::delta_quantile};
    auto delta_report =
        metrics::stratified_report(fn, vocab, test_pairs, by_delta, cfg.ks, separation);
    write_file(out / "reports" / "pretrain_by_delta.csv", metrics::report_to_csv(delta_report));
    write_file(out / "reports" / "pretrain_by_delta.json",
               metrics::report_to_json(delta_report).dump(2) + "\n");
  }
  if (all) {
    metrics::StrataSpec single;
    for (int j = 0; j < cfg.scm.n_providers; ++j) {
      fs::path ckpt = out / "checkpoints" / ("provider_" + std::to_string(j));
      if (!fs::exists(ckpt / "manifest.json")) continue;
      auto model_j = lcbm::load_checkpoint(ckpt);
      auto pairs_j = corpus::provider_subset(test_pairs, j);
      if (pairs_j.empty()) continue;
      auto rep = metrics::stratified_report(dist_fn_of(model_j), vocab, pairs_j, single, cfg.ks);
      write_file(out / "reports" / ("provider_" + std::to_string(j) + ".csv"),
                 metrics::report_to_csv(rep));
    }
  }
}

inline void write_manifest(const RunConfig& cfg, const fs::path& out) {
  json artifacts = json::object();
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "manifest.json" && entry.path().parent_path() == out) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    artifacts[fs::relative(f, out).generic_string()] = sha256_hex(read_file(f));
  json manifest{{"config_hash", sha256_hex(json(cfg).dump(2))}, {"artifacts", artifacts}};
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
}

// Returns the relative paths whose content no longer matches the manifest.
inline std::vector<std::string> verify_manifest(const fs::path& out) {
  json manifest = json::parse(read_file(out / "manifest.json"));
  std::vector<std::string> tampered;
  for (const auto& [rel, hash] : manifest.at("artifacts").items()) {
    fs::path f = out / rel;
    if (!fs::exists(f) || sha256_hex(read_file(f)) != hash.get<std::string>())
      tampered.push_back(rel);
  }
  return tampered;
}

// Full DC-BPL run: simulate, tokenize, pretrain, fine-tune per provider,
// estimate the optimal provider rule, evaluate, manifest. A stage failure
// leaves partial artifacts plus an error marker naming the stage.
inline json run_dcbpl(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  std::string stage = "simulate";
  try {
    stage_simulate(cfg, out);
    stage = "prepare";
    stage_prepare(cfg, out);
    stage = "pretrain";
    stage_pretrain(cfg, out);
    for (int j = 0; j < cfg.scm.n_providers; ++j) {
      stage = "finetune provider " + std::to_string(j);
      stage_finetune(cfg, out, j);
    }
    stage = "rule";
    json values = stage_rule(cfg, out);
    stage = "evaluate";
    stage_evaluate(cfg, out);
    stage = "manifest";
    write_manifest(cfg, out);
    return json{{"out", out.string()}, {"values", values}};
  } catch (const std::exception& e) {
    write_file(out / "error.txt", "stage: " + stage + "\nerror: " + e.what() + "\n");
    throw PipelineError(stage, e.what());
  }
}

// "How would an optimal provider have behaved for a patient like this?"
// Dispatches on the learned rule, loads that provider's fine-tuned policy,
// and returns its top-k next actions for the prefix (specials excluded).
inline json query_optimal_policy(const fs::path& out, int complaint, int severity,
                                 const std::vector<int>& prefix, int k) {
  auto cfg = json::parse(read_file(out / "config.json")).get<RunConfig>();
  auto rule = json::parse(read_file(out / "rule.json")).get<scm::ProviderRule>();
  int idx = complaint * cfg.scm.n_severities + severity;
  if (complaint < 0 || complaint >= cfg.scm.n_complaints || severity < 0 ||
      severity >= cfg.scm.n_severities || idx >= static_cast<int>(rule.assignment.size())) {
    std::string known = "0..(" + std::to_string(cfg.scm.n_complaints - 1) + "),0..(" +
                        std::to_string(cfg.scm.n_severities - 1) + ")";
    throw UsageError("unknown stratum (" + std::to_string(complaint) + "," +
                     std::to_string(severity) + "); known strata: complaint,severity in " + known);
  }
  int provider = rule.provider_for(idx);
  auto vocab = load_vocab(out);
  auto model = lcbm::load_checkpoint(out / "checkpoints" / ("provider_" + std::to_string(provider)));
  std::vector<int> full_prefix = {corpus::Vocabulary::kBos};
  full_prefix.insert(full_prefix.end(), prefix.begin(), prefix.end());
  if (static_cast<int>(full_prefix.size()) > model.hp.context)
    full_prefix.erase(full_prefix.begin(), full_prefix.end() - model.hp.context);
  auto dist = lcbm::forward_next_distribution(model, full_prefix);
  std::vector<std::pair<double, int>> ranked;
  for (int tok = corpus::Vocabulary::kNumSpecials; tok < static_cast<int>(dist.size()); ++tok)
    ranked.emplace_back(dist[tok], tok);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  json top = json::array();
  for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i)
    top.push_back(json{{"token", ranked[i].second},
                       {"action", vocab.action(ranked[i].second)},
                       {"probability", ranked[i].first}});
  return json{{"provider", provider}, {"stratum", {complaint, severity}}, {"top_actions", top}};
}

}  // namespace dcbpl::pipeline
