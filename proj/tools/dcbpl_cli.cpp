#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcbpl/pipeline.hpp"

namespace pipeline = dcbpl::pipeline;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "run configuration JSON");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "override run_seed from the config");
}

pipeline::RunConfig load_config(const CommonOpts& opts) {
  auto cfg = pipeline::load_run_config(opts.config_path);
  if (opts.seed) cfg.run_seed = *opts.seed;
  return cfg;
}

std::pair<int, int> parse_stratum(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos)
    throw dcbpl::UsageError("--stratum expects complaint,severity (e.g. 0,1)");
  return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep causal behavioral policy learning pipeline"};
  app.require_subcommand(1);

  CommonOpts simulate_o, prepare_o, pretrain_o, finetune_o, estimate_o, rule_o, evaluate_o,
      dcbpl_o, query_o;
  int finetune_provider = 0;
  std::string estimator = "tmle";
  int crossfit = 0;
  std::string rule_method;
  std::string report = "all";
  std::string stratum_arg;
  std::string prefix_arg;
  int query_k = 5;

  add_common(app.add_subcommand("simulate", "draw a synthetic cohort"), simulate_o);
  add_common(app.add_subcommand("prepare", "build vocabulary, pairs, and splits"), prepare_o);
  add_common(app.add_subcommand("pretrain", "train the population policy model"), pretrain_o);
  auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune one provider's policy model");
  add_common(finetune_cmd, finetune_o);
  finetune_cmd->add_option("--provider", finetune_provider, "provider id")->required();
  auto* estimate_cmd = app.add_subcommand("estimate", "estimate the value of the learned rule");
  add_common(estimate_cmd, estimate_o);
  estimate_cmd->add_option("--estimator", estimator, "aipw|tmle|plugin")
      ->check(CLI::IsMember({"aipw", "tmle", "plugin"}));
  estimate_cmd->add_option("--crossfit", crossfit, "number of cross-fitting folds (0 = none)");
  auto* rule_cmd = app.add_subcommand("rule", "learn the optimal provider rule");
  add_common(rule_cmd, rule_o);
  rule_cmd->add_option("--method", rule_method, "pseudo-blip|cv-select")
      ->check(CLI::IsMember({"pseudo-blip", "cv-select"}));
  auto* evaluate_cmd = app.add_subcommand("evaluate", "write behavioral metric reports");
  add_common(evaluate_cmd, evaluate_o);
  evaluate_cmd->add_option("--report", report, "topk|separation|qacc|all")
      ->check(CLI::IsMember({"topk", "separation", "qacc", "all"}));
  add_common(app.add_subcommand("dcbpl", "run the full pipeline"), dcbpl_o);
  auto* query_cmd = app.add_subcommand("query", "query the learned optimal policy");
  add_common(query_cmd, query_o, /*config_required=*/false);
  query_cmd->add_option("--stratum", stratum_arg, "complaint,severity")->required();
  query_cmd->add_option("--prefix", prefix_arg, "comma-separated prefix tokens");
  query_cmd->add_option("--k", query_k, "number of actions to return");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand("simulate")) {
      pipeline::stage_simulate(load_config(simulate_o), simulate_o.out_dir);
    } else if (app.got_subcommand("prepare")) {
      pipeline::stage_prepare(load_config(prepare_o), prepare_o.out_dir);
    } else if (app.got_subcommand("pretrain")) {
      pipeline::stage_pretrain(load_config(pretrain_o), pretrain_o.out_dir);
    } else if (app.got_subcommand("finetune")) {
      pipeline::stage_finetune(load_config(finetune_o), finetune_o.out_dir, finetune_provider);
    } else if (app.got_subcommand("estimate")) {
      auto result = pipeline::stage_estimate(load_config(estimate_o), estimate_o.out_dir,
                                             estimator, crossfit);
      std::cout << result.dump(2) << "\n";
    } else if (app.got_subcommand("rule")) {
      auto cfg = load_config(rule_o);
      if (!rule_method.empty()) cfg.rule_method = rule_method;
      auto values = pipeline::stage_rule(cfg, rule_o.out_dir);
      std::cout << values.dump(2) << "\n";
    } else if (app.got_subcommand("evaluate")) {
      pipeline::stage_evaluate(load_config(evaluate_o), evaluate_o.out_dir, report);
    } else if (app.got_subcommand("dcbpl")) {
      auto result = pipeline::run_dcbpl(load_config(dcbpl_o), dcbpl_o.out_dir);
      std::cout << result.dump(2) << "\n";
    } else if (app.got_subcommand("query")) {
      auto [complaint, severity] = parse_stratum(stratum_arg);
      auto result = pipeline::query_optimal_policy(query_o.out_dir, complaint, severity,
                                                   parse_int_list(prefix_arg), query_k);
      std::cout << result.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
