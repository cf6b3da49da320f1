// grpolab: train, verify, sweep and evaluate toy GRPO policies.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grpolab/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = grpolab::cli;
  CLI::App app{"Desk-scale GRPO lab with bilateral context conditioning and reward-confidence correction"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "run one training job");
  train->add_option("--config", config, "run configuration (JSON)")->required();
  train->add_option("--set", sets, "override a config key, e.g. variant.bicc-enabled=true");

  std::string report;
  grpolab::VerifyOptions vopt;
  auto* verify = app.add_subcommand("verify", "run the oracle-backed verification suite");
  verify->add_option("--report", report, "write the report to this file");
  verify->add_flag("--mutate", vopt.mutate_clip, "corrupt the clip rule (the suite must then fail)");
  verify->add_option("--seed", vopt.seed, "verification seed");
  verify->add_option("--trials", vopt.variance_trials, "Monte-Carlo trials for the variance study");

  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "one run per value of a config key");
  sweep->add_option("--config", config, "base run configuration (JSON)")->required();
  sweep->add_option("--axis", axis, "dotted config key, e.g. variant.context-ratio")->required();
  sweep->add_option("--values", values, "comma-separated values")->delimiter(',');
  sweep->add_option("--set", sets, "override a config key for every run");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Pass@k of a saved checkpoint");
  eval->add_option("--checkpoint", checkpoint, "parameter file")->required();
  eval->add_option("--config", config, "run configuration providing env, seed and eval settings");
  eval->add_option("--set", sets, "override a config key");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kConfigError;
  }

  if (*train) return cli::cmd_train(config, sets, std::cout, std::cerr);
  if (*verify) return cli::cmd_verify(report, vopt, std::cout, std::cerr);
  if (*sweep) return cli::cmd_sweep(config, axis, values, sets, std::cout, std::cerr);
  if (*eval) return cli::cmd_eval(checkpoint, config, sets, std::cout, std::cerr);
  return cli::kConfigError;
}
