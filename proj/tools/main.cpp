#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "apportion/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"apportion - distributed power apportioning simulator"};
  app.require_subcommand(1);

  std::string scenario_path;

  auto* validate = app.add_subcommand("validate", "check a scenario file");
  validate->add_option("scenario", scenario_path, "scenario JSON file")
      ->required();

  apportion::RunFlags run_flags;
  std::string engine_name = "reference";
  auto* run = app.add_subcommand("run", "run a scenario and write traces");
  run->add_option("scenario", scenario_path, "scenario JSON file")->required();
  run->add_option("--seed", run_flags.seed, "override the scenario seed");
  run->add_option("--rho", run_flags.rho, "override the tolerance");
  run->add_option("--tau-bar", run_flags.tau_bar, "override the delay bound");
  run->add_option("--epoch-cap", run_flags.epoch_cap,
                  "override the per-command epoch cap");
  run->add_option("--out", run_flags.out_dir, "output directory")
      ->envname("APPORTION_OUT");
  run->add_option("--engine", engine_name, "reference|parallel")
      ->check(CLI::IsMember({"reference", "parallel"}));
  run->add_option("--threads", run_flags.threads,
                  "worker threads for the parallel engine (0 = hardware)");

  apportion::OracleFlags oracle_flags;
  auto* oracle =
      app.add_subcommand("oracle", "cross-check a small instance against "
                                   "the centralized oracles");
  oracle->add_option("scenario", scenario_path, "scenario JSON file")
      ->required();
  oracle->add_option("--seed", oracle_flags.seed, "override the scenario seed");
  oracle->add_option("--max-nodes", oracle_flags.max_nodes,
                     "largest instance the oracle will accept");

  CLI11_PARSE(app, argc, argv);

  if (validate->parsed())
    return apportion::cmd_validate(scenario_path, std::cout, std::cerr);
  if (run->parsed()) {
    run_flags.engine = apportion::engine_from_string(engine_name);
    return apportion::cmd_run(scenario_path, run_flags, std::cout, std::cerr);
  }
  return apportion::cmd_oracle(scenario_path, oracle_flags, std::cout,
                               std::cerr);
}
