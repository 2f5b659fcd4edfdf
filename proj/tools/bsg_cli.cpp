#include <CLI11.hpp>

#include "bsg/cli.hpp"

int main(int argc, char** argv) {
  bsg::RunConfig cfg;
  int steps = 0;
  CLI::App app{"Leader-follower LQ game solver"};
  app.add_option("--scenario", cfg.scenario, "scenario JSON file")->required();
  app.add_option("--command", cfg.command, "pipeline to run")
      ->required()
      ->check(CLI::IsMember(bsg::cli_commands()));
  app.add_option("--out", cfg.out, "output directory")->capture_default_str();
  auto* steps_opt = app.add_option("--steps", steps, "time steps (overrides the scenario)")->check(CLI::PositiveNumber);
  app.add_option("--paths", cfg.paths, "Monte Carlo paths")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--seed", cfg.seed, "Monte Carlo seed")->capture_default_str();
  app.add_option("--tolerance", cfg.tolerance, "tolerance profile")
      ->capture_default_str()
      ->check(CLI::IsMember({"strict", "desk"}));
  app.add_option("--keep", cfg.keep, "trajectories written to the path CSVs")->capture_default_str();
  app.add_option("--perturbation-paths", cfg.perturbation_paths, "paths per directional derivative")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (*steps_opt) cfg.steps = steps;
  return bsg::run(cfg);
}
