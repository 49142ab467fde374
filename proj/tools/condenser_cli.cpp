// Batch front end: solve | capacity | thinness | sweep | verify, each
// reading a JSON config and writing summary.json plus CSV data files.

#include "condenser/run.hpp"

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <string>

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir = "out";
  long seed = 0;
  double tol = 0.0;
  long max_iters = 0;
  CLI::App* sub = nullptr;
};

void attach(CLI::App& app, CommonFlags& flags, const std::string& name, const std::string& desc) {
  CLI::App* sub = app.add_subcommand(name, desc);
  sub->add_option("--config", flags.config_path, "Path to the JSON run configuration")
      ->required();
  sub->add_option("--out", flags.out_dir, "Output directory (created if absent)");
  sub->add_option("--seed", flags.seed, "Override solver.seed");
  sub->add_option("--tol", flags.tol, "Override solver.tol");
  sub->add_option("--max-iters", flags.max_iters, "Override solver.max_iters");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimum-energy problems on discretized condensers"};
  app.require_subcommand(1);

  CommonFlags solve_f, capacity_f, thinness_f, sweep_f, verify_f;
  attach(app, solve_f, "solve", "Minimize the weighted energy and verify the minimizer");
  attach(app, capacity_f, "capacity", "Capacity and equilibrium measure of a single plate");
  attach(app, thinness_f, "thinness", "Shell capacities and thinness at infinity");
  attach(app, sweep_f, "sweep", "Balayage of point masses onto a plate");
  attach(app, verify_f, "verify", "Check the minimizer conditions on a measure CSV");

  CLI11_PARSE(app, argc, argv);

  CommonFlags* flags = nullptr;
  int (*pipeline)(const condenser::RunConfig&, const std::string&) = nullptr;
  if (app.got_subcommand("solve")) {
    flags = &solve_f;
    pipeline = condenser::run_solve;
  } else if (app.got_subcommand("capacity")) {
    flags = &capacity_f;
    pipeline = condenser::run_capacity;
  } else if (app.got_subcommand("thinness")) {
    flags = &thinness_f;
    pipeline = condenser::run_thinness;
  } else if (app.got_subcommand("sweep")) {
    flags = &sweep_f;
    pipeline = condenser::run_sweep;
  } else {
    flags = &verify_f;
    pipeline = condenser::run_verify;
  }
  CLI::App* sub = app.get_subcommands().front();

  try {
    condenser::RunConfig cfg = condenser::load_config(flags->config_path);
    if (sub->count("--seed")) cfg.solver.seed = static_cast<unsigned>(flags->seed);
    if (sub->count("--tol")) cfg.solver.tol = flags->tol;
    if (sub->count("--max-iters")) cfg.solver.max_iters = static_cast<int>(flags->max_iters);
    return pipeline(cfg, flags->out_dir);
  } catch (const condenser::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const condenser::InfeasibleProblemError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
