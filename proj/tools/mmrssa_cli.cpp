// Command-line front end: mmrssa <command> --config <file> [overrides].

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mmrssa/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal robust safe-set experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> solver;
  std::optional<double> eps_f;
  unsigned threads = 0;

  const char* descriptions[] = {
      "safe control at one state",
      "sampled feasibility certificate for a safety index",
      "CMA-ES search for safety-index parameters",
      "closed-loop rollouts under the safe controller",
      "multi-modal vs single-Gaussian feasible control sets",
  };
  const auto& names = mmrssa::command_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (created if missing)");
    sub->add_option("--seed", seed, "base seed for all randomness");
    sub->add_option("--solver", solver, "additive or multiplicative");
    sub->add_option("--eps-f", eps_f, "total failure budget in (0,1)");
    sub->add_option("--threads", threads, "worker cap, 0 for hardware parallelism");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mmrssa::kExitConfig;
  }

  std::string command;
  for (const auto* sub : app.get_subcommands()) command = sub->get_name();
  mmrssa::Overrides ov{seed, solver, eps_f, threads};
  return mmrssa::run_command(command, config_path, out_dir, ov, std::cout, std::cerr);
}
