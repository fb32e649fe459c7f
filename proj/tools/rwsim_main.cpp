#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rws/io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulator for nonlocal phase-field and diffusion dynamics on finite random "
               "walk spaces"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  double tau_override = 0.0;
  double T_override = 0.0;
  std::string scheme_override;
  int stride_override = 0;

  auto* validate = app.add_subcommand("validate", "Check a run configuration and report "
                                                  "structure, gaps and the mass window");
  validate->add_option("--config", config_path, "Run configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Integrate the configured dynamics and write the "
                                        "trajectory");
  run->add_option("--config", config_path, "Run configuration or manifest (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--output-dir", output_dir, "Overrides output_dir from the config");
  run->add_option("--tau", tau_override, "Overrides the time step");
  run->add_option("--T", T_override, "Overrides the horizon");
  run->add_option("--scheme", scheme_override, "Overrides the scheme (imex_split or picard)");
  run->add_option("--stride", stride_override, "Overrides the snapshot stride");

  std::string analyze_dir;
  int window = 50;
  double tol = 0.0;
  auto* analyze = app.add_subcommand("analyze", "Audit a written trajectory and report "
                                                "steady-state findings");
  analyze->add_option("dir", analyze_dir, "Trajectory directory written by run")
      ->required()
      ->check(CLI::ExistingDirectory);
  analyze->add_option("--window", window, "Trailing steps for the steadiness test");
  analyze->add_option("--tol", tol, "Steadiness threshold (0 selects the default)");

  std::vector<std::string> sweep_configs;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run several configurations as child processes");
  sweep->add_option("configs", sweep_configs, "Run configuration files")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return rws::io::cmd_validate(config_path, std::cout);
    if (run->parsed()) {
      auto cfg = rws::io::load_run_config(config_path);
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      if (tau_override > 0.0) cfg.tau = tau_override;
      if (T_override > 0.0) cfg.T = T_override;
      if (!scheme_override.empty()) cfg.scheme = scheme_override;
      if (stride_override > 0) cfg.snapshot_stride = stride_override;
      return rws::io::cmd_run(cfg, std::filesystem::path(config_path).parent_path(), std::cout);
    }
    if (analyze->parsed()) return rws::io::cmd_analyze(analyze_dir, window, tol, std::cout);
    if (sweep->parsed()) {
      std::vector<std::filesystem::path> files(sweep_configs.begin(), sweep_configs.end());
      return rws::io::cmd_sweep(files, jobs, argv[0], std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
