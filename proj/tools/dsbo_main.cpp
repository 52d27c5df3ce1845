// Command-line front end for the decentralized bilevel simulator. Every
// subcommand reads an optional config file, applies flag overrides, and exits
// 0 on success, 1 on configuration or usage errors, 2 on divergence.
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsbo/harness.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  bool no_plots = false;
  bool serial = false;
};

void add_common(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--config", flags->config_path, "config file (sectioned key = value)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", flags->out_dir, "output directory (overrides config)");
  cmd->add_option("--seeds", flags->seeds, "comma-separated seed list (overrides config)");
  cmd->add_flag("--no-plots", flags->no_plots, "skip SVG plot emission");
  cmd->add_flag("--serial", flags->serial, "run seeds sequentially");
}

dsbo::ExperimentConfig load(const CommonFlags& flags) {
  dsbo::ExperimentConfig cfg = flags.config_path.empty()
                                   ? dsbo::ExperimentConfig{}
                                   : dsbo::ExperimentConfig::from_file(flags.config_path);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (!flags.seeds.empty()) {
    cfg.seeds.clear();
    std::string tok;
    std::stringstream ss(flags.seeds);
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) cfg.seeds.push_back(std::stoull(tok));
    }
    if (cfg.seeds.empty()) throw dsbo::ConfigError("--seeds: no seeds given");
  }
  if (flags.no_plots) cfg.emit_plots = false;
  if (flags.serial) cfg.parallel_seeds = false;
  if (cfg.run.K < 1) throw dsbo::ConfigError("run.K must be at least 1");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decentralized stochastic bilevel optimization simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, base_flags, check_flags, gamma_flags;
  std::string ks_csv, gammas_csv;

  CLI::App* run_cmd = app.add_subcommand("run", "multi-seed experiment with traces and plots");
  add_common(run_cmd, &run_flags);
  CLI::App* sweep_cmd =
      app.add_subcommand("rate-sweep", "convergence metrics across outer-iteration budgets");
  add_common(sweep_cmd, &sweep_flags);
  sweep_cmd->add_option("--ks", ks_csv, "comma-separated iteration budgets (ascending)");
  CLI::App* base_cmd = app.add_subcommand(
      "baseline-compare", "tracked estimator vs locally-solved naive baseline");
  add_common(base_cmd, &base_flags);
  CLI::App* check_cmd =
      app.add_subcommand("hypergrad-check", "deterministic estimator vs closed form");
  add_common(check_cmd, &check_flags);
  CLI::App* gamma_cmd = app.add_subcommand("gamma-sweep", "solver stability across stepsizes");
  add_common(gamma_cmd, &gamma_flags);
  gamma_cmd->add_option("--gammas", gammas_csv, "comma-separated solver stepsizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits 0; parse failures exit 1
  }

  try {
    if (run_cmd->parsed()) return dsbo::cli_run(load(run_flags));
    if (sweep_cmd->parsed()) {
      dsbo::ExperimentConfig cfg = load(sweep_flags);
      if (!ks_csv.empty()) {
        cfg.sweep_k.clear();
        std::string tok;
        std::stringstream ss(ks_csv);
        while (std::getline(ss, tok, ',')) {
          if (!tok.empty()) cfg.sweep_k.push_back(std::stol(tok));
        }
      }
      return dsbo::cli_rate_sweep(cfg);
    }
    if (base_cmd->parsed()) return dsbo::cli_baseline_compare(load(base_flags));
    if (check_cmd->parsed()) return dsbo::cli_hypergrad_check(load(check_flags));
    if (gamma_cmd->parsed()) {
      dsbo::ExperimentConfig cfg = load(gamma_flags);
      if (!gammas_csv.empty()) {
        cfg.sweep_gammas.clear();
        std::string tok;
        std::stringstream ss(gammas_csv);
        while (std::getline(ss, tok, ',')) {
          if (!tok.empty()) cfg.sweep_gammas.push_back(std::stod(tok));
        }
      }
      return dsbo::cli_gamma_sweep(cfg);
    }
  } catch (const dsbo::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
