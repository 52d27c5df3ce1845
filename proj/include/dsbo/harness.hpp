// Experiment harness: flat sectioned key=value config files, the CLI
// subcommand drivers, trace/summary CSV IO, and self-contained SVG plots.
// Exit-code contract of every driver: 0 success, 1 configuration or usage
// error, 2 divergence.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dsbo/madsbo.hpp"

namespace dsbo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parses "[section]" headers and "key = value" lines; '#' and ';' start
// comments. Returns a flat map keyed "section.key". Throws ConfigError on
// malformed lines or duplicate keys.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

struct ExperimentConfig {
  RunConfig run;
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir;  // empty: resolve from env DSBO_OUT_DIR, else "out"
  bool emit_plots = true;
  bool parallel_seeds = true;
  std::vector<long> sweep_k{250, 1000, 4000};
  std::vector<double> sweep_gammas;  // empty: grid around the default gamma

  // Builds from a parsed map; rejects unknown keys. Values not present keep
  // their defaults.
  static ExperimentConfig from_map(const std::map<std::string, std::string>& kv);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  // Final output directory (explicit value, else environment, else "out").
  std::filesystem::path resolved_out_dir() const;
  // Canonical serialization of the effective configuration.
  std::string echo() const;
};

// --- trace CSV -------------------------------------------------------------

// Exact column set of a trace file; unavailable metrics are empty cells.
std::string trace_csv_header();
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> read_trace_csv(const std::filesystem::path& path);

// --- SVG plots ---------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal self-contained line plot; log-scaled axes drop non-positive points.
// Each series carries an "n=<points>" marker comment.
void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series, bool log_x, bool log_y,
                    const std::string& annotation = "");

// --- subcommand drivers ------------------------------------------------

// Full experiment: one run per seed (parallel unless disabled), per-seed
// trace CSVs, a summary recomputed from the written traces, config echo, and
// per-metric plots.
int cli_run(const ExperimentConfig& cfg);
// Convergence-rate sweep over cfg.sweep_k with the configured seeds; writes
// sweep.csv and a log-log plot annotated with the fitted slopes.
int cli_rate_sweep(const ExperimentConfig& cfg);
// Runs the full algorithm and the locally-solved naive baseline under the
// same schedule and topology; reports terminal stationarity and
// communication for both.
int cli_baseline_compare(const ExperimentConfig& cfg);
// Deterministic estimator vs closed form at a consensus probe point.
int cli_hypergrad_check(const ExperimentConfig& cfg);
// Stability probe of the tracked solver across a stepsize grid.
int cli_gamma_sweep(const ExperimentConfig& cfg);

}  // namespace dsbo
