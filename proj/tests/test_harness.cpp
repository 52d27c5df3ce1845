#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dsbo/harness.hpp"

using namespace dsbo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dsbo_harness_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int count_svgs(const fs::path& dir) {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".svg") ++count;
  }
  return count;
}

ExperimentConfig small_run_config(const fs::path& dir) {
  ExperimentConfig cfg;
  cfg.run.problem.id = "quad";
  cfg.run.problem.n = 2;
  cfg.run.problem.p = 2;
  cfg.run.problem.q = 2;
  cfg.run.problem.deterministic = true;
  cfg.run.topology.kind = TopologySpec::Kind::complete;
  cfg.run.K = 10;
  cfg.run.T = 1;
  cfg.run.schedule = ScheduleKind::manual;
  cfg.run.alpha = 0.1;
  cfg.run.beta = 0.2;
  cfg.run.rounds = 3;
  cfg.run.gamma = 0.25;
  cfg.seeds = {1};
  cfg.out_dir = dir.string();
  return cfg;
}

}  // namespace

TEST_CASE("config text parsing: sections, comments, and error reporting") {
  const std::string text =
      "# leading comment\n"
      "[problem]\n"
      "id = quad   ; trailing comment\n"
      "n = 4\n"
      "\n"
      "[run]\n"
      "K = 100\n";
  const auto kv = parse_config_text(text);
  CHECK(kv.at("problem.id") == "quad");
  CHECK(kv.at("problem.n") == "4");
  CHECK(kv.at("run.K") == "100");
  CHECK(kv.size() == 3);

  auto message_of = [](const std::string& bad) {
    try {
      parse_config_text(bad);
      return std::string("(no error)");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
  };
  CHECK(message_of("[a]\nx = 1\nbroken-line\n").find("line 3") != std::string::npos);
  CHECK(message_of("key = 1\n").find("outside any [section]") != std::string::npos);
  CHECK(message_of("[a\nx = 1\n").find("line 1") != std::string::npos);
  CHECK(message_of("[a]\n= 1\n").find("empty key") != std::string::npos);
  CHECK(message_of("[a]\nx = 1\nx = 2\n").find("duplicate") != std::string::npos);
}

TEST_CASE("experiment config construction rejects unknown keys") {
  std::map<std::string, std::string> kv{{"problem.id", "quad"}, {"run.K", "50"}};
  const ExperimentConfig cfg = ExperimentConfig::from_map(kv);
  CHECK(cfg.run.problem.id == "quad");
  CHECK(cfg.run.K == 50);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1});  // untouched default

  kv.emplace("problem.bogus", "1");
  try {
    ExperimentConfig::from_map(kv);
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("problem.bogus") != std::string::npos);
  }

  CHECK_THROWS_AS(ExperimentConfig::from_map({{"topology.kind", "star"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"run.schedule", "adaptive"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"output.seeds", "a,b"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"run.K", "ten"}}), ConfigError);
}

TEST_CASE("config echo is a canonical fixed point under reparsing") {
  ExperimentConfig cfg;
  cfg.run.problem.id = "logreg";
  cfg.run.problem.n = 8;
  cfg.run.problem.p = 20;
  cfg.run.K = 3000;
  cfg.run.T = 2;
  cfg.run.b0 = 1.0;
  cfg.run.gamma = 0.07;
  cfg.run.topology.self_weight = 0.35;
  cfg.seeds = {1, 2, 3};
  cfg.out_dir = "echo_dir";
  cfg.emit_plots = false;

  const std::string once = cfg.echo();
  const ExperimentConfig reparsed = ExperimentConfig::from_map(parse_config_text(once));
  CHECK(reparsed.echo() == once);
  CHECK(reparsed.run.K == 3000);
  CHECK(reparsed.run.gamma.has_value());
  CHECK(*reparsed.run.gamma == 0.07);
  CHECK(reparsed.seeds == cfg.seeds);
  CHECK(reparsed.emit_plots == false);
}

TEST_CASE("output directory resolution prefers explicit, then environment") {
  ExperimentConfig cfg;
  cfg.out_dir = "explicit_dir";
  ::setenv("DSBO_OUT_DIR", "env_dir", 1);
  CHECK(cfg.resolved_out_dir() == fs::path("explicit_dir"));
  cfg.out_dir.clear();
  CHECK(cfg.resolved_out_dir() == fs::path("env_dir"));
  ::unsetenv("DSBO_OUT_DIR");
  CHECK(cfg.resolved_out_dir() == fs::path("out"));
}

TEST_CASE("trace files round-trip bitwise, empty cells for absent metrics") {
  CHECK(trace_csv_header() ==
        "k,stationarity,surrogate,consensus_x,consensus_y,inner_residual,samples_cum,"
        "comm_scalars_cum,upper_loss");

  std::vector<TraceRecord> trace(3);
  trace[0].k = 0;
  trace[0].stationarity = 1.2345678901234567e-3;
  trace[0].surrogate = 0.25;
  trace[0].consensus_x = 1e-17;
  trace[0].consensus_y = 0.0;
  trace[0].inner_residual = 7.0 / 3.0;
  trace[0].samples_cum = 42;
  trace[0].comm_scalars_cum = 99;
  trace[0].upper_loss = -1.5;
  trace[1].k = 5;  // all optionals absent
  trace[1].surrogate = 1e300;
  trace[2].k = 10;
  trace[2].stationarity = 0.1 + 0.2;  // not a round decimal

  const fs::path dir = fresh_dir("trace_roundtrip");
  const fs::path file = dir / "trace.csv";
  write_trace_csv(file, trace);
  const std::vector<TraceRecord> back = read_trace_csv(file);
  REQUIRE(back.size() == trace.size());
  for (std::size_t j = 0; j < trace.size(); ++j) {
    CHECK(back[j].k == trace[j].k);
    CHECK(back[j].stationarity == trace[j].stationarity);
    CHECK(back[j].surrogate == trace[j].surrogate);
    CHECK(back[j].consensus_x == trace[j].consensus_x);
    CHECK(back[j].consensus_y == trace[j].consensus_y);
    CHECK(back[j].inner_residual == trace[j].inner_residual);
    CHECK(back[j].samples_cum == trace[j].samples_cum);
    CHECK(back[j].comm_scalars_cum == trace[j].comm_scalars_cum);
    CHECK(back[j].upper_loss == trace[j].upper_loss);
  }

  const std::string raw = slurp(file);
  CHECK(raw.find("\n5,,") != std::string::npos);   // absent stationarity: empty cell
  CHECK(raw.find(",0,0,,") != std::string::npos);  // absent inner residual: empty cell

  const fs::path bad = dir / "bad.csv";
  std::ofstream(bad) << "k,wrong,header\n1,2,3\n";
  CHECK_THROWS_AS(read_trace_csv(bad), std::runtime_error);
  CHECK_THROWS_AS(read_trace_csv(dir / "missing.csv"), std::runtime_error);
}

TEST_CASE("svg plots carry per-series point-count markers") {
  const fs::path dir = fresh_dir("svg_plot");
  PlotSeries series;
  series.label = "test series";
  for (int j = 0; j <= 10; ++j) {
    series.x.push_back(j);
    series.y.push_back(1.0 + j * j);
  }
  const fs::path file = dir / "plot.svg";
  write_svg_plot(file, "title", "x", "y", {series}, false, false, "note");
  const std::string svg = slurp(file);
  CHECK(svg.find("<!-- series \"test series\" n=11 -->") != std::string::npos);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("note") != std::string::npos);

  // Log-scaled axes drop non-positive points from the drawn series.
  PlotSeries mixed;
  mixed.label = "mixed";
  mixed.x = {1.0, 2.0, 3.0, 4.0};
  mixed.y = {0.5, -1.0, 0.0, 2.0};
  const fs::path logfile = dir / "log.svg";
  write_svg_plot(logfile, "t", "x", "y", {mixed}, false, true);
  CHECK(slurp(logfile).find("<!-- series \"mixed\" n=2 -->") != std::string::npos);
}

TEST_CASE("full run driver writes traces, echo, summary, and plots") {
  const fs::path dir = fresh_dir("cli_run");
  const ExperimentConfig cfg = small_run_config(dir);
  REQUIRE(cli_run(cfg) == 0);

  CHECK(fs::exists(dir / "config_echo.ini"));
  const std::vector<TraceRecord> trace = read_trace_csv(dir / "trace_seed1.csv");
  CHECK(trace.size() == 11);  // K iterates plus the terminal record
  // Ledger columns are cumulative at measurement time: record k already
  // includes step k's inner and estimation passes. Per outer iteration each
  // agent draws T inner, 2(N+1) estimation, and 2 assembly samples.
  const std::uint64_t per_iter = 2 * (1 + 2 * (3 + 1) + 2);
  CHECK(trace.front().samples_cum == per_iter);
  CHECK(trace.back().samples_cum == 10 * per_iter);
  CHECK(count_svgs(dir) > 0);

  // The summary is recomputed from the written trace files.
  const std::string summary = slurp(dir / "summary.csv");
  std::stringstream ss(summary);
  std::string header, row;
  REQUIRE(std::getline(ss, header));
  REQUIRE(std::getline(ss, row));
  CHECK(header.find("seed,records,min_stationarity") == 0);
  CHECK(row.find("1,11,") == 0);
  CHECK(row.find(std::to_string(trace.back().samples_cum)) != std::string::npos);
  CHECK(row.find(std::to_string(trace.back().comm_scalars_cum)) != std::string::npos);

  // Re-running the identical configuration reproduces the trace byte-for-byte.
  const fs::path dir2 = fresh_dir("cli_run_repeat");
  ExperimentConfig again = cfg;
  again.out_dir = dir2.string();
  REQUIRE(cli_run(again) == 0);
  CHECK(slurp(dir2 / "trace_seed1.csv") == slurp(dir / "trace_seed1.csv"));

  // Plot emission is optional.
  const fs::path dir3 = fresh_dir("cli_run_noplots");
  ExperimentConfig quiet = cfg;
  quiet.out_dir = dir3.string();
  quiet.emit_plots = false;
  REQUIRE(cli_run(quiet) == 0);
  CHECK(count_svgs(dir3) == 0);
}

TEST_CASE("parallel and serial seed execution write identical traces") {
  ExperimentConfig base;
  base.run.problem.id = "quad";
  base.run.problem.n = 4;
  base.run.problem.p = 2;
  base.run.problem.q = 2;
  base.run.topology.kind = TopologySpec::Kind::ring;
  base.run.K = 30;
  base.run.schedule = ScheduleKind::manual;
  base.run.alpha = 0.1;
  base.run.beta = 0.2;
  base.run.rounds = 4;
  base.run.gamma = 0.2;
  base.seeds = {1, 2, 3};
  base.emit_plots = false;

  const fs::path par_dir = fresh_dir("cli_run_parallel");
  ExperimentConfig par = base;
  par.out_dir = par_dir.string();
  par.parallel_seeds = true;
  REQUIRE(cli_run(par) == 0);

  const fs::path ser_dir = fresh_dir("cli_run_serial");
  ExperimentConfig ser = base;
  ser.out_dir = ser_dir.string();
  ser.parallel_seeds = false;
  REQUIRE(cli_run(ser) == 0);

  for (const std::uint64_t seed : base.seeds) {
    const std::string name = "trace_seed" + std::to_string(seed) + ".csv";
    CHECK(slurp(par_dir / name) == slurp(ser_dir / name));
  }
}

TEST_CASE("driver exit codes: 1 for bad configs, 2 for divergence") {
  const fs::path dir = fresh_dir("cli_exit_codes");

  ExperimentConfig bad = small_run_config(dir / "bad");
  bad.run.alpha = 1.5;
  CHECK(cli_run(bad) == 1);

  ExperimentConfig blowup = small_run_config(dir / "blowup");
  blowup.run.gamma = 5.0;
  blowup.run.K = 50;
  blowup.run.rounds = 400;
  CHECK(cli_run(blowup) == 2);

  ExperimentConfig sweep = small_run_config(dir / "sweep");
  sweep.sweep_k = {100};
  CHECK(cli_rate_sweep(sweep) == 1);
}
