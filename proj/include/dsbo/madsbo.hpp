// Outer driver: moving-average decentralized bilevel optimization. Each outer
// iteration runs T gossip SGD steps on the lower-level variables (warm-started
// across iterations), one distributed hypergradient estimation pass, then the
// mixed x-update with the pre-update moving average and the moving-average
// refresh. Every run carries sample and communication ledgers and emits a
// metrics trace.
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dsbo/hypergrad.hpp"
#include "dsbo/problems.hpp"

namespace dsbo {

enum class ScheduleKind { manual, theorem };

struct TopologySpec {
  enum class Kind { ring, complete, custom };
  Kind kind = Kind::ring;
  double self_weight = 0.4;  // ring diagonal weight
  std::string csv_path;      // custom topology source
};

MixingMatrix build_topology(const TopologySpec& spec, int agents);

struct RunConfig {
  ProblemSpec problem;
  TopologySpec topology;
  long K = 1000;  // outer iterations
  int T = 1;      // inner gossip SGD steps per outer iteration
  ScheduleKind schedule = ScheduleKind::theorem;
  // theorem mode: alpha = a0 / sqrt(K), beta = b0 / sqrt(K), solver rounds
  // N = max(1, ceil(c0 * ln K)).
  double a0 = 1.0;
  double b0 = 1.0;
  double c0 = 2.0;
  // manual mode: the values below are used as-is.
  double alpha = 0.0;
  double beta = 0.0;
  int rounds = 0;  // solver rounds N per estimation pass
  // Solver stepsize; when unset, half the inverse declared lower smoothness.
  std::optional<double> gamma;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument naming the violated invariant. Enforces the
  // config contract (K >= 1); the driver itself also accepts K = 0 and then
  // just reports the initialization.
  void validate() const;
};

struct ResolvedSchedule {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  int rounds = 0;
};

// Default solver stepsize: the tracked solve contracts iff
// gamma < (1 + lambda_min(W))^2 / (2 L_g1) (exact for commuting operators;
// the neutral consensus mode is unreachable from a tracking-consistent
// start). Resolves to half that threshold, capped by the single-agent scale
// 0.5 / L_g1.
double default_solver_gamma(const Problem& prob, const MixingMatrix& w);

// Resolves stepsizes/rounds against the problem's declared constants and the
// topology spectrum (an unset gamma becomes default_solver_gamma) and checks
// 0 < alpha, beta <= 1, gamma > 0, rounds >= 1.
ResolvedSchedule resolve_schedule(const RunConfig& cfg, const Problem& prob,
                                  const MixingMatrix& w);

struct OuterState {
  AgentField x;  // upper iterates, one column per agent
  AgentField y;  // lower iterates, warm-started across outer iterations
  AgentField r;  // moving-average hypergradient surrogates
  long k = 0;

  static OuterState init(int dim_x, int dim_y, int agents) {
    return OuterState{AgentField::zero(dim_x, agents), AgentField::zero(dim_y, agents),
                      AgentField::zero(dim_x, agents), 0};
  }
};

// One row of the metrics trace. Record k is measured with the upper iterates
// and moving average entering step k and the lower iterates after step k's
// inner loop; ledger columns are cumulative at measurement time. Fields
// without ground truth (closed forms) stay unset.
struct TraceRecord {
  long k = 0;
  std::optional<double> stationarity;     // || exact hypergradient at xbar ||^2
  double surrogate = 0.0;                 // || rbar ||^2
  double consensus_x = 0.0;               // || X - xbar 1^T ||_F^2 / n
  double consensus_y = 0.0;
  std::optional<double> inner_residual;   // || ybar - y*(xbar) ||^2
  std::uint64_t samples_cum = 0;
  std::uint64_t comm_scalars_cum = 0;
  std::optional<double> upper_loss;       // reduced objective or validation loss
};

struct RunResult {
  OuterState state;
  Vec xbar;
  std::vector<TraceRecord> trace;
  OracleCounters counters;
  CommLedger comm;
  ResolvedSchedule schedule;
  // Largest || mean(d) - mean(s) || seen across all tracked-solver rounds of
  // the run; the tracking identity holds iff this stays at roundoff scale.
  double max_tracking_gap = 0.0;
};

// T rounds of gossip SGD on the lower variables at fixed upper iterates:
// y <- mix(y) - beta * sampled lower gradient. Samples are keyed by
// (outer_k, inner step).
void inner_loop(const MixingMatrix& w, BilevelOracle& oracle, const AgentField& x, AgentField& y,
                double beta, int steps, std::uint64_t outer_k, CommLedger* comm);

// One outer iteration at index state.k: inner loop, estimation pass, then
// x <- mix(x) - alpha * r with the PRE-update moving average, and
// r <- (1 - alpha) r + alpha u. Fills *record (when non-null) as documented
// on TraceRecord. Returns the estimation pass's max tracking gap. Throws
// DivergedError (with outer_k set) on divergence.
double madsbo_step(const MixingMatrix& w, Problem& prob, OuterState& state,
                   const ResolvedSchedule& sched, int inner_steps, CommLedger& comm,
                   TraceRecord* record);

// Trace cadence: every iterate up to 10^4 outer iterations, then strided so
// at most ~10^4 records are kept. The final iterate is always recorded.
long trace_stride(long outer_iterations);

// Runs K outer iterations from the zero initialization. Resets the oracle's
// counters at entry, so the reported ledgers are per-run.
RunResult madsbo_run(const RunConfig& cfg, Problem& prob);

struct RateSweepRow {
  long K = 0;
  double min_stationarity = 0.0;  // min over k of the seed-averaged stationarity
  double tail_consensus = 0.0;    // seed-averaged mean consensus_x over the last quarter
};

struct RateSweepResult {
  std::vector<RateSweepRow> rows;
  double stationarity_slope = 0.0;  // log-log least-squares slope vs K
  double consensus_slope = 0.0;
};

// Runs the configured problem for each K (>= 3 ascending values) and each
// seed, re-resolving the schedule per K. Requires closed forms (stationarity
// must be measurable).
RateSweepResult rate_sweep(const RunConfig& base, std::span<const long> k_values,
                           std::span<const std::uint64_t> seeds);

}  // namespace dsbo
