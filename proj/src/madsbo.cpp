#include "dsbo/madsbo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dsbo {

namespace {

void require(bool ok, const std::string& invariant) {
  if (!ok) throw std::invalid_argument("config invariant violated: " + invariant);
}

TraceRecord make_record(long k, const Problem& prob, const AgentField& x, const AgentField& y,
                        const AgentField& r, const OracleCounters& counters, const CommLedger& comm) {
  TraceRecord rec;
  rec.k = k;
  const Vec xbar = x.average();
  const Vec ybar = y.average();
  rec.surrogate = r.average().squaredNorm();
  rec.consensus_x = x.consensus_sq();
  rec.consensus_y = y.consensus_sq();
  rec.samples_cum = counters.samples_drawn;
  rec.comm_scalars_cum = comm.scalars;
  if (prob.closed_form != nullptr) {
    rec.stationarity = ground_truth_hypergradient(*prob.closed_form, xbar).squaredNorm();
    rec.inner_residual = (ybar - prob.closed_form->y_star(xbar)).squaredNorm();
  }
  rec.upper_loss = prob.upper_loss(xbar, ybar);
  return rec;
}

double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double lx = std::log(xs[j]);
    const double ly = std::log(ys[j]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

MixingMatrix build_topology(const TopologySpec& spec, int agents) {
  switch (spec.kind) {
    case TopologySpec::Kind::ring:
      if (agents == 1) return build_complete(1);  // degenerate single-agent network
      return build_ring(agents, spec.self_weight);
    case TopologySpec::Kind::complete:
      return build_complete(agents);
    case TopologySpec::Kind::custom: {
      MixingMatrix w = load_mixing_csv(spec.csv_path);
      if (w.agents() != agents) {
        throw std::invalid_argument("custom topology has " + std::to_string(w.agents()) +
                                    " agents, config says " + std::to_string(agents));
      }
      return w;
    }
  }
  throw std::logic_error("unreachable topology kind");
}

void RunConfig::validate() const {
  require(K >= 1, "outer iteration count K must be >= 1");
  require(T >= 1, "inner step count T must be >= 1");
  require(problem.n >= 1, "agent count must be >= 1");
  require(problem.batch >= 1, "oracle batch size must be >= 1");
  if (schedule == ScheduleKind::manual) {
    require(alpha > 0.0 && alpha <= 1.0, "manual alpha must lie in (0, 1]");
    require(beta > 0.0 && beta <= 1.0, "manual beta must lie in (0, 1]");
    require(rounds >= 1, "manual solver round count N must be >= 1");
  } else {
    require(a0 > 0.0, "theorem coefficient a0 must be positive");
    require(b0 > 0.0, "theorem coefficient b0 must be positive");
    require(c0 > 0.0, "theorem coefficient c0 must be positive");
  }
  if (gamma) require(*gamma > 0.0, "solver stepsize gamma must be positive");
  if (topology.kind == TopologySpec::Kind::ring) {
    require(topology.self_weight > 0.0 && topology.self_weight < 1.0,
            "ring self-weight must lie in (0, 1)");
  }
}

double default_solver_gamma(const Problem& prob, const MixingMatrix& w) {
  const double lam = 1.0 + w.lambda_min();
  return std::min(0.5, 0.25 * lam * lam) / prob.constants.L_g1;
}

ResolvedSchedule resolve_schedule(const RunConfig& cfg, const Problem& prob,
                                  const MixingMatrix& w) {
  ResolvedSchedule s;
  if (cfg.schedule == ScheduleKind::theorem) {
    const double k_eff = static_cast<double>(std::max<long>(cfg.K, 1));
    s.alpha = cfg.a0 / std::sqrt(k_eff);
    s.beta = cfg.b0 / std::sqrt(k_eff);
    s.rounds = std::max(1, static_cast<int>(std::ceil(cfg.c0 * std::log(k_eff))));
  } else {
    s.alpha = cfg.alpha;
    s.beta = cfg.beta;
    s.rounds = cfg.rounds;
  }
  s.gamma = cfg.gamma.value_or(default_solver_gamma(prob, w));
  require(s.alpha > 0.0 && s.alpha <= 1.0, "resolved alpha must lie in (0, 1]");
  require(s.beta > 0.0 && s.beta <= 1.0, "resolved beta must lie in (0, 1]");
  require(s.gamma > 0.0, "resolved gamma must be positive");
  require(s.rounds >= 1, "resolved solver round count must be >= 1");
  return s;
}

void inner_loop(const MixingMatrix& w, BilevelOracle& oracle, const AgentField& x, AgentField& y,
                double beta, int steps, std::uint64_t outer_k, CommLedger* comm) {
  const int n = oracle.agents();
  for (int t = 0; t < steps; ++t) {
    AgentField grads = AgentField::zero(oracle.dim_y(), n);
    for (int i = 0; i < n; ++i) {
      const Sample s = oracle.draw(SampleRole::inner_g, i, outer_k, static_cast<std::uint64_t>(t));
      grads.m.col(i) = oracle.grad_gy(i, x.m.col(i), y.m.col(i), s);
    }
    y = mix(w, y, comm);
    y.m -= beta * grads.m;
    if (!y.m.allFinite()) {
      throw DivergedError(t, "inner loop", "inner loop: non-finite lower iterate at step " +
                                               std::to_string(t));
    }
  }
}

double madsbo_step(const MixingMatrix& w, Problem& prob, OuterState& state,
                   const ResolvedSchedule& sched, int inner_steps, CommLedger& comm,
                   TraceRecord* record) {
  const auto k = static_cast<std::uint64_t>(state.k);
  double tracking_gap = 0.0;
  try {
    inner_loop(w, *prob.oracle, state.x, state.y, sched.beta, inner_steps, k, &comm);
    const HypergradEstimate est = estimate_hypergradient(w, *prob.oracle, state.x, state.y,
                                                         sched.gamma, sched.rounds, k, &comm);
    tracking_gap = est.solver_trace.max_tracking_gap;
    if (record != nullptr) {
      *record = make_record(state.k, prob, state.x, state.y, state.r, prob.oracle->counters(), comm);
    }
    // Mixed descent with the PRE-update moving average, then the refresh.
    const AgentField mixed = mix(w, state.x, &comm);
    state.x.m = mixed.m - sched.alpha * state.r.m;
    state.r.m = (1.0 - sched.alpha) * state.r.m + sched.alpha * est.u.m;
  } catch (DivergedError& e) {
    e.outer_k = state.k;
    throw;
  }
  if (!state.x.m.allFinite()) {
    DivergedError e(0, "outer update", "outer update: non-finite upper iterate after iteration " +
                                           std::to_string(state.k));
    e.outer_k = state.k;
    throw e;
  }
  ++state.k;
  return tracking_gap;
}

long trace_stride(long outer_iterations) {
  constexpr long kMaxRecords = 10000;
  if (outer_iterations <= kMaxRecords) return 1;
  return (outer_iterations + kMaxRecords - 1) / kMaxRecords;
}

RunResult madsbo_run(const RunConfig& cfg, Problem& prob) {
  if (cfg.K < 0) throw std::invalid_argument("config invariant violated: K must be >= 0");
  prob.oracle->reset_counters();
  RunResult out;
  const MixingMatrix w = build_topology(cfg.topology, prob.oracle->agents());
  out.schedule = resolve_schedule(cfg, prob, w);
  OuterState state = OuterState::init(prob.oracle->dim_x(), prob.oracle->dim_y(),
                                      prob.oracle->agents());
  const long stride = trace_stride(cfg.K);
  for (long k = 0; k < cfg.K; ++k) {
    TraceRecord rec;
    const bool keep = (k % stride == 0);
    const double gap = madsbo_step(w, prob, state, out.schedule, cfg.T, out.comm, keep ? &rec : nullptr);
    out.max_tracking_gap = std::max(out.max_tracking_gap, gap);
    if (keep) out.trace.push_back(rec);
  }
  out.trace.push_back(
      make_record(cfg.K, prob, state.x, state.y, state.r, prob.oracle->counters(), out.comm));
  out.counters = prob.oracle->counters();
  out.xbar = state.x.average();
  out.state = std::move(state);
  return out;
}

RateSweepResult rate_sweep(const RunConfig& base, std::span<const long> k_values,
                           std::span<const std::uint64_t> seeds) {
  if (k_values.size() < 3) {
    throw std::invalid_argument("rate sweep needs at least 3 outer-iteration counts");
  }
  for (std::size_t j = 1; j < k_values.size(); ++j) {
    if (k_values[j] <= k_values[j - 1]) {
      throw std::invalid_argument("rate sweep outer-iteration counts must be strictly increasing");
    }
  }
  if (seeds.empty()) throw std::invalid_argument("rate sweep needs at least one seed");

  RateSweepResult out;
  std::vector<double> ks, mins, tails;
  for (const long k_outer : k_values) {
    RunConfig cfg = base;
    cfg.K = k_outer;
    std::vector<double> stat_sum;   // per record index, summed over seeds
    std::vector<double> cons_sum;
    std::size_t records = 0;
    for (const std::uint64_t seed : seeds) {
      cfg.seed = seed;
      Problem prob = make_problem(cfg.problem, seed);
      if (prob.closed_form == nullptr) {
        throw std::invalid_argument("rate sweep requires a problem with closed forms");
      }
      const RunResult res = madsbo_run(cfg, prob);
      if (stat_sum.empty()) {
        records = res.trace.size();
        stat_sum.assign(records, 0.0);
        cons_sum.assign(records, 0.0);
      }
      for (std::size_t j = 0; j < records; ++j) {
        stat_sum[j] += res.trace[j].stationarity.value();
        cons_sum[j] += res.trace[j].consensus_x;
      }
    }
    const double inv = 1.0 / static_cast<double>(seeds.size());
    double min_stat = stat_sum[0] * inv;
    for (std::size_t j = 1; j < records; ++j) min_stat = std::min(min_stat, stat_sum[j] * inv);
    // Mean consensus over the last quarter of the trace.
    const std::size_t tail_from = (records * 3) / 4;
    double tail = 0.0;
    for (std::size_t j = tail_from; j < records; ++j) tail += cons_sum[j] * inv;
    tail /= static_cast<double>(records - tail_from);

    out.rows.push_back(RateSweepRow{k_outer, min_stat, tail});
    ks.push_back(static_cast<double>(k_outer));
    mins.push_back(min_stat);
    tails.push_back(tail);
  }
  out.stationarity_slope = fit_loglog_slope(ks, mins);
  out.consensus_slope = fit_loglog_slope(ks, tails);
  return out;
}

}  // namespace dsbo
