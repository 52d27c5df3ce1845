// Decentralized solver for the network-aggregated linear system
// (sum_i H_i) z = sum_i b_i using only per-agent matrix-vector products and
// gossip averaging. Each round mixes the iterate and a gradient-tracking
// direction, so every agent converges to the solution of the *global* system
// while touching only its own operator — no agent ever forms a matrix.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dsbo/netgraph.hpp"

namespace dsbo {

// Raised when an iterate leaves the trust region or turns non-finite.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(int round, const std::string& phase, const std::string& what)
      : std::runtime_error(what), round_(round), phase_(phase) {}
  int round() const { return round_; }              // solver round (or inner step) index
  const std::string& phase() const { return phase_; }
  std::optional<long> outer_k;                      // filled by the outer driver on rethrow

 private:
  int round_;
  std::string phase_;
};

// Per-agent linear operator and right-hand side, indexed by round. For round
// index t, hess_vec(i, t, v) applies agent i's sampled operator H_{i,t} to v
// and rhs(i, t) returns its sampled right-hand side b_{i,t}. For a fixed
// (i, t) the operator must act linearly in v in expectation, with spectrum of
// the expected operator inside [mu, L].
struct QuadOracle {
  std::function<Vec(int i, int t, const Vec& v)> hess_vec;
  std::function<Vec(int i, int t)> rhs;
};

// Diagnostics of one solver run.
struct HigpTrace {
  std::vector<Vec> zbar;             // network-average iterate after 0..N rounds
  std::vector<double> tracking_gap;  // || mean(d) - mean(s) || after each round
  double max_tracking_gap = 0.0;
};

// Iterate magnitude (per-agent norm) beyond which the run counts as diverged.
inline constexpr double kDivergenceNorm = 1e12;

// Runs N rounds of the tracked solver over topology w. dim is the dimension
// of z. Consumes rhs(i, 0) once at initialization and, per round t = 0..N-1,
// one hess_vec(i, t+1, .) and one rhs(i, t+1) per agent; performs two mixes
// per round (iterate and tracking direction). Throws DivergedError on
// non-finite values or per-agent norms above kDivergenceNorm.
AgentField higp_run(const MixingMatrix& w, const QuadOracle& oracle, int dim, double gamma, int rounds,
                    CommLedger* comm = nullptr, HigpTrace* trace = nullptr);

// Dense direct solve of (sum_i H_i / n) z = (sum_i b_i / n); reference for
// tests and ground-truth paths only, never called by the algorithms. Throws
// std::runtime_error if the averaged operator is singular or has condition
// number above 1e12.
Vec higp_solve_reference(const std::vector<Mat>& h, const std::vector<Vec>& b);

}  // namespace dsbo
