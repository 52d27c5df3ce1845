// Distributed hypergradient estimation. Each agent runs the tracked linear
// solver against sampled Hessian-vector products to approximate the network
// adjoint z, then assembles u_i = grad_x f_i - (mixed Jacobian) z_i using the
// same index-0 samples that seeded the solver's right-hand side — the sample
// reuse the estimator's pseudocode prescribes. Also hosts the closed-form
// ground-truth interface (dense, test/diagnostic boundary) and the naive
// locally-solved baseline used to demonstrate its bias under heterogeneity.
#pragma once

#include <memory>

#include "dsbo/higp.hpp"
#include "dsbo/oracle.hpp"

namespace dsbo {

struct HypergradEstimate {
  AgentField u;      // per-agent hypergradient estimates
  Vec ubar;          // network average of u
  AgentField z;      // per-agent adjoint iterates after the tracked solve
  HigpTrace solver_trace;
};

// One estimator pass at the current per-agent iterates (X, Y). Draws the two
// sample arrays (indices 0..N per agent and role), runs the tracked solver
// for `rounds` rounds with stepsize gamma, then re-draws the index-0 samples
// for the assembly step. outer_k keys the sample streams.
HypergradEstimate estimate_hypergradient(const MixingMatrix& w, BilevelOracle& oracle,
                                         const AgentField& x, const AgentField& y, double gamma,
                                         int rounds, std::uint64_t outer_k,
                                         CommLedger* comm = nullptr);

// Exact problem quantities for ground truth and trace diagnostics. Dense
// matrices are permitted here; this interface is never consumed by the
// algorithm updates.
class ClosedForm {
 public:
  virtual ~ClosedForm() = default;
  virtual Vec y_star(const Vec& x) const = 0;
  virtual Mat hess_yy_mean(const Vec& x, const Vec& y) const = 0;  // q x q averaged lower Hessian
  virtual Mat jac_xy_mean(const Vec& x, const Vec& y) const = 0;   // p x q averaged mixed Jacobian
  virtual Vec grad_fx_mean(const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_fy_mean(const Vec& x, const Vec& y) const = 0;
  // Reduced objective value at x (upper objective at the exact lower solution).
  virtual double upper_value(const Vec& x) const = 0;
};

// Exact hypergradient of the reduced objective at x via a dense solve of the
// averaged lower Hessian. Throws std::runtime_error if that Hessian is
// singular or has condition number above 1e12.
Vec ground_truth_hypergradient(const ClosedForm& cf, const Vec& x);

// Per-agent closed-form solves; only baselines and contrast tests use this.
class LocalSolves {
 public:
  virtual ~LocalSolves() = default;
  virtual Vec local_y_star(int i, const Vec& x) const = 0;
  // Hypergradient of f_i composed with agent i's *own* lower solution.
  virtual Vec local_hypergradient(int i, const Vec& x) const = 0;
};

// Average of the locally-solved per-agent hypergradients at a common point x.
// Under lower-level heterogeneity this is NOT the gradient of the averaged
// reduced objective — the estimator above exists to close that gap.
Vec naive_local_average(const LocalSolves& local, int agents, const Vec& x);

}  // namespace dsbo
