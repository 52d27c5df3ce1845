// First- and second-order sampled oracle interface for distributed bilevel
// problems. Algorithms see five vector-valued queries per agent — upper
// gradients in x and y, lower gradient in y, lower Hessian-vector and mixed
// Jacobian-vector products — plus deterministic (expectation) variants used
// by diagnostics and tests. No query returns a matrix: instrumentation
// counts calls, consumed samples, and (for test doubles) any full matrix
// materializations, which must stay at zero on the algorithm path.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dsbo/netgraph.hpp"
#include "dsbo/rng.hpp"

namespace dsbo {

// Independent stream per (role, agent, outer, inner) key. Roles separate the
// inner-loop lower-level samples from the estimator's two sample arrays.
enum class SampleRole : std::uint64_t {
  inner_g = 1,    // lower-level gradient samples of the inner loop
  estimator_f = 2,  // upper-level sample array of the hypergradient estimator
  estimator_g = 3,  // lower-level sample array of the hypergradient estimator
  probe = 4,        // free-standing draws in tests and diagnostics
};

// Handle to a drawn sample realization. The seed fully determines the
// realization; batch is the number of i.i.d. draws averaged per query.
struct Sample {
  std::uint64_t seed = 0;
  int batch = 1;
};

struct OracleCounters {
  std::uint64_t grad_fx_calls = 0;
  std::uint64_t grad_fy_calls = 0;
  std::uint64_t grad_gy_calls = 0;
  std::uint64_t hess_vec_calls = 0;
  std::uint64_t jac_vec_calls = 0;
  std::uint64_t samples_drawn = 0;
  // Algorithms must never trip this; only explicit test doubles may.
  std::uint64_t full_matrix_materializations = 0;
};

// Declared regularity and noise constants of a problem instance.
struct ProblemConstants {
  double mu_g = 0.0;   // strong convexity of the lower objective in y
  double L_g1 = 0.0;   // Lipschitz constant of lower gradients
  double L_g2 = 0.0;   // Lipschitz constant of lower second derivatives
  double L_f0 = 0.0;   // bound on upper gradients over the working region
  double L_f1 = 0.0;   // Lipschitz constant of upper gradients
  double sigma_f = 0.0;   // noise scale, upper gradient queries
  double sigma_g1 = 0.0;  // noise scale, lower gradient queries
  double sigma_g2 = 0.0;  // noise scale, lower second-order queries
};

struct SmoothnessConstants {
  double L_phi = 0.0;    // smoothness of the overall objective
  double L_ystar = 0.0;  // Lipschitz constant of the lower-level solution map
};

// Smoothness of the reduced objective and of the solution map, from the
// declared instance constants. Throws std::invalid_argument if mu_g <= 0.
SmoothnessConstants compute_smoothness_constants(const ProblemConstants& c);

class BilevelOracle {
 public:
  BilevelOracle(int agents, int dim_x, int dim_y, std::uint64_t master_seed, int batch = 1)
      : n_(agents), p_(dim_x), q_(dim_y), master_seed_(master_seed), batch_(batch) {
    if (agents < 1 || dim_x < 1 || dim_y < 1) {
      throw std::invalid_argument("oracle needs agents >= 1 and positive dimensions");
    }
    if (batch < 1) throw std::invalid_argument("oracle batch size must be >= 1");
  }
  virtual ~BilevelOracle() = default;

  int agents() const { return n_; }
  int dim_x() const { return p_; }
  int dim_y() const { return q_; }
  std::uint64_t master_seed() const { return master_seed_; }

  // Draws (and accounts) one sample realization for the given stream key.
  // Pure in the key: the same key always yields the same realization.
  Sample draw(SampleRole role, int agent, std::uint64_t outer, std::uint64_t inner);

  // Sampled queries. Each consumes a drawn sample handle and bumps its call
  // counter; the same handle given twice yields bitwise-identical results.
  Vec grad_fx(int i, const Vec& x, const Vec& y, const Sample& s);
  Vec grad_fy(int i, const Vec& x, const Vec& y, const Sample& s);
  Vec grad_gy(int i, const Vec& x, const Vec& y, const Sample& s);
  Vec hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v, const Sample& s);
  Vec jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v, const Sample& s);

  // Expectation (noise-free / full-data) variants; no counters touched.
  virtual Vec grad_fx_det(int i, const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_fy_det(int i, const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_gy_det(int i, const Vec& x, const Vec& y) const = 0;
  virtual Vec hess_gyy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const = 0;
  virtual Vec jac_gxy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const = 0;
  // Scalar objectives, for finite-difference validation and loss logging.
  virtual double f_value_det(int i, const Vec& x, const Vec& y) const = 0;
  virtual double g_value_det(int i, const Vec& x, const Vec& y) const = 0;
  // Lower gradient in x; only consumed by derivative cross-checks.
  virtual Vec grad_gx_det(int i, const Vec& x, const Vec& y) const = 0;

  const OracleCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = OracleCounters{}; }

  // When set, sampled queries answer with the expectation variants while
  // keeping accounting identical (noise-free runs with faithful ledgers).
  bool expectation_mode() const { return expectation_mode_; }
  void set_expectation_mode(bool on) { expectation_mode_ = on; }

 protected:
  // Stream key used for an agent's draws. Default: the agent itself.
  // Instances may map all agents to one stream to model shared randomness.
  virtual int stream_agent(int agent) const { return agent; }

  // Single-draw realizations; draw_seed is unique per (sample, batch item).
  virtual Vec sample_grad_fx(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const = 0;
  virtual Vec sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const = 0;
  virtual Vec sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const = 0;
  virtual Vec sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                  std::uint64_t draw_seed) const = 0;
  virtual Vec sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                 std::uint64_t draw_seed) const = 0;

  // For test doubles that deliberately materialize a full matrix.
  void note_full_matrix_materialization() { ++counters_.full_matrix_materializations; }

 private:
  template <typename Fn>
  Vec averaged(const Sample& s, int out_dim, Fn&& single) const;

  int n_, p_, q_;
  std::uint64_t master_seed_;
  int batch_;
  bool expectation_mode_ = false;
  mutable OracleCounters counters_;
};

// Largest deviation of any agent's deterministic lower gradient from the
// across-agent mean, over the given probe points (x, y) — the empirical
// gradient-heterogeneity bound of the instance.
double measure_heterogeneity(const BilevelOracle& oracle,
                             std::span<const std::pair<Vec, Vec>> probes);

}  // namespace dsbo
