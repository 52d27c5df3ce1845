// Synchronous gossip layer: symmetric doubly stochastic mixing matrices over
// static topologies, per-agent column fields, and the communication ledger
// that charges every mix with the scalars it would move over the wire.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsbo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Raised when a candidate mixing matrix violates the gossip contract.
class MixingError : public std::runtime_error {
 public:
  enum class Kind { not_square, not_symmetric, not_stochastic, negative_weight, no_spectral_gap };
  MixingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Running count of scalars moved across directed edges by mixing steps.
struct CommLedger {
  std::uint64_t scalars = 0;
};

// Validated symmetric doubly stochastic weight matrix with a spectral gap.
// rho() is the mixing rate: max(|lambda_2|, |lambda_n|) of the weight matrix,
// defined as 0 for a single agent.
class MixingMatrix {
 public:
  explicit MixingMatrix(Mat weights);

  int agents() const { return static_cast<int>(w_.rows()); }
  const Mat& weights() const { return w_; }
  double rho() const { return rho_; }
  // Smallest eigenvalue of the weight matrix (1 for a single agent). The
  // tracked solver's stable stepsize range shrinks with (1 + lambda_min)^2,
  // so schedule resolution needs it.
  double lambda_min() const { return lambda_min_; }
  // Ordered pairs (i, j), i != j, with nonzero weight; the message count of
  // one synchronous exchange.
  std::uint64_t directed_edges() const { return directed_edges_; }

 private:
  Mat w_;
  double rho_ = 0.0;
  double lambda_min_ = 1.0;
  std::uint64_t directed_edges_ = 0;
};

// Ring with self-weight w on the diagonal and (1-w)/2 per ring neighbor;
// for n = 2 the two neighbor contributions merge into a single edge of
// weight 1-w. Requires n >= 2 and 0 < w < 1.
MixingMatrix build_ring(int n, double self_weight);

// Complete graph with uniform weights 1/n. Requires n >= 1; n = 1 gives the
// degenerate single-agent matrix [1] with rho = 0.
MixingMatrix build_complete(int n);

// Reads a dense weight matrix from CSV (one row per line) and validates it.
MixingMatrix load_mixing_csv(const std::string& path);

// d x n block of per-agent column vectors.
struct AgentField {
  Mat m;  // dim rows, one column per agent

  static AgentField zero(int dim, int n) { return AgentField{Mat::Zero(dim, n)}; }

  int dim() const { return static_cast<int>(m.rows()); }
  int agents() const { return static_cast<int>(m.cols()); }
  Vec average() const { return m.rowwise().mean(); }
  // Squared Frobenius distance to the consensus block, divided by n.
  double consensus_sq() const {
    const Vec avg = average();
    return (m.colwise() - avg).squaredNorm() / static_cast<double>(agents());
  }
};

// One synchronous gossip round: column i of the result is sum_j w_ij f_j.
// Preserves the column average exactly (in exact arithmetic) and contracts
// the consensus residual by at least rho. Charges directed_edges * dim
// scalars to the ledger when one is supplied.
AgentField mix(const MixingMatrix& w, const AgentField& f, CommLedger* comm = nullptr);

}  // namespace dsbo
