#include "dsbo/higp.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

namespace dsbo {

namespace {

void check_finite(const AgentField& z, int round, const char* phase) {
  if (!z.m.allFinite()) {
    throw DivergedError(round, phase, std::string(phase) + ": non-finite iterate at round " +
                                          std::to_string(round));
  }
  for (int i = 0; i < z.agents(); ++i) {
    const double norm = z.m.col(i).norm();
    if (norm > kDivergenceNorm) {
      throw DivergedError(round, phase,
                          std::string(phase) + ": iterate norm " + std::to_string(norm) +
                              " exceeds divergence threshold at round " + std::to_string(round));
    }
  }
}

void record(HigpTrace* trace, const AgentField& z, const AgentField& d, const AgentField& s) {
  if (trace == nullptr) return;
  trace->zbar.push_back(z.average());
  const double gap = (d.average() - s.average()).norm();
  trace->tracking_gap.push_back(gap);
  trace->max_tracking_gap = std::max(trace->max_tracking_gap, gap);
}

}  // namespace

AgentField higp_run(const MixingMatrix& w, const QuadOracle& oracle, int dim, double gamma,
                    int rounds, CommLedger* comm, HigpTrace* trace) {
  if (rounds < 0) throw std::invalid_argument("solver round count must be >= 0");
  if (!(gamma > 0.0)) throw std::invalid_argument("solver stepsize must be positive");
  const int n = w.agents();

  AgentField z = AgentField::zero(dim, n);
  AgentField s = AgentField::zero(dim, n);
  for (int i = 0; i < n; ++i) s.m.col(i) = -oracle.rhs(i, 0);
  AgentField d = s;  // tracking direction starts at the initial residuals
  record(trace, z, d, s);

  for (int t = 0; t < rounds; ++t) {
    z = mix(w, z, comm);
    z.m -= gamma * d.m;
    check_finite(z, t + 1, "tracked solve");

    AgentField s_next = AgentField::zero(dim, n);
    for (int i = 0; i < n; ++i) {
      s_next.m.col(i) = oracle.hess_vec(i, t + 1, z.m.col(i)) - oracle.rhs(i, t + 1);
    }
    d = mix(w, d, comm);
    d.m += s_next.m - s.m;
    s = std::move(s_next);
    record(trace, z, d, s);
  }
  return z;
}

Vec higp_solve_reference(const std::vector<Mat>& h, const std::vector<Vec>& b) {
  if (h.empty() || h.size() != b.size()) {
    throw std::invalid_argument("reference solve needs matching, non-empty operator and rhs lists");
  }
  Mat h_mean = h[0];
  Vec b_mean = b[0];
  for (std::size_t i = 1; i < h.size(); ++i) {
    h_mean += h[i];
    b_mean += b[i];
  }
  h_mean /= static_cast<double>(h.size());
  b_mean /= static_cast<double>(b.size());

  Eigen::SelfAdjointEigenSolver<Mat> es(h_mean);
  if (es.info() != Eigen::Success) throw std::runtime_error("reference solve: eigendecomposition failed");
  const Vec& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    throw std::runtime_error("reference solve: averaged operator is singular or ill-conditioned");
  }
  return es.eigenvectors() * (es.eigenvectors().transpose() * b_mean).cwiseQuotient(ev);
}

}  // namespace dsbo
