#include "dsbo/hypergrad.hpp"

#include <Eigen/Eigenvalues>
#include <vector>

namespace dsbo {

HypergradEstimate estimate_hypergradient(const MixingMatrix& w, BilevelOracle& oracle,
                                         const AgentField& x, const AgentField& y, double gamma,
                                         int rounds, std::uint64_t outer_k, CommLedger* comm) {
  const int n = oracle.agents();
  if (x.agents() != n || y.agents() != n) {
    throw std::invalid_argument("iterate fields must have one column per agent");
  }

  // Declared sample arrays, one entry per (agent, index 0..N). The index-0
  // lower-level sample is part of the declared input even though the solver
  // applies operators only from index 1 on.
  std::vector<std::vector<Sample>> phi(static_cast<std::size_t>(n));
  std::vector<std::vector<Sample>> xi(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    phi[static_cast<std::size_t>(i)].reserve(static_cast<std::size_t>(rounds) + 1);
    xi[static_cast<std::size_t>(i)].reserve(static_cast<std::size_t>(rounds) + 1);
    for (int t = 0; t <= rounds; ++t) {
      phi[static_cast<std::size_t>(i)].push_back(
          oracle.draw(SampleRole::estimator_f, i, outer_k, static_cast<std::uint64_t>(t)));
      xi[static_cast<std::size_t>(i)].push_back(
          oracle.draw(SampleRole::estimator_g, i, outer_k, static_cast<std::uint64_t>(t)));
    }
  }

  QuadOracle quad;
  quad.hess_vec = [&](int i, int t, const Vec& v) {
    return oracle.hess_gyy_vec(i, x.m.col(i), y.m.col(i), v,
                               xi[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
  };
  quad.rhs = [&](int i, int t) {
    return oracle.grad_fy(i, x.m.col(i), y.m.col(i),
                          phi[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
  };

  HypergradEstimate est;
  est.z = higp_run(w, quad, oracle.dim_y(), gamma, rounds, comm, &est.solver_trace);

  est.u = AgentField::zero(oracle.dim_x(), n);
  for (int i = 0; i < n; ++i) {
    // Fresh draws bound to the index-0 stream keys: identical realizations to
    // the array entries above, accounted as their own draws.
    const Sample phi0 = oracle.draw(SampleRole::estimator_f, i, outer_k, 0);
    const Sample xi0 = oracle.draw(SampleRole::estimator_g, i, outer_k, 0);
    est.u.m.col(i) = oracle.grad_fx(i, x.m.col(i), y.m.col(i), phi0) -
                     oracle.jac_gxy_vec(i, x.m.col(i), y.m.col(i), est.z.m.col(i), xi0);
  }
  est.ubar = est.u.average();
  return est;
}

Vec ground_truth_hypergradient(const ClosedForm& cf, const Vec& x) {
  const Vec ys = cf.y_star(x);
  const Mat h = cf.hess_yy_mean(x, ys);
  Eigen::SelfAdjointEigenSolver<Mat> es(h);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("ground truth: eigendecomposition of averaged lower Hessian failed");
  }
  const Vec& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    throw std::runtime_error("ground truth: averaged lower Hessian singular or ill-conditioned");
  }
  const Vec z = es.eigenvectors() * (es.eigenvectors().transpose() * cf.grad_fy_mean(x, ys)).cwiseQuotient(ev);
  return cf.grad_fx_mean(x, ys) - cf.jac_xy_mean(x, ys) * z;
}

Vec naive_local_average(const LocalSolves& local, int agents, const Vec& x) {
  if (agents < 1) throw std::invalid_argument("baseline average needs at least one agent");
  Vec acc = local.local_hypergradient(0, x);
  for (int i = 1; i < agents; ++i) acc += local.local_hypergradient(i, x);
  return acc / static_cast<double>(agents);
}

}  // namespace dsbo
