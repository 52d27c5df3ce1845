#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsbo/hypergrad.hpp"
#include "dsbo/problems.hpp"

using namespace dsbo;

namespace {

AgentField consensus_field(const Vec& v, int n) {
  AgentField f = AgentField::zero(static_cast<int>(v.size()), n);
  f.m.colwise() = v;
  return f;
}

// Upper objective independent of y: the adjoint solve has a zero right-hand
// side, so the estimate must collapse to the plain upper gradient.
class FlatUpper final : public BilevelOracle {
 public:
  FlatUpper() : BilevelOracle(2, 2, 2, 99) {}

  Vec grad_fx_det(int, const Vec& x, const Vec&) const override { return 2.0 * x; }
  Vec grad_fy_det(int, const Vec&, const Vec&) const override { return Vec::Zero(2); }
  Vec grad_gy_det(int, const Vec& x, const Vec& y) const override { return y - x; }
  Vec hess_gyy_vec_det(int, const Vec&, const Vec&, const Vec& v) const override { return v; }
  Vec jac_gxy_vec_det(int, const Vec&, const Vec&, const Vec& v) const override { return -v; }
  double f_value_det(int, const Vec& x, const Vec&) const override { return x.squaredNorm(); }
  double g_value_det(int, const Vec& x, const Vec& y) const override {
    return 0.5 * (y - x).squaredNorm();
  }
  Vec grad_gx_det(int, const Vec& x, const Vec& y) const override { return x - y; }

 protected:
  Vec sample_grad_fx(int i, const Vec& x, const Vec& y, std::uint64_t) const override {
    return grad_fx_det(i, x, y);
  }
  Vec sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t) const override {
    return grad_fy_det(i, x, y);
  }
  Vec sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t) const override {
    return grad_gy_det(i, x, y);
  }
  Vec sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                          std::uint64_t) const override {
    return hess_gyy_vec_det(i, x, y, v);
  }
  Vec sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                         std::uint64_t) const override {
    return jac_gxy_vec_det(i, x, y, v);
  }
};

// Closed form with a singular averaged lower Hessian.
class SingularForm final : public ClosedForm {
 public:
  Vec y_star(const Vec&) const override { return Vec::Zero(2); }
  Mat hess_yy_mean(const Vec&, const Vec&) const override { return Mat::Zero(2, 2); }
  Mat jac_xy_mean(const Vec&, const Vec&) const override { return Mat::Zero(2, 2); }
  Vec grad_fx_mean(const Vec&, const Vec&) const override { return Vec::Zero(2); }
  Vec grad_fy_mean(const Vec&, const Vec&) const override { return Vec::Ones(2); }
  double upper_value(const Vec&) const override { return 0.0; }
};

}  // namespace

TEST_CASE("deterministic estimates at consensus match the closed form") {
  Problem ref = make_quadratic_reference(5);
  ref.oracle->set_expectation_mode(true);
  const MixingMatrix w = build_complete(2);
  const double gamma = 0.25;
  const int rounds = 100;

  // Stationary probe: x = 1 is the minimizer, so the estimate vanishes.
  {
    const Vec x = Vec::Constant(1, 1.0);
    const AgentField xs = consensus_field(x, 2);
    const AgentField ys = consensus_field(ref.closed_form->y_star(x), 2);
    CommLedger comm;
    const HypergradEstimate est = estimate_hypergradient(w, *ref.oracle, xs, ys, gamma, rounds, 0,
                                                         &comm);
    CHECK(est.ubar.norm() <= 1e-6);
    CHECK(est.ubar == est.u.average());
    CHECK(est.u.dim() == 1);
    CHECK(est.z.dim() == 1);
    // Two mixes of the q-dimensional pair per solver round.
    CHECK(comm.scalars == 2ull * rounds * w.directed_edges() * 1);
    CHECK(est.solver_trace.max_tracking_gap <= 1e-10);
  }

  // Non-stationary probe: closed form gives 4; per-agent parts are (2, 6).
  {
    const Vec x = Vec::Constant(1, 2.0);
    const AgentField xs = consensus_field(x, 2);
    const AgentField ys = consensus_field(ref.closed_form->y_star(x), 2);
    const HypergradEstimate est = estimate_hypergradient(w, *ref.oracle, xs, ys, gamma, rounds, 0);
    CHECK(est.ubar(0) == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(est.u.m(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(est.u.m(0, 1) == doctest::Approx(6.0).epsilon(1e-6));

    const Vec truth = ground_truth_hypergradient(*ref.closed_form, x);
    CHECK((est.ubar - truth).norm() / truth.norm() <= 1e-5);
  }
}

TEST_CASE("estimator equivalence holds on the multidimensional instances") {
  Problem quad = make_quadratic(4, 3, 2, 0.7, {}, 9, 10);
  quad.oracle->set_expectation_mode(true);
  Problem dsco = make_dsco_linear(4, 3, 2, 0.5, 11, 12);
  dsco.oracle->set_expectation_mode(true);
  const MixingMatrix w = build_complete(4);

  for (Problem* prob : {&quad, &dsco}) {
    const Vec x = Vec::LinSpaced(3, -0.5, 1.0);
    const AgentField xs = consensus_field(x, 4);
    const AgentField ys = consensus_field(prob->closed_form->y_star(x), 4);
    const double gamma = 0.5 * 0.5 / prob->constants.L_g1;
    const HypergradEstimate est =
        estimate_hypergradient(w, *prob->oracle, xs, ys, gamma, 300, 0);
    const Vec truth = ground_truth_hypergradient(*prob->closed_form, x);
    CHECK((est.ubar - truth).norm() / std::max(1.0, truth.norm()) <= 1e-5);
  }
}

TEST_CASE("flat upper objective reduces the estimate to its x-gradient") {
  FlatUpper oracle;
  const MixingMatrix w = build_complete(2);
  const Vec x = Vec::Constant(2, 0.8);
  const AgentField xs = consensus_field(x, 2);
  const AgentField ys = consensus_field(Vec::Constant(2, -0.3), 2);

  const HypergradEstimate est = estimate_hypergradient(w, oracle, xs, ys, 0.4, 12, 3);
  CHECK(est.z.m.norm() == 0.0);  // zero right-hand side never moves the solve
  for (int i = 0; i < 2; ++i) {
    CHECK(est.u.m.col(i) == oracle.grad_fx_det(i, x, ys.m.col(i)));
  }
}

TEST_CASE("locally-solved averaging is biased exactly where predicted") {
  Problem ref = make_quadratic_reference(5);
  ref.oracle->set_expectation_mode(true);
  const Vec x = Vec::Constant(1, 1.0);

  const Vec naive = naive_local_average(*ref.local_solves, 2, x);
  const Vec truth = ground_truth_hypergradient(*ref.closed_form, x);
  CHECK(naive(0) == -1.0);
  CHECK((naive - truth).norm() >= 0.5);

  const MixingMatrix w = build_complete(2);
  const AgentField xs = consensus_field(x, 2);
  const AgentField ys = consensus_field(ref.closed_form->y_star(x), 2);
  const HypergradEstimate est = estimate_hypergradient(w, *ref.oracle, xs, ys, 0.25, 200, 0);
  CHECK((est.ubar - truth).norm() <= 1e-5);

  // Homogeneous lower level: the local shortcut coincides with the truth.
  Problem homog = make_quadratic(3, 2, 2, 0.0, {}, 6, 7);
  const Vec x2 = Vec::Constant(2, 0.4);
  const Vec naive2 = naive_local_average(*homog.local_solves, 3, x2);
  const Vec truth2 = ground_truth_hypergradient(*homog.closed_form, x2);
  CHECK((naive2 - truth2).norm() <= 1e-12);

  Problem dsco = make_dsco_linear(3, 2, 2, 0.0, 8, 9);
  const Vec naive3 = naive_local_average(*dsco.local_solves, 3, x2);
  const Vec truth3 = ground_truth_hypergradient(*dsco.closed_form, x2);
  CHECK((naive3 - truth3).norm() <= 1e-12);
}

TEST_CASE("truncation bias decays geometrically in the round count") {
  Problem ref = make_quadratic_reference(5);
  ref.oracle->set_expectation_mode(true);
  const MixingMatrix w = build_complete(2);
  const Vec x = Vec::Constant(1, 0.7);
  const AgentField xs = consensus_field(x, 2);
  const AgentField ys = consensus_field(ref.closed_form->y_star(x), 2);
  const Vec truth = ground_truth_hypergradient(*ref.closed_form, x);

  std::vector<double> err;
  for (int rounds = 2; rounds <= 16; rounds += 2) {
    const HypergradEstimate est = estimate_hypergradient(w, *ref.oracle, xs, ys, 0.25, rounds, 0);
    err.push_back((est.ubar - truth).norm());
  }
  for (std::size_t t = 0; t + 1 < err.size(); ++t) {
    CHECK(err[t + 1] < 0.9 * err[t]);
  }
  CHECK(err.back() <= 0.05 * err.front());
}

TEST_CASE("seed-averaged stochastic estimates agree with the deterministic pass") {
  QuadraticBilevel::Noise noise;
  noise.sigma_f = noise.sigma_g1 = noise.sigma_g2 = 0.1;
  const MixingMatrix w = build_complete(2);
  const int rounds = 12;
  const double gamma = 0.25;

  Problem det_prob = make_quadratic_reference(1);
  det_prob.oracle->set_expectation_mode(true);
  const Vec x = Vec::Constant(1, 1.0);
  const AgentField xs = consensus_field(x, 2);
  const AgentField ys = consensus_field(det_prob.closed_form->y_star(x), 2);
  const double want =
      estimate_hypergradient(w, *det_prob.oracle, xs, ys, gamma, rounds, 0).ubar(0);

  const int seeds = 500;
  double mean = 0.0, sq = 0.0;
  for (int seed = 1; seed <= seeds; ++seed) {
    Problem prob = make_quadratic_reference(static_cast<std::uint64_t>(seed), noise);
    const double u =
        estimate_hypergradient(w, *prob.oracle, xs, ys, gamma, rounds, 0).ubar(0);
    mean += u;
    sq += u * u;
  }
  mean /= seeds;
  const double var = std::max(0.0, sq / seeds - mean * mean);
  CHECK(std::abs(mean - want) <= 5.0 * std::sqrt(var / seeds) + 1e-12);
}

TEST_CASE("estimator propagates solver divergence") {
  Problem ref = make_quadratic_reference(5);
  ref.oracle->set_expectation_mode(true);
  const MixingMatrix w = build_complete(2);
  const AgentField xs = consensus_field(Vec::Constant(1, 1.0), 2);
  const AgentField ys = consensus_field(Vec::Constant(1, 2.0), 2);
  CHECK_THROWS_AS(estimate_hypergradient(w, *ref.oracle, xs, ys, /*gamma=*/5.0, 400, 0),
                  DivergedError);
}

TEST_CASE("ground truth rejects a singular averaged Hessian") {
  const SingularForm singular;
  CHECK_THROWS_AS(ground_truth_hypergradient(singular, Vec::Zero(2)), std::runtime_error);
}
