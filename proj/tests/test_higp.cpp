#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsbo/higp.hpp"
#include "dsbo/rng.hpp"

using namespace dsbo;

namespace {

QuadOracle constant_oracle(std::vector<Mat> h, std::vector<Vec> b) {
  return QuadOracle{
      [h](int i, int, const Vec& v) { return Vec(h[static_cast<std::size_t>(i)] * v); },
      [b](int i, int) { return b[static_cast<std::size_t>(i)]; }};
}

Mat random_spd(Rng& rng, int q, double mu, double l) {
  Mat a(q, q);
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < q; ++j) a(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Mat> qr(a);
  const Mat orth = qr.householderQ();
  Vec eigs(q);
  for (int i = 0; i < q; ++i) eigs(i) = mu + (l - mu) * rng.uniform01();
  eigs(0) = mu;  // pin the extremes so the declared interval is tight
  eigs(q - 1) = l;
  return orth * eigs.asDiagonal() * orth.transpose();
}

}  // namespace

TEST_CASE("single-agent scalar solve follows the hand iteration") {
  // z_{t+1} = z_t - 0.25 (2 z_t - 4): exact trace 0, 1, 1.5, 1.75 -> 2.
  const MixingMatrix w = build_complete(1);
  const auto oracle = constant_oracle({Mat::Constant(1, 1, 2.0)}, {Vec::Constant(1, 4.0)});

  HigpTrace trace;
  const AgentField z = higp_run(w, oracle, 1, 0.25, 3, nullptr, &trace);
  CHECK(z.m(0, 0) == 1.75);
  REQUIRE(trace.zbar.size() == 4);
  CHECK(trace.zbar[0](0) == 0.0);
  CHECK(trace.zbar[1](0) == 1.0);
  CHECK(trace.zbar[2](0) == 1.5);
  CHECK(trace.zbar[3](0) == 1.75);
  CHECK(trace.max_tracking_gap == 0.0);  // n = 1: mean d and mean s coincide

  const AgentField z60 = higp_run(w, oracle, 1, 0.25, 60);
  CHECK(z60.m(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("zero right-hand side is a fixed point") {
  const MixingMatrix w = build_ring(4, 0.5);
  const auto oracle = constant_oracle(
      {Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Identity(2, 2)},
      {Vec::Zero(2), Vec::Zero(2), Vec::Zero(2), Vec::Zero(2)});
  HigpTrace trace;
  const AgentField z = higp_run(w, oracle, 2, 0.3, 25, nullptr, &trace);
  CHECK(z.m.norm() == 0.0);
  for (const Vec& zbar : trace.zbar) CHECK(zbar.norm() == 0.0);
}

TEST_CASE("two identity agents agree on the averaged solution") {
  const MixingMatrix w = build_complete(2);
  Vec b1(2), b2(2);
  b1 << 2.0, 0.0;
  b2 << 0.0, 2.0;
  const auto oracle = constant_oracle({Mat::Identity(2, 2), Mat::Identity(2, 2)}, {b1, b2});

  // Strictly inside the stable stepsize range every agent reaches the
  // solution of the averaged system.
  const AgentField z = higp_run(w, oracle, 2, 0.4, 200);
  for (int i = 0; i < 2; ++i) {
    CHECK(z.m(0, i) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(z.m(1, i) == doctest::Approx(1.0).epsilon(1e-10));
  }

  // Exactly on the boundary gamma = (1 + lambda_min)^2 / (2L) = 0.5 the
  // disagreement mode is neutral: the network average still solves the
  // system, while the agents keep oscillating against each other.
  const AgentField edge = higp_run(w, oracle, 2, 0.5, 81);
  CHECK(edge.average()(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(edge.average()(1) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(edge.consensus_sq() > 1e-2);
}

TEST_CASE("reference solve: identities, diagonals, and failure modes") {
  Rng rng(5);
  Vec b(3);
  b << 0.3, -1.2, 0.8;
  CHECK(higp_solve_reference({Mat::Identity(3, 3)}, {b}) == b);

  Mat diag = Mat::Zero(2, 2);
  diag(0, 0) = 2.0;
  diag(1, 1) = 4.0;
  Vec rhs(2);
  rhs << 2.0, 4.0;
  const Vec solved = higp_solve_reference({diag}, {rhs});
  CHECK(solved(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(solved(1) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(higp_solve_reference({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(higp_solve_reference({Mat::Zero(2, 2)}, {Vec::Ones(2)}), std::runtime_error);
  Mat indefinite = Mat::Identity(2, 2);
  indefinite(1, 1) = -1.0;
  CHECK_THROWS_AS(higp_solve_reference({indefinite}, {Vec::Ones(2)}), std::runtime_error);
}

TEST_CASE("distributed solve matches the dense reference on random instances") {
  Rng rng(31);
  const int n = 3, q = 5;
  const double mu = 1.0, l = 4.0;
  std::vector<Mat> h;
  std::vector<Vec> b;
  for (int i = 0; i < n; ++i) {
    h.push_back(random_spd(rng, q, mu, l));
    Vec bi(q);
    for (int j = 0; j < q; ++j) bi(j) = rng.normal();
    b.push_back(bi);
  }
  const Vec z_star = higp_solve_reference(h, b);

  const MixingMatrix w = build_complete(n);
  HigpTrace trace;
  const AgentField z200 = higp_run(w, constant_oracle(h, b), q, 0.1 / l, 200, nullptr, &trace);
  const AgentField z500 = higp_run(w, constant_oracle(h, b), q, 0.1 / l, 500);
  for (int i = 0; i < n; ++i) {
    CHECK((z200.m.col(i) - z_star).norm() <= 1e-4);
    CHECK((z500.m.col(i) - z_star).norm() <= 1e-6);
  }
  CHECK(trace.max_tracking_gap <= 1e-10);
}

TEST_CASE("tracked averages of direction and residual stay glued") {
  Rng rng(37);
  const int n = 8, q = 3;
  std::vector<Mat> h;
  std::vector<Vec> b;
  for (int i = 0; i < n; ++i) {
    h.push_back(random_spd(rng, q, 1.0, 2.0));
    Vec bi(q);
    for (int j = 0; j < q; ++j) bi(j) = rng.normal();
    b.push_back(bi);
  }
  const MixingMatrix w = build_ring(n, 0.4);
  HigpTrace trace;
  higp_run(w, constant_oracle(h, b), q, 0.1, 120, nullptr, &trace);
  REQUIRE(trace.tracking_gap.size() == 121);
  for (const double gap : trace.tracking_gap) CHECK(gap <= 1e-10);
}

TEST_CASE("noiseless convergence on the ring is geometric") {
  Rng rng(41);
  const int n = 8, q = 4;
  const double l = 2.0;
  std::vector<Mat> h;
  std::vector<Vec> b;
  for (int i = 0; i < n; ++i) {
    h.push_back(random_spd(rng, q, 1.0, l));
    Vec bi(q);
    for (int j = 0; j < q; ++j) bi(j) = rng.normal();
    b.push_back(bi);
  }
  const Vec z_star = higp_solve_reference(h, b);
  const MixingMatrix w = build_ring(n, 0.4);
  // Stability threshold of the tracked iteration is (1 + lambda_min)^2/(2L);
  // run at half of it.
  const double gamma = 0.25 * std::pow(1.0 + w.lambda_min(), 2) / l;

  HigpTrace trace;
  higp_run(w, constant_oracle(h, b), q, gamma, 200, nullptr, &trace);
  std::vector<double> err;
  for (const Vec& zbar : trace.zbar) err.push_back((zbar - z_star).norm());
  CHECK(err.back() <= 1e-8 * err.front());

  // Least-squares slope of log error: a strictly negative per-round rate.
  int m = 0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t t = 0; t < err.size(); ++t) {
    if (err[t] <= 0.0) break;
    const double xt = static_cast<double>(t), yt = std::log(err[t]);
    sx += xt;
    sy += yt;
    sxx += xt * xt;
    sxy += xt * yt;
    ++m;
  }
  REQUIRE(m > 20);
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  CHECK(std::exp(slope) < 1.0);
}

TEST_CASE("stochastic right-hand sides average out to the noiseless solve") {
  const int n = 4, q = 2;
  std::vector<Mat> h{Mat::Identity(2, 2), 2.0 * Mat::Identity(2, 2), Mat::Identity(2, 2),
                     1.5 * Mat::Identity(2, 2)};
  std::vector<Vec> b;
  Rng rng(43);
  for (int i = 0; i < n; ++i) {
    Vec bi(q);
    for (int j = 0; j < q; ++j) bi(j) = rng.normal();
    b.push_back(bi);
  }
  const MixingMatrix w = build_complete(n);
  const int rounds = 40;
  const double gamma = 0.2;

  const AgentField det = higp_run(w, constant_oracle(h, b), q, gamma, rounds);

  // Noise enters b only, so the iterate is linear in the noise and its mean
  // equals the noiseless trajectory.
  const int seeds = 300;
  const double sigma = 0.3;
  Vec mean = Vec::Zero(q);
  Vec sq = Vec::Zero(q);
  for (int seed = 1; seed <= seeds; ++seed) {
    QuadOracle noisy{
        [&h](int i, int, const Vec& v) { return Vec(h[static_cast<std::size_t>(i)] * v); },
        [&b, seed, sigma](int i, int t) {
          Rng noise(mix_key(mix_key(mix_key(777, static_cast<std::uint64_t>(seed)),
                                    static_cast<std::uint64_t>(i)),
                            static_cast<std::uint64_t>(t)));
          Vec out = b[static_cast<std::size_t>(i)];
          for (int j = 0; j < out.size(); ++j) out(j) += sigma * noise.normal();
          return out;
        }};
    const Vec z0 = higp_run(w, noisy, q, gamma, rounds).m.col(0);
    mean += z0;
    sq += z0.cwiseProduct(z0);
  }
  mean /= seeds;
  const Vec det_agent0 = det.m.col(0);
  for (int j = 0; j < q; ++j) {
    const double var = std::max(0.0, sq(j) / seeds - mean(j) * mean(j));
    const double tol = 5.0 * std::sqrt(var / seeds) + 1e-12;
    CHECK(std::abs(mean(j) - det_agent0(j)) <= tol);
  }
}

TEST_CASE("stepsizes beyond the stable range abort with round metadata") {
  // Single agent, mu = L = 1: divergence for gamma >= 2.
  const MixingMatrix w1 = build_complete(1);
  const auto scalar = constant_oracle({Mat::Identity(1, 1)}, {Vec::Ones(1)});
  CHECK_THROWS_AS(higp_run(w1, scalar, 1, 2.5, 200), DivergedError);
  try {
    higp_run(w1, scalar, 1, 2.5, 200);
  } catch (const DivergedError& e) {
    CHECK(e.round() > 0);
    CHECK(e.phase() == "tracked solve");
    CHECK(!e.outer_k.has_value());
  }

  // Ring instability: the threshold shrinks to (1 + lambda_min)^2 / (2 L).
  // For ring(8, 0.4) and L = 1 that is 0.32; just above diverges, comfortably
  // below converges, with an alternating rhs exciting the extreme mode.
  const MixingMatrix w8 = build_ring(8, 0.4);
  std::vector<Mat> h(8, Mat::Identity(1, 1));
  std::vector<Vec> b;
  for (int i = 0; i < 8; ++i) b.push_back(Vec::Constant(1, i % 2 == 0 ? 1.0 : -1.0));
  CHECK_THROWS_AS(higp_run(w8, constant_oracle(h, b), 1, 0.40, 2000), DivergedError);
  CHECK_NOTHROW(higp_run(w8, constant_oracle(h, b), 1, 0.28, 2000));

  CHECK_THROWS_AS(higp_run(w1, scalar, 1, 0.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(higp_run(w1, scalar, 1, -0.1, 5), std::invalid_argument);
}
