#include "dsbo/oracle.hpp"

#include <cmath>

namespace dsbo {

SmoothnessConstants compute_smoothness_constants(const ProblemConstants& c) {
  if (!(c.mu_g > 0.0)) {
    throw std::invalid_argument("lower-level strong convexity constant must be positive");
  }
  const double mu = c.mu_g;
  SmoothnessConstants out;
  out.L_ystar = c.L_g1 / mu;
  out.L_phi = c.L_f1 + (2.0 * c.L_f1 * c.L_g1 + c.L_g2 * c.L_f0 * c.L_f0) / mu +
              (2.0 * c.L_g1 * c.L_f0 * c.L_g2 + c.L_g1 * c.L_g1 * c.L_f1) / (mu * mu) +
              (c.L_g2 * c.L_g1 * c.L_g1 * c.L_f0) / (mu * mu * mu);
  return out;
}

Sample BilevelOracle::draw(SampleRole role, int agent, std::uint64_t outer, std::uint64_t inner) {
  std::uint64_t seed = master_seed_;
  seed = mix_key(seed, static_cast<std::uint64_t>(role));
  seed = mix_key(seed, static_cast<std::uint64_t>(stream_agent(agent)));
  seed = mix_key(seed, outer);
  seed = mix_key(seed, inner);
  counters_.samples_drawn += static_cast<std::uint64_t>(batch_);
  return Sample{seed, batch_};
}

template <typename Fn>
Vec BilevelOracle::averaged(const Sample& s, int out_dim, Fn&& single) const {
  if (s.batch == 1) return single(mix_key(s.seed, 0));
  Vec acc = Vec::Zero(out_dim);
  for (int j = 0; j < s.batch; ++j) acc += single(mix_key(s.seed, static_cast<std::uint64_t>(j)));
  return acc / static_cast<double>(s.batch);
}

Vec BilevelOracle::grad_fx(int i, const Vec& x, const Vec& y, const Sample& s) {
  ++counters_.grad_fx_calls;
  if (expectation_mode_) return grad_fx_det(i, x, y);
  return averaged(s, p_, [&](std::uint64_t ds) { return sample_grad_fx(i, x, y, ds); });
}

Vec BilevelOracle::grad_fy(int i, const Vec& x, const Vec& y, const Sample& s) {
  ++counters_.grad_fy_calls;
  if (expectation_mode_) return grad_fy_det(i, x, y);
  return averaged(s, q_, [&](std::uint64_t ds) { return sample_grad_fy(i, x, y, ds); });
}

Vec BilevelOracle::grad_gy(int i, const Vec& x, const Vec& y, const Sample& s) {
  ++counters_.grad_gy_calls;
  if (expectation_mode_) return grad_gy_det(i, x, y);
  return averaged(s, q_, [&](std::uint64_t ds) { return sample_grad_gy(i, x, y, ds); });
}

Vec BilevelOracle::hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v, const Sample& s) {
  ++counters_.hess_vec_calls;
  if (expectation_mode_) return hess_gyy_vec_det(i, x, y, v);
  return averaged(s, q_, [&](std::uint64_t ds) { return sample_hess_gyy_vec(i, x, y, v, ds); });
}

Vec BilevelOracle::jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v, const Sample& s) {
  ++counters_.jac_vec_calls;
  if (expectation_mode_) return jac_gxy_vec_det(i, x, y, v);
  return averaged(s, p_, [&](std::uint64_t ds) { return sample_jac_gxy_vec(i, x, y, v, ds); });
}

double measure_heterogeneity(const BilevelOracle& oracle,
                             std::span<const std::pair<Vec, Vec>> probes) {
  const int n = oracle.agents();
  double worst = 0.0;
  for (const auto& [x, y] : probes) {
    Vec mean = Vec::Zero(oracle.dim_y());
    std::vector<Vec> grads(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      grads[static_cast<std::size_t>(i)] = oracle.grad_gy_det(i, x, y);
      mean += grads[static_cast<std::size_t>(i)];
    }
    mean /= static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst, (grads[static_cast<std::size_t>(i)] - mean).norm());
    }
  }
  return worst;
}

}  // namespace dsbo
