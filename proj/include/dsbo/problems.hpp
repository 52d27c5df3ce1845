// Shipped problem instances. Each implements the sampled oracle interface;
// where exact solutions exist it also implements the closed-form and
// per-agent-solve interfaces used by ground truth and baselines.
//
//  - QuadraticBilevel: per-agent f_i = 0.5*||y - a_i||^2 over the lower
//    problem g_i = 0.5*||y - B_i x||^2, additive Gaussian noise with declared
//    scales on every sampled query. Fully closed-form.
//  - LogRegHyper: per-coordinate ridge-weight tuning for logistic regression
//    on synthetic heterogeneous data; sampling is data subsampling.
//  - DscoAdapter: embeds distributed compositional problems
//    min_x (1/n) sum_i f_i( (1/n) sum_j g_j(x) ) as a bilevel instance with
//    identity lower Hessian; inner maps enter through value and
//    transposed-Jacobian-product callbacks only.
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dsbo/hypergrad.hpp"
#include "dsbo/oracle.hpp"

namespace dsbo {

class QuadraticBilevel final : public BilevelOracle, public ClosedForm, public LocalSolves {
 public:
  struct Noise {
    double sigma_f = 0.0;   // additive scale on upper gradient queries
    double sigma_g1 = 0.0;  // additive scale on lower gradient queries
    double sigma_g2 = 0.0;  // additive scale on second-order product queries
  };

  QuadraticBilevel(std::vector<Mat> b, std::vector<Vec> a, Noise noise, std::uint64_t master_seed,
                   int batch = 1, bool share_agent_streams = false);

  // Oracle interface --------------------------------------------------------
  Vec grad_fx_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_fy_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_gy_det(int i, const Vec& x, const Vec& y) const override;
  Vec hess_gyy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const override;
  Vec jac_gxy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const override;
  double f_value_det(int i, const Vec& x, const Vec& y) const override;
  double g_value_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_gx_det(int i, const Vec& x, const Vec& y) const override;

  // Closed forms ------------------------------------------------------------
  Vec y_star(const Vec& x) const override;
  Mat hess_yy_mean(const Vec& x, const Vec& y) const override;
  Mat jac_xy_mean(const Vec& x, const Vec& y) const override;
  Vec grad_fx_mean(const Vec& x, const Vec& y) const override;
  Vec grad_fy_mean(const Vec& x, const Vec& y) const override;
  double upper_value(const Vec& x) const override;

  // Per-agent solves --------------------------------------------------------
  Vec local_y_star(int i, const Vec& x) const override;
  Vec local_hypergradient(int i, const Vec& x) const override;

  const Mat& b_mean() const { return b_mean_; }
  const Vec& a_mean() const { return a_mean_; }

 protected:
  int stream_agent(int agent) const override { return share_agent_streams_ ? 0 : agent; }
  Vec sample_grad_fx(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                          std::uint64_t draw_seed) const override;
  Vec sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                         std::uint64_t draw_seed) const override;

 private:
  std::vector<Mat> b_;
  std::vector<Vec> a_;
  Mat b_mean_;
  Vec a_mean_;
  Noise noise_;
  bool share_agent_streams_;
};

// Per-node dataset: samples are columns; labels are +/-1.
struct LogRegNodeData {
  Mat x_train, x_val;
  Vec y_train, y_val;
};

class LogRegHyper final : public BilevelOracle {
 public:
  LogRegHyper(std::vector<LogRegNodeData> data, std::uint64_t master_seed, int batch = 1);

  Vec grad_fx_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_fy_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_gy_det(int i, const Vec& x, const Vec& y) const override;
  Vec hess_gyy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const override;
  Vec jac_gxy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const override;
  double f_value_det(int i, const Vec& x, const Vec& y) const override;
  double g_value_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_gx_det(int i, const Vec& x, const Vec& y) const override;

  const std::vector<LogRegNodeData>& data() const { return data_; }

  // One CSV per node: sample rows, p feature columns then the label; train
  // rows first, validation rows second. Full-precision, so a written dataset
  // reloads bit-for-bit.
  void export_csv(const std::filesystem::path& dir) const;

 protected:
  Vec sample_grad_fx(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                          std::uint64_t draw_seed) const override;
  Vec sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                         std::uint64_t draw_seed) const override;

 private:
  std::vector<LogRegNodeData> data_;
};

// Inner maps and outer functions of a compositional instance; deterministic
// cores with optional additive noise of declared scale.
struct DscoSpec {
  int dim_x = 0;  // p
  int dim_y = 0;  // q (range dimension of the inner maps)
  std::vector<std::function<Vec(const Vec& x)>> inner_value;              // g_i(x)
  std::vector<std::function<Vec(const Vec& x, const Vec& v)>> inner_vjp;  // (dg_i/dx)^T v
  std::vector<std::function<double(const Vec& y)>> outer_value;           // f_i(y)
  std::vector<std::function<Vec(const Vec& y)>> outer_grad;               // grad f_i(y)
  double sigma_inner = 0.0;
  double sigma_outer = 0.0;
};

class DscoAdapter final : public BilevelOracle, public ClosedForm, public LocalSolves {
 public:
  DscoAdapter(DscoSpec spec, std::uint64_t master_seed, int batch = 1);

  Vec grad_fx_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_fy_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_gy_det(int i, const Vec& x, const Vec& y) const override;
  Vec hess_gyy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const override;
  Vec jac_gxy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const override;
  double f_value_det(int i, const Vec& x, const Vec& y) const override;
  double g_value_det(int i, const Vec& x, const Vec& y) const override;
  Vec grad_gx_det(int i, const Vec& x, const Vec& y) const override;

  Vec y_star(const Vec& x) const override;
  Mat hess_yy_mean(const Vec& x, const Vec& y) const override;
  Mat jac_xy_mean(const Vec& x, const Vec& y) const override;
  Vec grad_fx_mean(const Vec& x, const Vec& y) const override;
  Vec grad_fy_mean(const Vec& x, const Vec& y) const override;
  double upper_value(const Vec& x) const override;

  Vec local_y_star(int i, const Vec& x) const override;
  Vec local_hypergradient(int i, const Vec& x) const override;

 protected:
  Vec sample_grad_fx(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t draw_seed) const override;
  Vec sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                          std::uint64_t draw_seed) const override;
  Vec sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                         std::uint64_t draw_seed) const override;

 private:
  DscoSpec spec_;
};

// A problem instance bundled with its optional exact interfaces and declared
// constants. closed_form/local_solves alias the oracle object when present.
struct Problem {
  std::string id;
  std::unique_ptr<BilevelOracle> oracle;
  const ClosedForm* closed_form = nullptr;
  const LocalSolves* local_solves = nullptr;
  ProblemConstants constants;

  // Topology-free solver stepsize scale (half the inverse declared gradient
  // smoothness). Schedule resolution tightens this by the mixing spectrum;
  // prefer default_solver_gamma when a topology is in hand.
  double default_gamma() const { return 0.5 / constants.L_g1; }
  // Reduced objective at xbar when closed forms exist, else the averaged
  // upper (validation) loss at the current pair of average iterates.
  double upper_loss(const Vec& xbar, const Vec& ybar) const;
};

// Config-facing description of a problem instance.
struct ProblemSpec {
  std::string id = "quad";  // quad | quad-ref | logreg | dsco-linear
  int n = 8;
  int p = 5;
  int q = 5;
  double het = 0.5;      // spread of per-agent data around the shared base
  double sigma_f = 0.1;
  double sigma_g1 = 0.1;
  double sigma_g2 = 0.1;
  bool deterministic = false;  // answer sampled queries with expectations
  int batch = 1;
  // logreg generator knobs
  int samples_per_node = 200;
  double noise_eps = 0.1;
  double het_rate = 1.0;  // per-node feature scale multiplier r
  std::optional<std::string> dataset_dir;  // load instead of generating
  std::optional<std::uint64_t> data_seed;  // defaults to the run seed
};

// Builds the named instance. `seed` keys both data generation (unless
// data_seed overrides) and the oracle's sample streams.
Problem make_problem(const ProblemSpec& spec, std::uint64_t seed);

// Direct factories (tests use these; make_problem wraps them).
Problem make_quadratic(int n, int p, int q, double het, QuadraticBilevel::Noise noise,
                       std::uint64_t data_seed, std::uint64_t stream_seed, int batch = 1,
                       bool share_agent_streams = false);
// Two agents, scalar dims: lower maps 1 and 3, upper targets 0 and 4. The
// canonical heterogeneous reference instance with hand-checkable numbers.
Problem make_quadratic_reference(std::uint64_t stream_seed, QuadraticBilevel::Noise noise = {});
Problem make_logreg(int p, int n, int samples_per_node, double noise_eps, double het_rate,
                    std::uint64_t data_seed, std::uint64_t stream_seed, int batch = 1);
Problem make_logreg_from_csv(const std::string& dir, int n, std::uint64_t stream_seed, int batch = 1);
// Inner maps g_i(x) = A_i x with controlled spread, f_i(y) = 0.5*||y||^2.
Problem make_dsco_linear(int n, int p, int q, double spread, std::uint64_t data_seed,
                         std::uint64_t stream_seed, int batch = 1);

// Synthetic heterogeneous logistic data: node i in 1..n draws feature
// coordinates i.i.d. normal with standard deviation i * het_rate, and labels
// sign(x^T w_star + noise_eps * z) with scalar standard normal z; the first
// half of each node's samples is the training split, the second half the
// validation split.
std::vector<LogRegNodeData> gen_synthetic_logreg(int p, int n, int samples_per_node,
                                                 double noise_eps, double het_rate,
                                                 std::uint64_t data_seed);
std::vector<LogRegNodeData> load_logreg_csv(const std::string& dir, int n);

// Numerically stable softplus of the negated argument, log(1 + exp(-t)), and
// its first two derivatives. The logistic losses build on these.
double logistic_loss(double t);
double logistic_loss_d1(double t);
double logistic_loss_d2(double t);

}  // namespace dsbo
