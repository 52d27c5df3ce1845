#include "dsbo/problems.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dsbo {

namespace {

// Substream tags so the five query kinds see independent noise components of
// the same drawn sample.
enum : std::uint64_t {
  kTagIndex = 1,
  kTagFx = 11,
  kTagFy = 12,
  kTagGy = 13,
  kTagHess = 14,
  kTagJac = 15,
};

Vec gauss_vec(Rng& rng, int dim) {
  Vec v(dim);
  for (int j = 0; j < dim; ++j) v(j) = rng.normal();
  return v;
}

Vec additive_noise(std::uint64_t draw_seed, std::uint64_t tag, double sigma, int dim) {
  Vec noise = Vec::Zero(dim);
  if (sigma != 0.0) {
    Rng rng(mix_key(draw_seed, tag));
    noise = sigma * gauss_vec(rng, dim);
  }
  return noise;
}

}  // namespace

double logistic_loss(double t) {
  return t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

double logistic_loss_d1(double t) {
  // -1 / (1 + e^t), computed on the stable side of the exponential.
  return t >= 0.0 ? -std::exp(-t) / (1.0 + std::exp(-t)) : -1.0 / (1.0 + std::exp(t));
}

double logistic_loss_d2(double t) {
  const double s = 1.0 / (1.0 + std::exp(-std::abs(t)));
  return s * (1.0 - s);
}

// ---------------------------------------------------------------------------
// QuadraticBilevel
// ---------------------------------------------------------------------------

QuadraticBilevel::QuadraticBilevel(std::vector<Mat> b, std::vector<Vec> a, Noise noise,
                                   std::uint64_t master_seed, int batch, bool share_agent_streams)
    : BilevelOracle(static_cast<int>(b.size()),
                    b.empty() ? 0 : static_cast<int>(b.front().cols()),
                    b.empty() ? 0 : static_cast<int>(b.front().rows()), master_seed, batch),
      b_(std::move(b)),
      a_(std::move(a)),
      noise_(noise),
      share_agent_streams_(share_agent_streams) {
  if (b_.size() != a_.size()) {
    throw std::invalid_argument("quadratic testbed needs one lower map and one target per agent");
  }
  b_mean_ = b_[0];
  a_mean_ = a_[0];
  for (std::size_t i = 1; i < b_.size(); ++i) {
    if (b_[i].rows() != b_[0].rows() || b_[i].cols() != b_[0].cols() || a_[i].size() != a_[0].size()) {
      throw std::invalid_argument("quadratic testbed agents must share dimensions");
    }
    b_mean_ += b_[i];
    a_mean_ += a_[i];
  }
  b_mean_ /= static_cast<double>(b_.size());
  a_mean_ /= static_cast<double>(a_.size());
}

Vec QuadraticBilevel::grad_fx_det(int, const Vec&, const Vec&) const { return Vec::Zero(dim_x()); }
Vec QuadraticBilevel::grad_fy_det(int i, const Vec&, const Vec& y) const {
  return y - a_[static_cast<std::size_t>(i)];
}
Vec QuadraticBilevel::grad_gy_det(int i, const Vec& x, const Vec& y) const {
  return y - b_[static_cast<std::size_t>(i)] * x;
}
Vec QuadraticBilevel::hess_gyy_vec_det(int, const Vec&, const Vec&, const Vec& v) const { return v; }
Vec QuadraticBilevel::jac_gxy_vec_det(int i, const Vec&, const Vec&, const Vec& v) const {
  return -(b_[static_cast<std::size_t>(i)].transpose() * v);
}
double QuadraticBilevel::f_value_det(int i, const Vec&, const Vec& y) const {
  return 0.5 * (y - a_[static_cast<std::size_t>(i)]).squaredNorm();
}
double QuadraticBilevel::g_value_det(int i, const Vec& x, const Vec& y) const {
  return 0.5 * (y - b_[static_cast<std::size_t>(i)] * x).squaredNorm();
}
Vec QuadraticBilevel::grad_gx_det(int i, const Vec& x, const Vec& y) const {
  return -(b_[static_cast<std::size_t>(i)].transpose() * (y - b_[static_cast<std::size_t>(i)] * x));
}

Vec QuadraticBilevel::y_star(const Vec& x) const { return b_mean_ * x; }
Mat QuadraticBilevel::hess_yy_mean(const Vec&, const Vec&) const {
  return Mat::Identity(dim_y(), dim_y());
}
Mat QuadraticBilevel::jac_xy_mean(const Vec&, const Vec&) const { return -b_mean_.transpose(); }
Vec QuadraticBilevel::grad_fx_mean(const Vec&, const Vec&) const { return Vec::Zero(dim_x()); }
Vec QuadraticBilevel::grad_fy_mean(const Vec&, const Vec& y) const { return y - a_mean_; }
double QuadraticBilevel::upper_value(const Vec& x) const {
  const Vec ys = y_star(x);
  double acc = 0.0;
  for (int i = 0; i < agents(); ++i) acc += f_value_det(i, x, ys);
  return acc / static_cast<double>(agents());
}

Vec QuadraticBilevel::local_y_star(int i, const Vec& x) const {
  return b_[static_cast<std::size_t>(i)] * x;
}
Vec QuadraticBilevel::local_hypergradient(int i, const Vec& x) const {
  const auto& bi = b_[static_cast<std::size_t>(i)];
  return bi.transpose() * (bi * x - a_[static_cast<std::size_t>(i)]);
}

Vec QuadraticBilevel::sample_grad_fx(int i, const Vec& x, const Vec& y, std::uint64_t ds) const {
  return grad_fx_det(i, x, y) + additive_noise(ds, kTagFx, noise_.sigma_f, dim_x());
}
Vec QuadraticBilevel::sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t ds) const {
  return grad_fy_det(i, x, y) + additive_noise(ds, kTagFy, noise_.sigma_f, dim_y());
}
Vec QuadraticBilevel::sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t ds) const {
  return grad_gy_det(i, x, y) + additive_noise(ds, kTagGy, noise_.sigma_g1, dim_y());
}
Vec QuadraticBilevel::sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                          std::uint64_t ds) const {
  return hess_gyy_vec_det(i, x, y, v) + additive_noise(ds, kTagHess, noise_.sigma_g2, dim_y());
}
Vec QuadraticBilevel::sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                         std::uint64_t ds) const {
  return jac_gxy_vec_det(i, x, y, v) + additive_noise(ds, kTagJac, noise_.sigma_g2, dim_x());
}

// ---------------------------------------------------------------------------
// LogRegHyper
// ---------------------------------------------------------------------------

namespace {

int checked_dim(const std::vector<LogRegNodeData>& data) {
  if (data.empty()) throw std::invalid_argument("logistic instance needs at least one node");
  const auto p = data.front().x_train.rows();
  for (const auto& d : data) {
    if (d.x_train.rows() != p || d.x_val.rows() != p || d.x_train.cols() != d.y_train.size() ||
        d.x_val.cols() != d.y_val.size() || d.x_train.cols() < 1 || d.x_val.cols() < 1) {
      throw std::invalid_argument("logistic node data is inconsistent");
    }
  }
  return static_cast<int>(p);
}

}  // namespace

LogRegHyper::LogRegHyper(std::vector<LogRegNodeData> data, std::uint64_t master_seed, int batch)
    : BilevelOracle(static_cast<int>(data.size()), checked_dim(data), checked_dim(data), master_seed,
                    batch),
      data_(std::move(data)) {}

// Upper objective: mean logistic loss on the validation split; no dependence
// on the ridge weights x.
Vec LogRegHyper::grad_fx_det(int, const Vec&, const Vec&) const { return Vec::Zero(dim_x()); }

Vec LogRegHyper::grad_fy_det(int i, const Vec&, const Vec& y) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  Vec acc = Vec::Zero(dim_y());
  for (Eigen::Index e = 0; e < d.x_val.cols(); ++e) {
    const double margin = d.y_val(e) * d.x_val.col(e).dot(y);
    acc += logistic_loss_d1(margin) * d.y_val(e) * d.x_val.col(e);
  }
  return acc / static_cast<double>(d.x_val.cols());
}

Vec LogRegHyper::grad_gy_det(int i, const Vec& x, const Vec& y) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  Vec acc = Vec::Zero(dim_y());
  for (Eigen::Index e = 0; e < d.x_train.cols(); ++e) {
    const double margin = d.y_train(e) * d.x_train.col(e).dot(y);
    acc += logistic_loss_d1(margin) * d.y_train(e) * d.x_train.col(e);
  }
  acc /= static_cast<double>(d.x_train.cols());
  return acc + (x.array().exp() * y.array()).matrix();
}

Vec LogRegHyper::hess_gyy_vec_det(int i, const Vec& x, const Vec& y, const Vec& v) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  Vec acc = Vec::Zero(dim_y());
  for (Eigen::Index e = 0; e < d.x_train.cols(); ++e) {
    const double margin = d.y_train(e) * d.x_train.col(e).dot(y);
    acc += logistic_loss_d2(margin) * d.x_train.col(e).dot(v) * d.x_train.col(e);
  }
  acc /= static_cast<double>(d.x_train.cols());
  return acc + (x.array().exp() * v.array()).matrix();
}

// The data term of the lower objective has no x dependence, so the mixed
// block comes from the ridge term alone and is diagonal.
Vec LogRegHyper::jac_gxy_vec_det(int, const Vec& x, const Vec& y, const Vec& v) const {
  return (x.array().exp() * y.array() * v.array()).matrix();
}

double LogRegHyper::f_value_det(int i, const Vec&, const Vec& y) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  double acc = 0.0;
  for (Eigen::Index e = 0; e < d.x_val.cols(); ++e) {
    acc += logistic_loss(d.y_val(e) * d.x_val.col(e).dot(y));
  }
  return acc / static_cast<double>(d.x_val.cols());
}

double LogRegHyper::g_value_det(int i, const Vec& x, const Vec& y) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  double acc = 0.0;
  for (Eigen::Index e = 0; e < d.x_train.cols(); ++e) {
    acc += logistic_loss(d.y_train(e) * d.x_train.col(e).dot(y));
  }
  acc /= static_cast<double>(d.x_train.cols());
  return acc + 0.5 * (x.array().exp() * y.array().square()).sum();
}

Vec LogRegHyper::grad_gx_det(int, const Vec& x, const Vec& y) const {
  return 0.5 * (x.array().exp() * y.array().square()).matrix();
}

// Sampled queries draw one data index per realization; queries sharing a
// drawn sample handle see the same index, which is what ties the assembly
// step's gradient and Jacobian calls to the solver's index-0 samples.
Vec LogRegHyper::sample_grad_fx(int, const Vec&, const Vec&, std::uint64_t) const {
  return Vec::Zero(dim_x());
}

Vec LogRegHyper::sample_grad_fy(int i, const Vec&, const Vec& y, std::uint64_t ds) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  Rng rng(mix_key(ds, kTagIndex));
  const auto e = static_cast<Eigen::Index>(rng.uniform_below(static_cast<std::uint64_t>(d.x_val.cols())));
  const double margin = d.y_val(e) * d.x_val.col(e).dot(y);
  return logistic_loss_d1(margin) * d.y_val(e) * d.x_val.col(e);
}

Vec LogRegHyper::sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t ds) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  Rng rng(mix_key(ds, kTagIndex));
  const auto e =
      static_cast<Eigen::Index>(rng.uniform_below(static_cast<std::uint64_t>(d.x_train.cols())));
  const double margin = d.y_train(e) * d.x_train.col(e).dot(y);
  return logistic_loss_d1(margin) * d.y_train(e) * d.x_train.col(e) +
         (x.array().exp() * y.array()).matrix();
}

Vec LogRegHyper::sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                     std::uint64_t ds) const {
  const auto& d = data_[static_cast<std::size_t>(i)];
  Rng rng(mix_key(ds, kTagIndex));
  const auto e =
      static_cast<Eigen::Index>(rng.uniform_below(static_cast<std::uint64_t>(d.x_train.cols())));
  const double margin = d.y_train(e) * d.x_train.col(e).dot(y);
  return logistic_loss_d2(margin) * d.x_train.col(e).dot(v) * d.x_train.col(e) +
         (x.array().exp() * v.array()).matrix();
}

Vec LogRegHyper::sample_jac_gxy_vec(int, const Vec& x, const Vec& y, const Vec& v,
                                    std::uint64_t) const {
  return (x.array().exp() * y.array() * v.array()).matrix();
}

void LogRegHyper::export_csv(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  char buf[32];
  for (int i = 0; i < agents(); ++i) {
    const auto& d = data_[static_cast<std::size_t>(i)];
    std::ofstream out(dir / ("node_" + std::to_string(i) + ".csv"));
    if (!out) throw std::runtime_error("cannot write dataset file in " + dir.string());
    auto write_block = [&](const Mat& xs, const Vec& ys) {
      for (Eigen::Index e = 0; e < xs.cols(); ++e) {
        for (Eigen::Index j = 0; j < xs.rows(); ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", xs(j, e));
          out << buf << ',';
        }
        std::snprintf(buf, sizeof buf, "%.17g", ys(e));
        out << buf << '\n';
      }
    };
    write_block(d.x_train, d.y_train);
    write_block(d.x_val, d.y_val);
  }
}

// ---------------------------------------------------------------------------
// DscoAdapter
// ---------------------------------------------------------------------------

DscoAdapter::DscoAdapter(DscoSpec spec, std::uint64_t master_seed, int batch)
    : BilevelOracle(static_cast<int>(spec.inner_value.size()), spec.dim_x, spec.dim_y, master_seed,
                    batch),
      spec_(std::move(spec)) {
  const auto n = spec_.inner_value.size();
  if (spec_.inner_vjp.size() != n || spec_.outer_value.size() != n || spec_.outer_grad.size() != n) {
    throw std::invalid_argument("compositional adapter needs matching callback lists per agent");
  }
}

Vec DscoAdapter::grad_fx_det(int, const Vec&, const Vec&) const { return Vec::Zero(dim_x()); }
Vec DscoAdapter::grad_fy_det(int i, const Vec&, const Vec& y) const {
  return spec_.outer_grad[static_cast<std::size_t>(i)](y);
}
Vec DscoAdapter::grad_gy_det(int i, const Vec& x, const Vec& y) const {
  return y - spec_.inner_value[static_cast<std::size_t>(i)](x);
}
Vec DscoAdapter::hess_gyy_vec_det(int, const Vec&, const Vec&, const Vec& v) const { return v; }
Vec DscoAdapter::jac_gxy_vec_det(int i, const Vec& x, const Vec&, const Vec& v) const {
  return -spec_.inner_vjp[static_cast<std::size_t>(i)](x, v);
}
double DscoAdapter::f_value_det(int i, const Vec&, const Vec& y) const {
  return spec_.outer_value[static_cast<std::size_t>(i)](y);
}
double DscoAdapter::g_value_det(int i, const Vec& x, const Vec& y) const {
  return 0.5 * y.squaredNorm() - spec_.inner_value[static_cast<std::size_t>(i)](x).dot(y);
}
Vec DscoAdapter::grad_gx_det(int i, const Vec& x, const Vec& y) const {
  return -spec_.inner_vjp[static_cast<std::size_t>(i)](x, y);
}

Vec DscoAdapter::y_star(const Vec& x) const {
  Vec acc = spec_.inner_value[0](x);
  for (std::size_t i = 1; i < spec_.inner_value.size(); ++i) acc += spec_.inner_value[i](x);
  return acc / static_cast<double>(spec_.inner_value.size());
}
Mat DscoAdapter::hess_yy_mean(const Vec&, const Vec&) const {
  return Mat::Identity(dim_y(), dim_y());
}
Mat DscoAdapter::jac_xy_mean(const Vec& x, const Vec&) const {
  Mat jac(dim_x(), dim_y());
  Vec basis = Vec::Zero(dim_y());
  for (int l = 0; l < dim_y(); ++l) {
    basis(l) = 1.0;
    Vec col = Vec::Zero(dim_x());
    for (int i = 0; i < agents(); ++i) col += jac_gxy_vec_det(i, x, Vec::Zero(dim_y()), basis);
    jac.col(l) = col / static_cast<double>(agents());
    basis(l) = 0.0;
  }
  return jac;
}
Vec DscoAdapter::grad_fx_mean(const Vec&, const Vec&) const { return Vec::Zero(dim_x()); }
Vec DscoAdapter::grad_fy_mean(const Vec&, const Vec& y) const {
  Vec acc = spec_.outer_grad[0](y);
  for (std::size_t i = 1; i < spec_.outer_grad.size(); ++i) acc += spec_.outer_grad[i](y);
  return acc / static_cast<double>(spec_.outer_grad.size());
}
double DscoAdapter::upper_value(const Vec& x) const {
  const Vec ys = y_star(x);
  double acc = 0.0;
  for (const auto& f : spec_.outer_value) acc += f(ys);
  return acc / static_cast<double>(spec_.outer_value.size());
}

Vec DscoAdapter::local_y_star(int i, const Vec& x) const {
  return spec_.inner_value[static_cast<std::size_t>(i)](x);
}
Vec DscoAdapter::local_hypergradient(int i, const Vec& x) const {
  const auto idx = static_cast<std::size_t>(i);
  return spec_.inner_vjp[idx](x, spec_.outer_grad[idx](spec_.inner_value[idx](x)));
}

Vec DscoAdapter::sample_grad_fx(int, const Vec&, const Vec&, std::uint64_t) const {
  return Vec::Zero(dim_x());
}
Vec DscoAdapter::sample_grad_fy(int i, const Vec& x, const Vec& y, std::uint64_t ds) const {
  return grad_fy_det(i, x, y) + additive_noise(ds, kTagFy, spec_.sigma_outer, dim_y());
}
Vec DscoAdapter::sample_grad_gy(int i, const Vec& x, const Vec& y, std::uint64_t ds) const {
  return grad_gy_det(i, x, y) + additive_noise(ds, kTagGy, spec_.sigma_inner, dim_y());
}
Vec DscoAdapter::sample_hess_gyy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                     std::uint64_t) const {
  // The reduction makes the lower Hessian exactly the identity.
  return hess_gyy_vec_det(i, x, y, v);
}
Vec DscoAdapter::sample_jac_gxy_vec(int i, const Vec& x, const Vec& y, const Vec& v,
                                    std::uint64_t ds) const {
  return jac_gxy_vec_det(i, x, y, v) + additive_noise(ds, kTagJac, spec_.sigma_inner, dim_x());
}

// ---------------------------------------------------------------------------
// Generators, dataset IO, factories
// ---------------------------------------------------------------------------

std::vector<LogRegNodeData> gen_synthetic_logreg(int p, int n, int samples_per_node,
                                                 double noise_eps, double het_rate,
                                                 std::uint64_t data_seed) {
  if (p < 1 || n < 1 || samples_per_node < 2) {
    throw std::invalid_argument("logistic generator needs p >= 1, n >= 1, samples_per_node >= 2");
  }
  Rng wrng(mix_key(data_seed, 101));
  const Vec w_star = gauss_vec(wrng, p);

  std::vector<LogRegNodeData> nodes;
  nodes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_key(mix_key(data_seed, 202), static_cast<std::uint64_t>(i)));
    const double sigma = static_cast<double>(i + 1) * het_rate;  // nodes are 1-based in scale
    const int m = samples_per_node;
    Mat xs(p, m);
    Vec ys(m);
    for (int e = 0; e < m; ++e) {
      for (int j = 0; j < p; ++j) xs(j, e) = sigma * rng.normal();
      const double t = xs.col(e).dot(w_star) + noise_eps * rng.normal();
      ys(e) = t >= 0.0 ? 1.0 : -1.0;
    }
    const int m_train = m / 2;
    LogRegNodeData d;
    d.x_train = xs.leftCols(m_train);
    d.y_train = ys.head(m_train);
    d.x_val = xs.rightCols(m - m_train);
    d.y_val = ys.tail(m - m_train);
    nodes.push_back(std::move(d));
  }
  return nodes;
}

std::vector<LogRegNodeData> load_logreg_csv(const std::string& dir, int n) {
  std::vector<LogRegNodeData> nodes;
  nodes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto path = std::filesystem::path(dir) / ("node_" + std::to_string(i) + ".csv");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
      rows.push_back(std::move(row));
    }
    if (rows.size() < 2 || rows.front().size() < 2) {
      throw std::runtime_error("dataset file too small: " + path.string());
    }
    const auto m = static_cast<int>(rows.size());
    const auto p = static_cast<int>(rows.front().size()) - 1;
    Mat xs(p, m);
    Vec ys(m);
    for (int e = 0; e < m; ++e) {
      if (static_cast<int>(rows[static_cast<std::size_t>(e)].size()) != p + 1) {
        throw std::runtime_error("ragged dataset file: " + path.string());
      }
      for (int j = 0; j < p; ++j) xs(j, e) = rows[static_cast<std::size_t>(e)][static_cast<std::size_t>(j)];
      ys(e) = rows[static_cast<std::size_t>(e)][static_cast<std::size_t>(p)];
    }
    const int m_train = m / 2;
    LogRegNodeData d;
    d.x_train = xs.leftCols(m_train);
    d.y_train = ys.head(m_train);
    d.x_val = xs.rightCols(m - m_train);
    d.y_val = ys.tail(m - m_train);
    nodes.push_back(std::move(d));
  }
  return nodes;
}

double Problem::upper_loss(const Vec& xbar, const Vec& ybar) const {
  if (closed_form != nullptr) return closed_form->upper_value(xbar);
  double acc = 0.0;
  for (int i = 0; i < oracle->agents(); ++i) acc += oracle->f_value_det(i, xbar, ybar);
  return acc / static_cast<double>(oracle->agents());
}

Problem make_quadratic(int n, int p, int q, double het, QuadraticBilevel::Noise noise,
                       std::uint64_t data_seed, std::uint64_t stream_seed, int batch,
                       bool share_agent_streams) {
  if (n < 1 || p < 1 || q < 1) throw std::invalid_argument("quadratic instance needs n, p, q >= 1");
  Rng rng(mix_key(data_seed, 303));
  Mat base = Mat::Zero(q, p);
  for (int j = 0; j < std::min(p, q); ++j) base(j, j) = 1.0;
  for (int r = 0; r < q; ++r) {
    for (int c = 0; c < p; ++c) base(r, c) += 0.3 * rng.normal() / std::sqrt(static_cast<double>(p));
  }
  const Vec a_base = gauss_vec(rng, q);

  std::vector<Mat> bs;
  std::vector<Vec> as;
  bs.reserve(static_cast<std::size_t>(n));
  as.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Mat bi = base;
    for (int r = 0; r < q; ++r) {
      for (int c = 0; c < p; ++c) bi(r, c) += het * rng.normal() / std::sqrt(static_cast<double>(p));
    }
    bs.push_back(std::move(bi));
    as.push_back(a_base + het * gauss_vec(rng, q));
  }

  double a_norm_max = 0.0;
  for (const auto& a : as) a_norm_max = std::max(a_norm_max, a.norm());

  Problem prob;
  prob.id = "quad";
  auto oracle = std::make_unique<QuadraticBilevel>(std::move(bs), std::move(as), noise, stream_seed,
                                                   batch, share_agent_streams);
  prob.closed_form = oracle.get();
  prob.local_solves = oracle.get();
  prob.constants = ProblemConstants{/*mu_g=*/1.0, /*L_g1=*/1.0, /*L_g2=*/0.0,
                                    /*L_f0=*/1.0 + a_norm_max, /*L_f1=*/1.0,
                                    noise.sigma_f, noise.sigma_g1, noise.sigma_g2};
  prob.oracle = std::move(oracle);
  return prob;
}

Problem make_quadratic_reference(std::uint64_t stream_seed, QuadraticBilevel::Noise noise) {
  std::vector<Mat> bs{Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, 3.0)};
  std::vector<Vec> as{Vec::Constant(1, 0.0), Vec::Constant(1, 4.0)};
  Problem prob;
  prob.id = "quad-ref";
  auto oracle = std::make_unique<QuadraticBilevel>(std::move(bs), std::move(as), noise, stream_seed);
  prob.closed_form = oracle.get();
  prob.local_solves = oracle.get();
  prob.constants =
      ProblemConstants{1.0, 1.0, 0.0, 5.0, 1.0, noise.sigma_f, noise.sigma_g1, noise.sigma_g2};
  prob.oracle = std::move(oracle);
  return prob;
}

namespace {

Problem wrap_logreg(std::vector<LogRegNodeData> data, std::uint64_t stream_seed, int batch) {
  double max_sq = 0.0;
  for (const auto& d : data) {
    for (Eigen::Index e = 0; e < d.x_train.cols(); ++e) {
      max_sq = std::max(max_sq, d.x_train.col(e).squaredNorm());
    }
    for (Eigen::Index e = 0; e < d.x_val.cols(); ++e) {
      max_sq = std::max(max_sq, d.x_val.col(e).squaredNorm());
    }
  }
  Problem prob;
  prob.id = "logreg";
  prob.oracle = std::make_unique<LogRegHyper>(std::move(data), stream_seed, batch);
  // Constants declared at the lambda = 0 reference: unit ridge curvature plus
  // the data-term bounds (|psi''| <= 1/4, |psi'| <= 1, |psi'''| <= 0.1).
  prob.constants = ProblemConstants{/*mu_g=*/1.0,
                                    /*L_g1=*/1.0 + 0.25 * max_sq,
                                    /*L_g2=*/1.0 + 0.1 * std::pow(max_sq, 1.5),
                                    /*L_f0=*/std::sqrt(max_sq),
                                    /*L_f1=*/0.25 * max_sq,
                                    0.0, 0.0, 0.0};
  return prob;
}

}  // namespace

Problem make_logreg(int p, int n, int samples_per_node, double noise_eps, double het_rate,
                    std::uint64_t data_seed, std::uint64_t stream_seed, int batch) {
  return wrap_logreg(gen_synthetic_logreg(p, n, samples_per_node, noise_eps, het_rate, data_seed),
                     stream_seed, batch);
}

Problem make_logreg_from_csv(const std::string& dir, int n, std::uint64_t stream_seed, int batch) {
  return wrap_logreg(load_logreg_csv(dir, n), stream_seed, batch);
}

Problem make_dsco_linear(int n, int p, int q, double spread, std::uint64_t data_seed,
                         std::uint64_t stream_seed, int batch) {
  if (n < 1 || p < 1 || q < 1) throw std::invalid_argument("linear instance needs n, p, q >= 1");
  Rng rng(mix_key(data_seed, 404));
  Mat base = Mat::Zero(q, p);
  for (int j = 0; j < std::min(p, q); ++j) base(j, j) = 1.0;
  for (int r = 0; r < q; ++r) {
    for (int c = 0; c < p; ++c) base(r, c) += 0.3 * rng.normal() / std::sqrt(static_cast<double>(p));
  }
  auto maps = std::make_shared<std::vector<Mat>>();
  maps->reserve(static_cast<std::size_t>(n));
  double op_norm_max = 0.0;
  for (int i = 0; i < n; ++i) {
    Mat ai = base;
    for (int r = 0; r < q; ++r) {
      for (int c = 0; c < p; ++c) ai(r, c) += spread * rng.normal() / std::sqrt(static_cast<double>(p));
    }
    op_norm_max = std::max(op_norm_max, ai.operatorNorm());
    maps->push_back(std::move(ai));
  }

  DscoSpec spec;
  spec.dim_x = p;
  spec.dim_y = q;
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    spec.inner_value.push_back([maps, idx](const Vec& x) { return (*maps)[idx] * x; });
    spec.inner_vjp.push_back(
        [maps, idx](const Vec& x, const Vec& v) { (void)x; return Vec((*maps)[idx].transpose() * v); });
    spec.outer_value.push_back([](const Vec& y) { return 0.5 * y.squaredNorm(); });
    spec.outer_grad.push_back([](const Vec& y) { return y; });
  }

  Problem prob;
  prob.id = "dsco-linear";
  auto oracle = std::make_unique<DscoAdapter>(std::move(spec), stream_seed, batch);
  prob.closed_form = oracle.get();
  prob.local_solves = oracle.get();
  prob.constants = ProblemConstants{1.0, 1.0 + op_norm_max, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0};
  prob.oracle = std::move(oracle);
  return prob;
}

Problem make_problem(const ProblemSpec& spec, std::uint64_t seed) {
  const std::uint64_t data_seed = spec.data_seed.value_or(seed);
  Problem prob;
  if (spec.id == "quad") {
    prob = make_quadratic(spec.n, spec.p, spec.q, spec.het,
                          QuadraticBilevel::Noise{spec.sigma_f, spec.sigma_g1, spec.sigma_g2},
                          data_seed, seed, spec.batch);
  } else if (spec.id == "quad-ref") {
    prob = make_quadratic_reference(seed,
                                    QuadraticBilevel::Noise{spec.sigma_f, spec.sigma_g1, spec.sigma_g2});
  } else if (spec.id == "logreg") {
    prob = spec.dataset_dir
               ? make_logreg_from_csv(*spec.dataset_dir, spec.n, seed, spec.batch)
               : make_logreg(spec.p, spec.n, spec.samples_per_node, spec.noise_eps, spec.het_rate,
                             data_seed, seed, spec.batch);
  } else if (spec.id == "dsco-linear") {
    prob = make_dsco_linear(spec.n, spec.p, spec.q, spec.het, data_seed, seed, spec.batch);
  } else {
    throw std::invalid_argument("unknown problem id: " + spec.id);
  }
  if (spec.deterministic) prob.oracle->set_expectation_mode(true);
  return prob;
}

}  // namespace dsbo
