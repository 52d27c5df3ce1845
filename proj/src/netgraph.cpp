#include "dsbo/netgraph.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace dsbo {

namespace {

constexpr double kSymTol = 1e-12;
constexpr double kRowSumTol = 1e-9;
constexpr double kGapTol = 1e-12;

}  // namespace

MixingMatrix::MixingMatrix(Mat weights) : w_(std::move(weights)) {
  const auto n = w_.rows();
  if (n < 1 || w_.cols() != n) {
    throw MixingError(MixingError::Kind::not_square, "mixing matrix must be square and non-empty");
  }
  if ((w_.array() < 0.0).any()) {
    throw MixingError(MixingError::Kind::negative_weight, "mixing matrix has a negative weight");
  }
  const double asym = (w_ - w_.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymTol) {
    throw MixingError(MixingError::Kind::not_symmetric,
                      "mixing matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  const Vec row_sums = w_.rowwise().sum();
  const double row_err = (row_sums.array() - 1.0).abs().maxCoeff();
  if (row_err > kRowSumTol) {
    throw MixingError(MixingError::Kind::not_stochastic,
                      "mixing matrix rows must sum to 1 (max deviation " + std::to_string(row_err) + ")");
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && w_(i, j) != 0.0) ++directed_edges_;
    }
  }

  if (n == 1) {
    rho_ = 0.0;
    lambda_min_ = 1.0;
    return;
  }
  // Symmetric, so the spectrum is real; eigenvalues come back sorted
  // ascending and the top one is 1 (up to roundoff).
  Eigen::SelfAdjointEigenSolver<Mat> es(w_, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw MixingError(MixingError::Kind::no_spectral_gap, "eigendecomposition of mixing matrix failed");
  }
  const Vec& ev = es.eigenvalues();
  rho_ = std::max(std::abs(ev(0)), std::abs(ev(n - 2)));
  lambda_min_ = ev(0);
  if (rho_ >= 1.0 - kGapTol) {
    throw MixingError(MixingError::Kind::no_spectral_gap,
                      "mixing matrix has no spectral gap (|lambda_2| = " + std::to_string(rho_) + ")");
  }
}

MixingMatrix build_ring(int n, double self_weight) {
  if (n < 2) throw MixingError(MixingError::Kind::not_square, "ring topology needs n >= 2");
  if (!(self_weight > 0.0 && self_weight < 1.0)) {
    throw MixingError(MixingError::Kind::no_spectral_gap, "ring self-weight must lie in (0, 1)");
  }
  Mat w = Mat::Zero(n, n);
  const double side = (1.0 - self_weight) / 2.0;
  for (int i = 0; i < n; ++i) {
    w(i, i) = self_weight;
    w(i, (i + 1) % n) += side;
    w(i, (i + n - 1) % n) += side;  // n = 2: both neighbors coincide, weights merge
  }
  return MixingMatrix(std::move(w));
}

MixingMatrix build_complete(int n) {
  if (n < 1) throw MixingError(MixingError::Kind::not_square, "complete topology needs n >= 1");
  Mat w = Mat::Constant(n, n, 1.0 / static_cast<double>(n));
  return MixingMatrix(std::move(w));
}

MixingMatrix load_mixing_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mixing matrix file: " + path);
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
  if (rows.empty()) throw std::runtime_error("mixing matrix file is empty: " + path);
  const auto n = rows.size();
  Mat w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) {
      throw std::runtime_error("mixing matrix file is not square: " + path);
    }
    for (std::size_t j = 0; j < n; ++j) w(i, j) = rows[i][j];
  }
  return MixingMatrix(std::move(w));
}

AgentField mix(const MixingMatrix& w, const AgentField& f, CommLedger* comm) {
  if (f.agents() != w.agents()) {
    throw std::invalid_argument("field has " + std::to_string(f.agents()) + " columns, topology has " +
                                std::to_string(w.agents()) + " agents");
  }
  if (comm != nullptr) {
    comm->scalars += w.directed_edges() * static_cast<std::uint64_t>(f.dim());
  }
  // Column i of the product is sum_j w_ij f_j (weights symmetric).
  return AgentField{f.m * w.weights()};
}

}  // namespace dsbo
