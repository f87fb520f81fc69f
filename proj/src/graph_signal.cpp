#include "gnnopf/graph_signal.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <Eigen/Eigenvalues>

#include "gnnopf/errors.hpp"

namespace gnnopf {

namespace {

Eigen::SparseMatrix<double, Eigen::RowMajor> compress(const Eigen::MatrixXd& w) {
  std::vector<Eigen::Triplet<double>> entries;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (w(i, j) != 0.0) entries.emplace_back(static_cast<int>(i), static_cast<int>(j), w(i, j));
    }
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> s(w.rows(), w.cols());
  s.setFromTriplets(entries.begin(), entries.end());
  s.makeCompressed();
  return s;
}

}  // namespace

Gso Gso::from_weights(const Eigen::MatrixXd& w) {
  if (w.rows() != w.cols()) throw ContractError("GSO must be square");
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (w(i, i) != 0.0) throw ContractError("GSO must have a zero diagonal");
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (w(i, j) != w(j, i)) throw ContractError("GSO must be symmetric");
      if (!(w(i, j) >= 0.0)) throw ContractError("GSO weights must be nonnegative");
    }
  }
  Gso gso;
  gso.w = w;
  gso.sparse = compress(w);
  return gso;
}

double default_kernel_k(const GridCase& grid) {
  if (grid.branches.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& br : grid.branches) sum += br.r * br.r + br.x * br.x;
  return static_cast<double>(grid.branches.size()) / sum;
}

Gso build_gso(const GridCase& grid, double kernel_k, double threshold_omega, bool normalize) {
  if (!(kernel_k > 0.0)) throw ContractError("kernel_k must be positive");
  if (!(threshold_omega >= 0.0 && threshold_omega < 1.0)) {
    throw ContractError("threshold_omega must lie in [0, 1)");
  }
  const int n = grid.n_buses();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (const auto& br : grid.branches) {
    const double weight = std::exp(-kernel_k * (br.r * br.r + br.x * br.x));
    if (weight > threshold_omega) {
      w(br.from, br.to) = weight;
      w(br.to, br.from) = weight;
    }
  }
  if (normalize) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w, Eigen::EigenvaluesOnly);
    const double radius = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (radius > 0.0) w /= radius;
  }
  Gso gso = Gso::from_weights(w);
  gso.kernel_k = kernel_k;
  gso.threshold_omega = threshold_omega;
  gso.normalized = normalize;
  return gso;
}

Gso build_gso(const GridCase& grid) { return build_gso(grid, default_kernel_k(grid), 0.01); }

void FilterBank::validate() const {
  if (taps.empty()) throw ContractError("filter bank needs at least one tap");
  for (const auto& h : taps) {
    if (h.rows() != taps.front().rows() || h.cols() != taps.front().cols()) {
      throw ContractError("filter taps must share their shape");
    }
  }
}

Eigen::MatrixXd graph_shift(const Gso& gso, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.rows() != gso.size()) {
    throw ContractError("graph_shift: signal has " + std::to_string(x.rows()) +
                        " rows, GSO has " + std::to_string(gso.size()) + " nodes");
  }
  Eigen::MatrixXd out = gso.sparse * x;
  return out;
}

Eigen::MatrixXd graph_convolution(const Gso& gso, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                  const FilterBank& bank) {
  bank.validate();
  if (x.rows() != gso.size()) throw ContractError("graph_convolution: signal/GSO size mismatch");
  if (x.cols() != bank.taps.front().rows()) {
    throw ContractError("graph_convolution: signal has " + std::to_string(x.cols()) +
                        " features, taps expect " + std::to_string(bank.taps.front().rows()));
  }
  Eigen::MatrixXd shifted = x;
  Eigen::MatrixXd out = shifted * bank.taps[0];
  for (int k = 1; k < bank.size(); ++k) {
    shifted = (gso.sparse * shifted).eval();
    out.noalias() += shifted * bank.taps[static_cast<std::size_t>(k)];
  }
  return out;
}

std::vector<int> k_hop_set(const Gso& gso, int node, int k) {
  const int n = gso.size();
  if (node < 0 || node >= n) throw ContractError("k_hop_set: node out of range");
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::deque<int> queue{node};
  dist[static_cast<std::size_t>(node)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (dist[static_cast<std::size_t>(u)] >= k) continue;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(gso.sparse, u); it; ++it) {
      const int v = static_cast<int>(it.col());
      if (dist[static_cast<std::size_t>(v)] < 0) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push_back(v);
      }
    }
  }
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    if (dist[static_cast<std::size_t>(i)] >= 0) out.push_back(i);
  }
  return out;
}

}  // namespace gnnopf
