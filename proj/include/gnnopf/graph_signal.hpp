#pragma once

#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "gnnopf/grid_case.hpp"

namespace gnnopf {

/// Symmetric, nonnegative, zero-diagonal graph shift operator W.
struct Gso {
  Eigen::MatrixXd w;
  /// Same matrix in compressed form; all shifts go through this.
  Eigen::SparseMatrix<double, Eigen::RowMajor> sparse;
  double kernel_k = 0.0;
  double threshold_omega = 0.0;
  bool normalized = false;

  int size() const { return static_cast<int>(w.rows()); }

  /// Wraps an arbitrary weight matrix; throws ContractError unless it is
  /// square, symmetric, nonnegative and has a zero diagonal.
  static Gso from_weights(const Eigen::MatrixXd& w);
};

/// 1 / mean(|z|^2) over the case's branches.
double default_kernel_k(const GridCase& grid);

/// w_ij = exp(-k |z_ij|^2) on each branch, kept only when above omega. With
/// `normalize`, W is divided by its spectral radius after thresholding.
Gso build_gso(const GridCase& grid, double kernel_k, double threshold_omega,
              bool normalize = false);

/// Default kernel (see default_kernel_k) and omega = 0.01.
Gso build_gso(const GridCase& grid);

struct FilterBank {
  /// H_0 .. H_{K-1}, each F x G.
  std::vector<Eigen::MatrixXd> taps;

  int size() const { return static_cast<int>(taps.size()); }
  void validate() const;
};

/// W X.
Eigen::MatrixXd graph_shift(const Gso& gso, const Eigen::Ref<const Eigen::MatrixXd>& x);

/// sum_k W^k X H_k evaluated by repeated shifts W(W(...X)).
Eigen::MatrixXd graph_convolution(const Gso& gso, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                  const FilterBank& bank);

/// Nodes within k hops of `node` on the support of W, sorted, including node.
std::vector<int> k_hop_set(const Gso& gso, int node, int k);

}  // namespace gnnopf
