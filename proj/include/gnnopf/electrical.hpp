#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gnnopf/grid_case.hpp"

namespace gnnopf {

/// Bus admittance Y = G + jB, dense (N <= a few hundred here).
struct AdmittanceMatrix {
  Eigen::MatrixXd g_bus;
  Eigen::MatrixXd b_bus;

  int size() const { return static_cast<int>(g_bus.rows()); }
};

/// Per-bus state [v, delta, p, q]; p and q are net injections.
struct StateMatrix {
  Eigen::VectorXd v;
  Eigen::VectorXd delta;
  Eigen::VectorXd p;
  Eigen::VectorXd q;

  int size() const { return static_cast<int>(v.size()); }

  /// N x 4 matrix with columns v, delta, p, q.
  Eigen::MatrixXd as_matrix() const;
  static StateMatrix from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& x);
};

struct Injections {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

/// Partial derivatives of the injections w.r.t. angles and magnitudes (N x N each).
struct InjectionJacobian {
  Eigen::MatrixXd dp_ddelta;
  Eigen::MatrixXd dp_dv;
  Eigen::MatrixXd dq_ddelta;
  Eigen::MatrixXd dq_dv;
};

AdmittanceMatrix build_admittance(const GridCase& grid);

/// Hessian of sum_n (w_p[n] p_n + w_q[n] q_n) over the variables
/// [delta_0..delta_{N-1}, v_0..v_{N-1}], a 2N x 2N symmetric matrix.
Eigen::MatrixXd injection_hessian(const Eigen::Ref<const Eigen::VectorXd>& v,
                                  const Eigen::Ref<const Eigen::VectorXd>& delta,
                                  const AdmittanceMatrix& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& w_p,
                                  const Eigen::Ref<const Eigen::VectorXd>& w_q);

/// p_n = v_n sum_j v_j (g_nj cos(d_n - d_j) + b_nj sin(d_n - d_j)),
/// q_n = v_n sum_j v_j (g_nj sin(d_n - d_j) - b_nj cos(d_n - d_j)).
Injections injections(const Eigen::Ref<const Eigen::VectorXd>& v,
                      const Eigen::Ref<const Eigen::VectorXd>& delta, const AdmittanceMatrix& y);

InjectionJacobian injection_jacobian(const Eigen::Ref<const Eigen::VectorXd>& v,
                                     const Eigen::Ref<const Eigen::VectorXd>& delta,
                                     const AdmittanceMatrix& y);

struct PowerFlowOptions {
  double tolerance = 1e-8;
  int max_iterations = 30;
  int max_halvings = 4;

  bool operator==(const PowerFlowOptions&) const = default;
};

struct PowerFlowResult {
  StateMatrix state;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
  /// 2-norm of the mismatch vector at the start and after every accepted step.
  std::vector<double> mismatch_history;
};

/// Newton-Raphson power flow from a flat start. Generator buses are PV
/// (p = sum of setpoints - load, v = setpoint), the slack bus holds its
/// voltage setpoint at angle 0 and absorbs the imbalance, other buses are PQ.
/// Setpoint vectors are indexed like grid.generators; the slack generator's
/// active setpoint is ignored.
PowerFlowResult solve_power_flow(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& q_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_p_setpoints,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_v_setpoints,
                                 const PowerFlowOptions& options = {});

PowerFlowResult solve_power_flow(const GridCase& grid, const AdmittanceMatrix& y,
                                 const Eigen::Ref<const Eigen::VectorXd>& p_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& q_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_p_setpoints,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_v_setpoints,
                                 const PowerFlowOptions& options = {});

}  // namespace gnnopf
