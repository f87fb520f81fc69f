#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gnnopf/electrical.hpp"
#include "gnnopf/grid_case.hpp"

namespace gnnopf {

enum class OpfStatus { optimal, infeasible, max_iter };

std::string_view to_string(OpfStatus status);

/// Sum over generators of c2 p^2 + c1 p + c0.
double evaluate_cost(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_gen);

struct DcSolution {
  Eigen::VectorXd gen_p;
  Eigen::VectorXd angles;
  double cost = 0.0;
  OpfStatus status = OpfStatus::infeasible;
  /// Marginal price of the balance constraint.
  double lambda = 0.0;
};

/// Lossless DC OPF: unit voltages, linearized flows, no line limits. Without
/// line limits the dispatch reduces to equal-incremental-cost allocation,
/// solved exactly over the piecewise-linear breakpoint structure; angles then
/// follow from the reduced susceptance system with the slack angle at 0.
DcSolution solve_dcopf(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_load);

struct AcopfOptions {
  double feas_tol = 1e-6;
  double opt_tol = 1e-4;
  double mu_initial = 1.0;
  double mu_factor = 0.1;
  double mu_final = 1e-8;
  double tau = 0.995;
  int max_iterations = 100;
  /// Inner loop for a barrier value stops once its error is below kappa * mu.
  double kappa_epsilon = 10.0;

  bool operator==(const AcopfOptions&) const = default;
};

struct OpfSolution {
  Eigen::VectorXd p_star;
  Eigen::VectorXd q_gen;
  StateMatrix state;
  double cost = 0.0;
  OpfStatus status = OpfStatus::max_iter;
  int iterations = 0;
  /// Stationarity residual of the Lagrangian (objective scaled as solved).
  double kkt_residual = 0.0;
  /// Largest power-balance residual at the returned point, per-unit.
  double equality_residual = 0.0;
  /// Barrier parameter of every completed subproblem, in order.
  std::vector<double> mu_history;
  /// Objective scale applied internally (f / objective_scale is minimized).
  double objective_scale = 1.0;
};

/// Interior-point ACOPF. Variables are angles (slack fixed at 0), voltage
/// magnitudes and generator (p, q); loads are data. Box bounds are handled by
/// a log barrier whose parameter decreases geometrically; each barrier
/// subproblem is solved by Newton steps on the KKT system with inertia
/// correction, a fraction-to-boundary rule and an l1 merit line search.
OpfSolution solve_acopf(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_load,
                        const Eigen::Ref<const Eigen::VectorXd>& q_load, const DcSolution& warm,
                        const AcopfOptions& options = {});

struct ConstraintCheck {
  std::string name;
  bool satisfied = true;
  /// Largest violation (0 when satisfied exactly).
  double worst_violation = 0.0;
  /// Bus index of the worst violation, -1 if none.
  int worst_bus = -1;
};

struct FeasibilityReport {
  std::vector<ConstraintCheck> checks;
  double tolerance = 0.0;

  bool feasible() const;
  const ConstraintCheck& at(std::string_view name) const;
  std::string to_json() const;
};

/// Checks X^min <= X <= X^max and the power-balance equations for a state.
/// The p and q rows of the bounds depend on the loads: at generator buses
/// p ranges over [p_min - p_load, p_max - p_load], elsewhere p = -p_load.
FeasibilityReport check_feasibility(const GridCase& grid, const StateMatrix& state,
                                    const Eigen::Ref<const Eigen::VectorXd>& p_load,
                                    const Eigen::Ref<const Eigen::VectorXd>& q_load, double tol);

}  // namespace gnnopf
