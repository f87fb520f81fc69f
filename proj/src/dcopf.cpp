#include <algorithm>
#include <cmath>
#include <limits>

#include "gnnopf/errors.hpp"
#include "gnnopf/opf.hpp"

namespace gnnopf {

std::string_view to_string(OpfStatus status) {
  switch (status) {
    case OpfStatus::optimal: return "optimal";
    case OpfStatus::infeasible: return "infeasible";
    case OpfStatus::max_iter: return "max_iter";
  }
  return "infeasible";
}

double evaluate_cost(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_gen) {
  if (p_gen.size() != grid.n_generators()) {
    throw ContractError("evaluate_cost: expected one value per generator");
  }
  double total = 0.0;
  for (int m = 0; m < grid.n_generators(); ++m) {
    const auto& g = grid.generators[static_cast<std::size_t>(m)];
    const double p = p_gen[m];
    total += g.cost_c2 * p * p + g.cost_c1 * p + g.cost_c0;
  }
  return total;
}

namespace {

// Output of generator g at marginal price lambda. Linear-cost units sit at a
// bound away from their price; `upper` picks the bound when lambda equals it.
double dispatch_at(const GeneratorRecord& g, double lambda, bool upper) {
  if (g.cost_c2 > 0.0) {
    return std::clamp((lambda - g.cost_c1) / (2.0 * g.cost_c2), g.p_min, g.p_max);
  }
  if (lambda > g.cost_c1 || (upper && lambda == g.cost_c1)) return g.p_max;
  return g.p_min;
}

double total_at(const GridCase& grid, double lambda, bool upper) {
  double sum = 0.0;
  for (const auto& g : grid.generators) sum += dispatch_at(g, lambda, upper);
  return sum;
}

}  // namespace

DcSolution solve_dcopf(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_load) {
  const int n = grid.n_buses();
  const int m = grid.n_generators();
  if (p_load.size() != n) throw ContractError("solve_dcopf: p_load must have length N");

  DcSolution sol;
  sol.gen_p = Eigen::VectorXd::Zero(m);
  sol.angles = Eigen::VectorXd::Zero(n);

  const double demand = p_load.sum();
  double cap_lo = 0.0;
  double cap_hi = 0.0;
  for (const auto& g : grid.generators) {
    cap_lo += g.p_min;
    cap_hi += g.p_max;
  }
  const double slack_tol = 1e-12 * std::max(1.0, std::abs(demand));
  if (demand > cap_hi + slack_tol || demand < cap_lo - slack_tol) {
    sol.status = OpfStatus::infeasible;
    sol.cost = std::numeric_limits<double>::quiet_NaN();
    return sol;
  }

  std::vector<double> breaks;
  for (const auto& g : grid.generators) {
    breaks.push_back(g.cost_c1 + 2.0 * g.cost_c2 * g.p_min);
    breaks.push_back(g.cost_c1 + 2.0 * g.cost_c2 * g.p_max);
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  bool done = false;
  for (std::size_t k = 0; k < breaks.size() && !done; ++k) {
    const double lam = breaks[k];
    const double lo = total_at(grid, lam, false);
    const double hi = total_at(grid, lam, true);
    if (demand >= lo && demand <= hi) {
      // Price sits on a breakpoint; linear units priced exactly here share the
      // remainder in proportion to their range.
      double range = 0.0;
      for (const auto& g : grid.generators) {
        if (g.cost_c2 == 0.0 && g.cost_c1 == lam) range += g.p_max - g.p_min;
      }
      const double rest = demand - lo;
      for (int i = 0; i < m; ++i) {
        const auto& g = grid.generators[static_cast<std::size_t>(i)];
        sol.gen_p[i] = dispatch_at(g, lam, false);
        if (g.cost_c2 == 0.0 && g.cost_c1 == lam && range > 0.0) {
          sol.gen_p[i] = g.p_min + rest * (g.p_max - g.p_min) / range;
        }
      }
      sol.lambda = lam;
      done = true;
      break;
    }
    if (k + 1 < breaks.size() && demand > hi && demand < total_at(grid, breaks[k + 1], false)) {
      // Strictly inside a segment: total output is affine in the price.
      const double mid = 0.5 * (lam + breaks[k + 1]);
      double fixed = 0.0;
      double inv_slope = 0.0;
      double offset = 0.0;
      std::vector<bool> free(static_cast<std::size_t>(m), false);
      for (int i = 0; i < m; ++i) {
        const auto& g = grid.generators[static_cast<std::size_t>(i)];
        const double p_mid = dispatch_at(g, mid, false);
        if (g.cost_c2 > 0.0 && p_mid > g.p_min && p_mid < g.p_max) {
          free[static_cast<std::size_t>(i)] = true;
          inv_slope += 1.0 / (2.0 * g.cost_c2);
          offset += g.cost_c1 / (2.0 * g.cost_c2);
        } else {
          fixed += p_mid;
        }
      }
      const double price = (demand - fixed + offset) / inv_slope;
      for (int i = 0; i < m; ++i) {
        const auto& g = grid.generators[static_cast<std::size_t>(i)];
        sol.gen_p[i] = free[static_cast<std::size_t>(i)]
                           ? std::clamp((price - g.cost_c1) / (2.0 * g.cost_c2), g.p_min, g.p_max)
                           : dispatch_at(g, mid, false);
      }
      sol.lambda = price;
      done = true;
    }
  }
  if (!done) {
    sol.status = OpfStatus::infeasible;
    sol.cost = std::numeric_limits<double>::quiet_NaN();
    return sol;
  }

  // Angles from the reduced susceptance system B' theta = p_inj.
  const int slack = grid.slack_bus();
  Eigen::VectorXd p_inj = -p_load;
  for (int i = 0; i < m; ++i) p_inj[grid.generators[static_cast<std::size_t>(i)].bus] += sol.gen_p[i];
  Eigen::MatrixXd bprime = Eigen::MatrixXd::Zero(n, n);
  for (const auto& br : grid.branches) {
    if (br.x == 0.0) continue;
    const double b = 1.0 / br.x;
    bprime(br.from, br.from) += b;
    bprime(br.to, br.to) += b;
    bprime(br.from, br.to) -= b;
    bprime(br.to, br.from) -= b;
  }
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    if (i != slack) keep.push_back(i);
  }
  const int r = static_cast<int>(keep.size());
  Eigen::MatrixXd reduced(r, r);
  Eigen::VectorXd rhs(r);
  for (int a = 0; a < r; ++a) {
    rhs[a] = p_inj[keep[a]];
    for (int b = 0; b < r; ++b) reduced(a, b) = bprime(keep[a], keep[b]);
  }
  const Eigen::VectorXd theta = reduced.fullPivLu().solve(rhs);
  for (int a = 0; a < r; ++a) sol.angles[keep[a]] = theta[a];

  sol.cost = evaluate_cost(grid, sol.gen_p);
  sol.status = OpfStatus::optimal;
  return sol;
}

}  // namespace gnnopf
