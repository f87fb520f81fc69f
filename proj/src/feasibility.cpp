#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "gnnopf/errors.hpp"
#include "gnnopf/opf.hpp"

namespace gnnopf {

bool FeasibilityReport::feasible() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.satisfied; });
}

const ConstraintCheck& FeasibilityReport::at(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw ContractError("no feasibility check named " + std::string(name));
}

std::string FeasibilityReport::to_json() const {
  nlohmann::json doc;
  doc["feasible"] = feasible();
  doc["tolerance"] = tolerance;
  auto& arr = doc["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name},
                   {"satisfied", c.satisfied},
                   {"worst_violation", c.worst_violation},
                   {"worst_bus", c.worst_bus}});
  }
  return doc.dump(2);
}

namespace {

void record(ConstraintCheck& check, double violation, int bus) {
  if (violation > check.worst_violation) {
    check.worst_violation = violation;
    check.worst_bus = bus;
  }
}

}  // namespace

FeasibilityReport check_feasibility(const GridCase& grid, const StateMatrix& state,
                                    const Eigen::Ref<const Eigen::VectorXd>& p_load,
                                    const Eigen::Ref<const Eigen::VectorXd>& q_load, double tol) {
  const int n = grid.n_buses();
  if (state.size() != n || state.delta.size() != n || state.p.size() != n || state.q.size() != n) {
    throw ContractError("check_feasibility: state dimension does not match the case");
  }
  if (p_load.size() != n || q_load.size() != n) {
    throw ContractError("check_feasibility: load vectors must have length N");
  }

  // Net-injection bounds per bus from the generators it hosts.
  Eigen::VectorXd p_lo = -p_load;
  Eigen::VectorXd p_hi = -p_load;
  Eigen::VectorXd q_lo = -q_load;
  Eigen::VectorXd q_hi = -q_load;
  for (const auto& g : grid.generators) {
    p_lo[g.bus] += g.p_min;
    p_hi[g.bus] += g.p_max;
    q_lo[g.bus] += g.q_min;
    q_hi[g.bus] += g.q_max;
  }

  FeasibilityReport report;
  report.tolerance = tol;
  ConstraintCheck v_min{"v_min"}, v_max{"v_max"}, d_min{"delta_min"}, d_max{"delta_max"};
  ConstraintCheck p_min{"p_min"}, p_max{"p_max"}, q_min{"q_min"}, q_max{"q_max"};
  ConstraintCheck p_bal{"p_balance"}, q_bal{"q_balance"};

  const auto inj = injections(state.v, state.delta, build_admittance(grid));
  for (int i = 0; i < n; ++i) {
    const auto& b = grid.buses[static_cast<std::size_t>(i)];
    record(v_min, b.v_min - state.v[i], i);
    record(v_max, state.v[i] - b.v_max, i);
    record(d_min, b.delta_min - state.delta[i], i);
    record(d_max, state.delta[i] - b.delta_max, i);
    record(p_min, p_lo[i] - state.p[i], i);
    record(p_max, state.p[i] - p_hi[i], i);
    record(q_min, q_lo[i] - state.q[i], i);
    record(q_max, state.q[i] - q_hi[i], i);
    record(p_bal, std::abs(state.p[i] - inj.p[i]), i);
    record(q_bal, std::abs(state.q[i] - inj.q[i]), i);
  }
  for (auto* c : {&v_min, &v_max, &d_min, &d_max, &p_min, &p_max, &q_min, &q_max, &p_bal, &q_bal}) {
    c->satisfied = c->worst_violation <= tol && std::isfinite(c->worst_violation);
    report.checks.push_back(*c);
  }
  return report;
}

}  // namespace gnnopf
