#include <cmath>
#include <complex>
#include <limits>

#include <doctest.h>

#include "gnnopf/electrical.hpp"
#include "gnnopf/errors.hpp"
#include "gnnopf/opf.hpp"
#include "test_support.hpp"

using namespace gnnopf;

using testing::three_bus;

TEST_SUITE("opf") {

TEST_CASE("evaluate_cost sums the quadratics") {
  const GridCase g = three_bus();
  CHECK(evaluate_cost(g, Eigen::Vector3d(1.0, 0.0, 0.0)) == doctest::Approx(1.2));
  CHECK(evaluate_cost(g, Eigen::Vector3d(0.0, 2.0, 0.5)) == doctest::Approx(0.5 * 4 + 1.0 + 1.0));
  CHECK(evaluate_cost(g, Eigen::Vector3d::Zero()) == 0.0);
  CHECK_THROWS_AS(evaluate_cost(g, Eigen::Vector2d::Zero()), ContractError);
}

TEST_CASE("DCOPF with one generator serves the whole load") {
  const GridCase g = testing::two_bus(0.0, 0.2, 0.7, 0.0);
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  REQUIRE(dc.status == OpfStatus::optimal);
  CHECK(dc.gen_p[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(dc.angles[0] == 0.0);
  CHECK(dc.angles[1] == doctest::Approx(-0.7 * 0.2).epsilon(1e-12));
}

TEST_CASE("DCOPF splits evenly between identical generators") {
  const GridCase g = testing::make_case(
      {testing::bus(0, "slack"), testing::bus(1, "generator"), testing::bus(2, "load", 1.0)},
      {testing::branch(0, 2, 0.0, 0.1), testing::branch(1, 2, 0.0, 0.1)},
      {testing::generator(0, 0.0, 2.0, 0.3, 1.0), testing::generator(1, 0.0, 2.0, 0.3, 1.0)});
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  REQUIRE(dc.status == OpfStatus::optimal);
  CHECK(dc.gen_p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dc.gen_p[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("DCOPF matches a grid search on three generators") {
  const GridCase g = three_bus();
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  REQUIRE(dc.status == OpfStatus::optimal);
  const double demand = g.p_load_ref.sum();
  CHECK(std::abs(dc.gen_p.sum() - demand) <= 1e-9);
  const double best = testing::three_bus_grid_cost(g);
  CHECK(dc.cost <= best + 1e-9);
  // The grid is fine enough that the optimum sits within a step's worth of cost.
  CHECK(best - dc.cost <= 1e-3);
  for (int k = 0; k < 3; ++k) {
    CHECK(dc.gen_p[k] >= g.generators[static_cast<std::size_t>(k)].p_min - 1e-12);
    CHECK(dc.gen_p[k] <= g.generators[static_cast<std::size_t>(k)].p_max + 1e-12);
  }
}

TEST_CASE("DCOPF angles reproduce the injections") {
  const GridCase g = load_case(testing::data_path("ieee30.json"));
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  REQUIRE(dc.status == OpfStatus::optimal);
  CHECK(std::abs(dc.gen_p.sum() - g.p_load_ref.sum()) <= 1e-9);
  Eigen::VectorXd flow = Eigen::VectorXd::Zero(g.n_buses());
  for (const auto& br : g.branches) {
    const double f = (dc.angles[br.from] - dc.angles[br.to]) / br.x;
    flow[br.from] += f;
    flow[br.to] -= f;
  }
  Eigen::VectorXd inj = -g.p_load_ref;
  for (int k = 0; k < g.n_generators(); ++k) inj[g.generators[static_cast<std::size_t>(k)].bus] += dc.gen_p[k];
  CHECK((flow - inj).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("DCOPF reports infeasible demand") {
  const GridCase g = testing::two_bus(0.0, 0.2, 6.0, 0.0);
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  CHECK(dc.status == OpfStatus::infeasible);
  CHECK(std::isnan(dc.cost));
}

TEST_CASE("ACOPF with zero load produces nothing") {
  const GridCase g = testing::two_bus(0.01, 0.1, 0.0, 0.0);
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  const OpfSolution ac = solve_acopf(g, g.p_load_ref, g.q_load_ref, dc);
  REQUIRE(ac.status == OpfStatus::optimal);
  CHECK(std::abs(ac.p_star[0]) <= 1e-6);
  CHECK(ac.equality_residual <= 1e-6);
}

TEST_CASE("ACOPF on a lossy two-bus system matches the scan oracle") {
  const double r = 0.02, x = 0.1, p = 0.8, q = 0.3;
  const GridCase g = testing::two_bus(r, x, p, q, 0.95, 1.05);
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  const OpfSolution ac = solve_acopf(g, g.p_load_ref, g.q_load_ref, dc);
  REQUIRE(ac.status == OpfStatus::optimal);
  double v0 = 0.0;
  const double oracle = testing::two_bus_scan_cost(r, x, p, q, 0.95, 1.05, 0.1, 1.0, &v0);
  CHECK(ac.cost == doctest::Approx(oracle).epsilon(1e-5));
  CHECK(ac.state.v[0] == doctest::Approx(v0).epsilon(1e-4));
  CHECK(ac.p_star[0] > p);
}

TEST_CASE("ACOPF on IEEE-30 is optimal and feasible") {
  const GridCase g = load_case(testing::data_path("ieee30.json"));
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  const OpfSolution ac = solve_acopf(g, g.p_load_ref, g.q_load_ref, dc);
  REQUIRE(ac.status == OpfStatus::optimal);
  CHECK(ac.equality_residual <= 1e-6);
  CHECK(ac.kkt_residual <= 1e-4);
  const FeasibilityReport rep = check_feasibility(g, ac.state, g.p_load_ref, g.q_load_ref, 1e-6);
  CHECK(rep.feasible());
  // Independent SLSQP solve of the same problem.
  CHECK(ac.cost == doctest::Approx(574.5211).epsilon(1e-5));
  for (std::size_t k = 1; k < ac.mu_history.size(); ++k) CHECK(ac.mu_history[k] < ac.mu_history[k - 1]);

  // The DC dispatch with flat voltage setpoints is a feasible but worse point.
  const PowerFlowResult pf = solve_power_flow(g, g.p_load_ref, g.q_load_ref, dc.gen_p,
                                              Eigen::VectorXd::Ones(g.n_generators()));
  REQUIRE(pf.converged);
  Eigen::VectorXd pg = dc.gen_p;
  const int slack = g.slack_bus();
  for (int k = 0; k < g.n_generators(); ++k) {
    if (g.generators[static_cast<std::size_t>(k)].bus == slack) pg[k] = pf.state.p[slack] + g.p_load_ref[slack];
  }
  CHECK(ac.cost <= evaluate_cost(g, pg) + 1e-9);
}

TEST_CASE("ACOPF rejects mismatched inputs") {
  const GridCase g = testing::two_bus(0.01, 0.1, 0.1, 0.0);
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  CHECK_THROWS_AS(solve_acopf(g, Eigen::Vector3d::Zero(), g.q_load_ref, dc), ContractError);
}

TEST_CASE("ACOPF flags a load beyond transfer capacity") {
  const GridCase g = testing::two_bus(0.01, 0.5, 4.0, 0.5);
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  REQUIRE(dc.status == OpfStatus::optimal);
  const OpfSolution ac = solve_acopf(g, g.p_load_ref, g.q_load_ref, dc);
  CHECK(ac.status != OpfStatus::optimal);
}

TEST_CASE("feasibility check at exact bounds and just past them") {
  const GridCase g = testing::two_bus(0.0, 0.5, 0.0, 0.0);
  StateMatrix s{Eigen::Vector2d(1.05, 0.8), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(),
                Eigen::Vector2d::Zero()};
  // Flat angles with unequal magnitudes still balance only if p, q match the injections.
  const auto inj = injections(s.v, s.delta, build_admittance(g));
  s.p = inj.p;
  s.q = inj.q;
  StateMatrix at_bounds = s;
  const Eigen::Vector2d p_load(0.0, -at_bounds.p[1]);
  const Eigen::Vector2d q_load(0.0, -at_bounds.q[1]);
  // q at the slack must fit [q_min, q_max] = [-5, 5].
  REQUIRE(std::abs(s.q[0]) < 5.0);
  FeasibilityReport rep = check_feasibility(g, at_bounds, p_load, q_load, 0.0);
  CHECK(rep.at("v_max").satisfied);
  CHECK(rep.at("v_min").satisfied);
  CHECK(rep.at("p_balance").satisfied);
  CHECK(rep.at("q_balance").satisfied);
  CHECK(rep.feasible());

  StateMatrix over = at_bounds;
  over.v[0] = 1.06;
  rep = check_feasibility(g, over, p_load, q_load, 1e-9);
  CHECK_FALSE(rep.at("v_max").satisfied);
  CHECK(rep.at("v_max").worst_violation == doctest::Approx(0.01));
  CHECK(rep.at("v_max").worst_bus == 0);
  CHECK_FALSE(rep.feasible());
  CHECK(rep.to_json().find("\"v_max\"") != std::string::npos);
}

}
