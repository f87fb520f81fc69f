#include <complex>

#include <doctest.h>

#include "gnnopf/errors.hpp"
#include "gnnopf/grid_case.hpp"
#include "test_support.hpp"

using namespace gnnopf;
using testing::branch;
using testing::bus;
using testing::generator;
using testing::json;

TEST_SUITE("grid_case") {

TEST_CASE("three-bus case parses with per-unit and MVA forms") {
  json buses = {bus(0, "slack"), bus(1, "generator"), bus(2, "load")};
  buses[2]["p_load_ref"] = 0.5;
  buses[2].erase("q_load_ref");
  buses[2]["q_load_ref_mva"] = 20.0;
  json gens = {generator(0, 0.0, 2.0, 0.1, 1.0), generator(1, 0.0, 1.0, 0.2, 1.5)};
  gens[1].erase("p_max");
  gens[1]["p_max_mva"] = 150.0;
  const GridCase g = testing::make_case(buses, {branch(0, 1, 0.01, 0.1), branch(1, 2, 0.02, 0.2)}, gens);
  CHECK(g.n_buses() == 3);
  CHECK(g.n_generators() == 2);
  CHECK(g.slack_bus() == 0);
  CHECK(g.q_load_ref[2] == doctest::Approx(0.2));
  CHECK(g.generators[1].p_max == doctest::Approx(1.5));
  CHECK(g.buses[2].delta_max == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("unknown keys are rejected with their path") {
  json buses = {bus(0, "slack"), bus(1, "load", 0.1)};
  buses[1]["colour"] = "red";
  try {
    testing::make_case(buses, {branch(0, 1, 0.0, 0.1)}, {generator(0, 0, 1, 0, 1)});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("buses[1].colour") != std::string::npos);
  }
}

TEST_CASE("invariant violations raise ValidationError") {
  const json line = {branch(0, 1, 0.0, 0.1)};
  // no slack
  CHECK_THROWS_AS(testing::make_case({bus(0, "generator"), bus(1, "load", 0.1)}, line,
                                     {generator(0, 0, 1, 0, 1)}),
                  ValidationError);
  // two slacks
  CHECK_THROWS_AS(testing::make_case({bus(0, "slack"), bus(1, "slack")}, line,
                                     {generator(0, 0, 1, 0, 1), generator(1, 0, 1, 0, 1)}),
                  ValidationError);
  // v_min > v_max
  CHECK_THROWS_AS(testing::make_case({bus(0, "slack", 0, 0, 1.1, 0.9), bus(1, "load", 0.1)}, line,
                                     {generator(0, 0, 1, 0, 1)}),
                  ValidationError);
  // zero impedance
  CHECK_THROWS_AS(testing::make_case({bus(0, "slack"), bus(1, "load", 0.1)}, {branch(0, 1, 0.0, 0.0)},
                                     {generator(0, 0, 1, 0, 1)}),
                  ValidationError);
  // generator on a load bus
  CHECK_THROWS_AS(testing::make_case({bus(0, "slack"), bus(1, "load", 0.1)}, line,
                                     {generator(0, 0, 1, 0, 1), generator(1, 0, 1, 0, 1)}),
                  ValidationError);
  // p_min > p_max
  CHECK_THROWS_AS(testing::make_case({bus(0, "slack"), bus(1, "load", 0.1)}, line,
                                     {generator(0, 2, 1, 0, 1)}),
                  ValidationError);
  // branch to a missing bus
  CHECK_THROWS_AS(testing::make_case({bus(0, "slack"), bus(1, "load", 0.1)}, {branch(0, 5, 0.0, 0.1)},
                                     {generator(0, 0, 1, 0, 1)}),
                  ValidationError);
}

TEST_CASE("malformed JSON is a ParseError") {
  CHECK_THROWS_AS(parse_case("{ not json"), ParseError);
  CHECK_THROWS_AS(parse_case("[]"), ParseError);
}

TEST_CASE("parallel branches merge by admittance addition") {
  const GridCase g = testing::make_case({bus(0, "slack"), bus(1, "load", 0.1)},
                                        {branch(0, 1, 0.01, 0.1, 0.02), branch(1, 0, 0.03, 0.2, 0.04)},
                                        {generator(0, 0, 1, 0, 1)});
  REQUIRE(g.branches.size() == 1);
  const std::complex<double> y = 1.0 / std::complex<double>(0.01, 0.1) + 1.0 / std::complex<double>(0.03, 0.2);
  const std::complex<double> merged = 1.0 / std::complex<double>(g.branches[0].r, g.branches[0].x);
  CHECK(std::abs(merged - y) < 1e-12);
  CHECK(g.branches[0].b_shunt == doctest::Approx(0.06));
}

TEST_CASE("serialize then parse is the identity on the bundled cases") {
  for (const char* name : {"ieee30.json", "ieee118.json"}) {
    const GridCase g = load_case(testing::data_path(name));
    CHECK(parse_case(serialize_case(g)) == g);
  }
}

TEST_CASE("bundled cases have the expected sizes") {
  const GridCase g30 = load_case(testing::data_path("ieee30.json"));
  CHECK(g30.n_buses() == 30);
  CHECK(g30.n_generators() == 6);
  const GridCase g118 = load_case(testing::data_path("ieee118.json"));
  CHECK(g118.n_buses() == 118);
  CHECK(g118.n_generators() == 54);
}

TEST_CASE("selection gathers generator rows and scatter is its adjoint") {
  const SelectionIndex idx({3, 0, 4}, 5);
  CHECK(idx.size() == 3);
  Eigen::MatrixXd x(5, 2);
  for (int i = 0; i < 5; ++i) x.row(i) << i, 10 * i;
  const Eigen::MatrixXd gx = select_generators(x, idx);
  CHECK(gx(0, 0) == 3);
  CHECK(gx(1, 1) == 0);
  CHECK(gx(2, 1) == 40);
  const Eigen::MatrixXd y = Eigen::MatrixXd::Ones(3, 2);
  const Eigen::MatrixXd s = scatter_generators(y, idx, 5);
  CHECK(s.rows() == 5);
  CHECK(s(1, 0) == 0);
  CHECK(s(3, 0) == 1);
  // <G x, y> == <x, G^T y>
  CHECK((gx.array() * y.array()).sum() == doctest::Approx((x.array() * s.array()).sum()));
  CHECK_THROWS_AS(SelectionIndex({1, 1}, 5), ContractError);
  CHECK_THROWS_AS(SelectionIndex({5}, 5), ContractError);
}

}
