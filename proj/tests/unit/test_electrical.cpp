#include <cmath>
#include <random>

#include <doctest.h>

#include "gnnopf/electrical.hpp"
#include "gnnopf/errors.hpp"
#include "gnnopf/opf.hpp"
#include "test_support.hpp"

using namespace gnnopf;

namespace {

AdmittanceMatrix random_admittance(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GridCase g;
  g.buses.resize(static_cast<std::size_t>(n));
  for (int i = 0; i + 1 < n; ++i) g.branches.push_back({i, i + 1, 0.01 + 0.1 * u(rng), 0.05 + 0.3 * u(rng), 0.1 * u(rng)});
  for (int i = 0; i < n; ++i) {
    for (int j = i + 2; j < n; ++j) {
      if (u(rng) < 0.3) g.branches.push_back({i, j, 0.01 + 0.1 * u(rng), 0.05 + 0.3 * u(rng), 0.1 * u(rng)});
    }
  }
  return build_admittance(g);
}

}  // namespace

TEST_SUITE("electrical") {

TEST_CASE("single lossless branch with x = 1") {
  const GridCase g = testing::two_bus(0.0, 1.0, 0.0, 0.0);
  const AdmittanceMatrix y = build_admittance(g);
  CHECK(y.b_bus(0, 0) == -1.0);
  CHECK(y.b_bus(0, 1) == 1.0);
  CHECK(y.b_bus(1, 0) == 1.0);
  CHECK(y.b_bus(1, 1) == -1.0);
  CHECK(y.g_bus.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("no branches gives a zero matrix") {
  GridCase g;
  g.buses.resize(3);
  const AdmittanceMatrix y = build_admittance(g);
  CHECK(y.g_bus.isZero(0.0));
  CHECK(y.b_bus.isZero(0.0));
}

TEST_CASE("zero-impedance branch is a contract error") {
  GridCase g;
  g.buses.resize(2);
  g.branches.push_back({0, 1, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(build_admittance(g), ContractError);
}

TEST_CASE("IEEE-30 row sums equal the shunt terms") {
  const GridCase g = load_case(testing::data_path("ieee30.json"));
  const AdmittanceMatrix y = build_admittance(g);
  Eigen::VectorXd shunt = Eigen::VectorXd::Zero(g.n_buses());
  for (const auto& br : g.branches) {
    shunt[br.from] += br.b_shunt / 2.0;
    shunt[br.to] += br.b_shunt / 2.0;
  }
  for (int i = 0; i < g.n_buses(); ++i) {
    CHECK(std::abs(y.g_bus.row(i).sum()) < 1e-9);
    CHECK(std::abs(y.b_bus.row(i).sum() - shunt[i]) < 1e-9);
  }
  CHECK((y.g_bus - y.g_bus.transpose()).norm() == 0.0);
  CHECK((y.b_bus - y.b_bus.transpose()).norm() == 0.0);
}

TEST_CASE("flat state on a lossless shunt-free network injects nothing") {
  const GridCase g = testing::make_case(
      {testing::bus(0, "slack"), testing::bus(1, "load"), testing::bus(2, "load")},
      {testing::branch(0, 1, 0.0, 0.3), testing::branch(1, 2, 0.0, 0.2), testing::branch(0, 2, 0.0, 0.4)},
      {testing::generator(0, 0, 1, 0, 1)});
  const auto inj = injections(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Zero(3), build_admittance(g));
  CHECK(inj.p.cwiseAbs().maxCoeff() == 0.0);
  CHECK(inj.q.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two-bus angle difference gives p = (sin t, -sin t)") {
  const AdmittanceMatrix y = build_admittance(testing::two_bus(0.0, 1.0, 0.0, 0.0));
  for (double theta : {-0.7, 0.1, 0.4}) {
    const auto inj = injections(Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(theta, 0.0), y);
    CHECK(inj.p[0] == doctest::Approx(std::sin(theta)).epsilon(1e-15));
    CHECK(inj.p[1] == doctest::Approx(-std::sin(theta)).epsilon(1e-15));
  }
}

TEST_CASE("injections match complex arithmetic on 100 random instances") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 9;
    const AdmittanceMatrix y = random_admittance(n, rng);
    Eigen::VectorXd v(n), d(n);
    for (int i = 0; i < n; ++i) {
      v[i] = 0.9 + 0.2 * u(rng);
      d[i] = -0.5 + u(rng);
    }
    const auto inj = injections(v, d, y);
    const auto s = testing::complex_injections(v, d, y.g_bus, y.b_bus);
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(inj.p[i] - s[static_cast<std::size_t>(i)].real()));
      worst = std::max(worst, std::abs(inj.q[i] - s[static_cast<std::size_t>(i)].imag()));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("jacobian and hessian match central differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 5;
  const AdmittanceMatrix y = random_admittance(n, rng);
  Eigen::VectorXd v(n), d(n), wp(n), wq(n);
  for (int i = 0; i < n; ++i) {
    v[i] = 0.95 + 0.1 * u(rng);
    d[i] = -0.3 + 0.6 * u(rng);
    wp[i] = u(rng) - 0.5;
    wq[i] = u(rng) - 0.5;
  }
  const double h = 1e-6;
  const InjectionJacobian jac = injection_jacobian(v, d, y);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd dp = d, dm = d, vp = v, vm = v;
    dp[j] += h;
    dm[j] -= h;
    vp[j] += h;
    vm[j] -= h;
    const auto a = injections(v, dp, y), b = injections(v, dm, y);
    const auto c = injections(vp, d, y), e = injections(vm, d, y);
    for (int i = 0; i < n; ++i) {
      CHECK(jac.dp_ddelta(i, j) == doctest::Approx((a.p[i] - b.p[i]) / (2 * h)).epsilon(1e-6));
      CHECK(jac.dq_ddelta(i, j) == doctest::Approx((a.q[i] - b.q[i]) / (2 * h)).epsilon(1e-6));
      CHECK(jac.dp_dv(i, j) == doctest::Approx((c.p[i] - e.p[i]) / (2 * h)).epsilon(1e-6));
      CHECK(jac.dq_dv(i, j) == doctest::Approx((c.q[i] - e.q[i]) / (2 * h)).epsilon(1e-6));
    }
  }
  // Hessian of w_p . p + w_q . q against differences of the weighted gradient.
  auto grad = [&](const Eigen::VectorXd& vv, const Eigen::VectorXd& dd) {
    const InjectionJacobian jj = injection_jacobian(vv, dd, y);
    Eigen::VectorXd g(2 * n);
    g.head(n) = jj.dp_ddelta.transpose() * wp + jj.dq_ddelta.transpose() * wq;
    g.tail(n) = jj.dp_dv.transpose() * wp + jj.dq_dv.transpose() * wq;
    return g;
  };
  const Eigen::MatrixXd hess = injection_hessian(v, d, y, wp, wq);
  CHECK((hess - hess.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  for (int j = 0; j < 2 * n; ++j) {
    Eigen::VectorXd vp = v, vm = v, dp = d, dm = d;
    if (j < n) { dp[j] += h; dm[j] -= h; } else { vp[j - n] += h; vm[j - n] -= h; }
    const Eigen::VectorXd fd = (grad(vp, dp) - grad(vm, dm)) / (2 * h);
    CHECK((hess.col(j) - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("zero loads and setpoints converge immediately to the flat state") {
  const GridCase g = testing::two_bus(0.01, 0.1, 0.0, 0.0);
  const PowerFlowResult pf = solve_power_flow(g, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(),
                                              Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
  CHECK(pf.converged);
  CHECK(pf.iterations <= 1);
  CHECK(pf.state.v.isApproxToConstant(1.0));
  CHECK(pf.state.delta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-bus power flow matches the bisection oracle") {
  const double x = 0.5, p = 0.5, q = 0.1;
  const GridCase g = testing::two_bus(0.0, x, p, q);
  const PowerFlowResult pf = solve_power_flow(g, Eigen::Vector2d(0.0, p), Eigen::Vector2d(0.0, q),
                                              Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
  REQUIRE(pf.converged);
  const auto [v1, d1] = testing::two_bus_bisection(x, p, q);
  CHECK(std::abs(pf.state.v[1] - v1) < 1e-8);
  CHECK(std::abs(pf.state.delta[1] - d1) < 1e-8);
}

TEST_CASE("IEEE-30 power flow at the DCOPF dispatch") {
  const GridCase g = load_case(testing::data_path("ieee30.json"));
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  REQUIRE(dc.status == OpfStatus::optimal);
  const AdmittanceMatrix y = build_admittance(g);
  const PowerFlowResult pf = solve_power_flow(g, y, g.p_load_ref, g.q_load_ref, dc.gen_p,
                                              Eigen::VectorXd::Ones(g.n_generators()));
  REQUIRE(pf.converged);
  CHECK(pf.iterations <= 10);
  CHECK(pf.max_mismatch <= 1e-8);
  const auto inj = injections(pf.state.v, pf.state.delta, y);
  CHECK((inj.p - pf.state.p).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((inj.q - pf.state.q).cwiseAbs().maxCoeff() <= 1e-10);
  // Losses: total net injection covers them.
  CHECK(pf.state.p.sum() >= 0.0);
  for (std::size_t k = 1; k < pf.mismatch_history.size(); ++k) {
    CHECK(pf.mismatch_history[k] <= pf.mismatch_history[k - 1]);
  }
}

TEST_CASE("lossless network balances exactly") {
  GridCase g = load_case(testing::data_path("ieee30.json"));
  for (auto& br : g.branches) {
    br.r = 0.0;
    br.b_shunt = 0.0;
  }
  const DcSolution dc = solve_dcopf(g, g.p_load_ref);
  const PowerFlowResult pf = solve_power_flow(g, g.p_load_ref, g.q_load_ref, dc.gen_p,
                                              Eigen::VectorXd::Ones(g.n_generators()));
  REQUIRE(pf.converged);
  CHECK(std::abs(pf.state.p.sum()) <= 1e-8);
}

TEST_CASE("setpoint vectors of the wrong length are rejected") {
  const GridCase g = testing::two_bus(0.01, 0.1, 0.1, 0.0);
  CHECK_THROWS_AS(solve_power_flow(g, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(),
                                   Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(1)),
                  ContractError);
}

TEST_CASE("impossible load reports divergence instead of throwing") {
  const GridCase g = testing::two_bus(0.0, 0.5, 0.0, 0.0);
  const PowerFlowResult pf = solve_power_flow(g, Eigen::Vector2d(0.0, 5.0), Eigen::Vector2d(0.0, 1.0),
                                              Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
  CHECK_FALSE(pf.converged);
}

}
