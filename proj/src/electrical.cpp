#include "gnnopf/electrical.hpp"

#include <cmath>
#include <complex>

#include "gnnopf/errors.hpp"

namespace gnnopf {

Eigen::MatrixXd StateMatrix::as_matrix() const {
  Eigen::MatrixXd x(v.size(), 4);
  x.col(0) = v;
  x.col(1) = delta;
  x.col(2) = p;
  x.col(3) = q;
  return x;
}

StateMatrix StateMatrix::from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.cols() != 4) throw ContractError("state matrix must have 4 columns");
  return {x.col(0), x.col(1), x.col(2), x.col(3)};
}

AdmittanceMatrix build_admittance(const GridCase& grid) {
  const int n = grid.n_buses();
  AdmittanceMatrix y{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
  for (const auto& br : grid.branches) {
    if (br.r == 0.0 && br.x == 0.0) throw ContractError("zero-impedance branch");
    const std::complex<double> series = 1.0 / std::complex<double>(br.r, br.x);
    const int i = br.from;
    const int j = br.to;
    y.g_bus(i, j) -= series.real();
    y.b_bus(i, j) -= series.imag();
    y.g_bus(j, i) -= series.real();
    y.b_bus(j, i) -= series.imag();
    y.g_bus(i, i) += series.real();
    y.b_bus(i, i) += series.imag() + br.b_shunt / 2.0;
    y.g_bus(j, j) += series.real();
    y.b_bus(j, j) += series.imag() + br.b_shunt / 2.0;
  }
  return y;
}

Injections injections(const Eigen::Ref<const Eigen::VectorXd>& v,
                      const Eigen::Ref<const Eigen::VectorXd>& delta, const AdmittanceMatrix& y) {
  const int n = y.size();
  Injections out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int i = 0; i < n; ++i) {
    double sp = 0.0;
    double sq = 0.0;
    for (int j = 0; j < n; ++j) {
      const double g = y.g_bus(i, j);
      const double b = y.b_bus(i, j);
      if (g == 0.0 && b == 0.0) continue;
      const double theta = delta[i] - delta[j];
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      sp += v[j] * (g * c + b * s);
      sq += v[j] * (g * s - b * c);
    }
    out.p[i] = v[i] * sp;
    out.q[i] = v[i] * sq;
  }
  return out;
}

InjectionJacobian injection_jacobian(const Eigen::Ref<const Eigen::VectorXd>& v,
                                     const Eigen::Ref<const Eigen::VectorXd>& delta,
                                     const AdmittanceMatrix& y) {
  const int n = y.size();
  InjectionJacobian jac{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n),
                        Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
  const auto inj = injections(v, delta, y);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double g = y.g_bus(i, j);
      const double b = y.b_bus(i, j);
      if (g == 0.0 && b == 0.0) continue;
      const double theta = delta[i] - delta[j];
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double a_ij = g * c + b * s;
      const double c_ij = g * s - b * c;
      jac.dp_ddelta(i, j) = v[i] * v[j] * c_ij;
      jac.dq_ddelta(i, j) = -v[i] * v[j] * a_ij;
      jac.dp_dv(i, j) = v[i] * a_ij;
      jac.dq_dv(i, j) = v[i] * c_ij;
    }
    const double gii = y.g_bus(i, i);
    const double bii = y.b_bus(i, i);
    jac.dp_ddelta(i, i) = -inj.q[i] - bii * v[i] * v[i];
    jac.dq_ddelta(i, i) = inj.p[i] - gii * v[i] * v[i];
    jac.dp_dv(i, i) = inj.p[i] / v[i] + gii * v[i];
    jac.dq_dv(i, i) = inj.q[i] / v[i] - bii * v[i];
  }
  return jac;
}

Eigen::MatrixXd injection_hessian(const Eigen::Ref<const Eigen::VectorXd>& v,
                                  const Eigen::Ref<const Eigen::VectorXd>& delta,
                                  const AdmittanceMatrix& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& w_p,
                                  const Eigen::Ref<const Eigen::VectorXd>& w_q) {
  const int n = y.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  // Each ordered pair (i, j) contributes v_i v_j phi(delta_i - delta_j) with
  // phi = w_p[i] (g cos + b sin) + w_q[i] (g sin - b cos), so phi'' = -phi.
  for (int i = 0; i < n; ++i) {
    const int di = i;
    const int vi = n + i;
    for (int j = 0; j < n; ++j) {
      const double g = y.g_bus(i, j);
      const double b = y.b_bus(i, j);
      if (g == 0.0 && b == 0.0) continue;
      if (i == j) {
        h(vi, vi) += 2.0 * (w_p[i] * g - w_q[i] * b);
        continue;
      }
      const int dj = j;
      const int vj = n + j;
      const double theta = delta[i] - delta[j];
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double a_ij = g * c + b * s;
      const double c_ij = g * s - b * c;
      const double phi = w_p[i] * a_ij + w_q[i] * c_ij;
      const double dphi = -w_p[i] * c_ij + w_q[i] * a_ij;
      const double vv = v[i] * v[j];

      h(di, di) -= vv * phi;
      h(dj, dj) -= vv * phi;
      h(di, dj) += vv * phi;
      h(dj, di) += vv * phi;

      h(di, vi) += v[j] * dphi;
      h(vi, di) += v[j] * dphi;
      h(di, vj) += v[i] * dphi;
      h(vj, di) += v[i] * dphi;
      h(dj, vi) -= v[j] * dphi;
      h(vi, dj) -= v[j] * dphi;
      h(dj, vj) -= v[i] * dphi;
      h(vj, dj) -= v[i] * dphi;

      h(vi, vj) += phi;
      h(vj, vi) += phi;
    }
  }
  return h;
}

PowerFlowResult solve_power_flow(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& q_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_p_setpoints,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_v_setpoints,
                                 const PowerFlowOptions& options) {
  return solve_power_flow(grid, build_admittance(grid), p_load, q_load, gen_p_setpoints,
                          gen_v_setpoints, options);
}

PowerFlowResult solve_power_flow(const GridCase& grid, const AdmittanceMatrix& y,
                                 const Eigen::Ref<const Eigen::VectorXd>& p_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& q_load,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_p_setpoints,
                                 const Eigen::Ref<const Eigen::VectorXd>& gen_v_setpoints,
                                 const PowerFlowOptions& options) {
  const int n = grid.n_buses();
  const int m = grid.n_generators();
  if (p_load.size() != n || q_load.size() != n) {
    throw ContractError("solve_power_flow: load vectors must have length N");
  }
  if (gen_p_setpoints.size() != m || gen_v_setpoints.size() != m) {
    throw ContractError("solve_power_flow: setpoint vectors must have length M");
  }
  if (y.size() != n) throw ContractError("solve_power_flow: admittance size mismatch");
  const int slack = grid.slack_bus();

  // Scheduled net injections and voltage-controlled buses.
  Eigen::VectorXd p_sched = -p_load;
  Eigen::VectorXd q_sched = -q_load;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
  std::vector<bool> pv(static_cast<std::size_t>(n), false);
  for (int k = 0; k < m; ++k) {
    const int bus = grid.generators[static_cast<std::size_t>(k)].bus;
    p_sched[bus] += gen_p_setpoints[k];
    v[bus] = gen_v_setpoints[k];
    pv[static_cast<std::size_t>(bus)] = true;
  }
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);

  // Unknowns: angles at every non-slack bus, then magnitudes at PQ buses.
  std::vector<int> angle_buses;
  std::vector<int> mag_buses;
  for (int i = 0; i < n; ++i) {
    if (i == slack) continue;
    angle_buses.push_back(i);
    if (!pv[static_cast<std::size_t>(i)]) mag_buses.push_back(i);
  }
  const int na = static_cast<int>(angle_buses.size());
  const int nv = static_cast<int>(mag_buses.size());

  auto mismatch = [&](const Eigen::VectorXd& vv, const Eigen::VectorXd& dd) {
    const auto inj = injections(vv, dd, y);
    Eigen::VectorXd f(na + nv);
    for (int k = 0; k < na; ++k) f[k] = inj.p[angle_buses[k]] - p_sched[angle_buses[k]];
    for (int k = 0; k < nv; ++k) f[na + k] = inj.q[mag_buses[k]] - q_sched[mag_buses[k]];
    return f;
  };

  PowerFlowResult result;
  Eigen::VectorXd f = mismatch(v, delta);
  double norm = f.norm();
  result.mismatch_history.push_back(norm);
  result.max_mismatch = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;

  while (result.max_mismatch > options.tolerance) {
    if (result.iterations >= options.max_iterations) break;
    const auto jac = injection_jacobian(v, delta, y);
    Eigen::MatrixXd j(na + nv, na + nv);
    for (int r = 0; r < na; ++r) {
      for (int c = 0; c < na; ++c) j(r, c) = jac.dp_ddelta(angle_buses[r], angle_buses[c]);
      for (int c = 0; c < nv; ++c) j(r, na + c) = jac.dp_dv(angle_buses[r], mag_buses[c]);
    }
    for (int r = 0; r < nv; ++r) {
      for (int c = 0; c < na; ++c) j(na + r, c) = jac.dq_ddelta(mag_buses[r], angle_buses[c]);
      for (int c = 0; c < nv; ++c) j(na + r, na + c) = jac.dq_dv(mag_buses[r], mag_buses[c]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(j);
    if (!lu.isInvertible()) break;
    const Eigen::VectorXd step = lu.solve(-f);

    // Damping: full step if the mismatch norm drops, else halve a bounded number of times.
    bool accepted = false;
    double alpha = 1.0;
    for (int h = 0; h <= options.max_halvings; ++h, alpha *= 0.5) {
      Eigen::VectorXd v_try = v;
      Eigen::VectorXd d_try = delta;
      for (int k = 0; k < na; ++k) d_try[angle_buses[k]] += alpha * step[k];
      for (int k = 0; k < nv; ++k) v_try[mag_buses[k]] += alpha * step[na + k];
      Eigen::VectorXd f_try = mismatch(v_try, d_try);
      const double norm_try = f_try.norm();
      if (std::isfinite(norm_try) && norm_try < norm) {
        v = std::move(v_try);
        delta = std::move(d_try);
        f = std::move(f_try);
        norm = norm_try;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    ++result.iterations;
    result.mismatch_history.push_back(norm);
    result.max_mismatch = f.lpNorm<Eigen::Infinity>();
  }

  result.converged = result.max_mismatch <= options.tolerance;
  const auto inj = injections(v, delta, y);
  result.state = StateMatrix{v, delta, inj.p, inj.q};
  return result;
}

}  // namespace gnnopf
