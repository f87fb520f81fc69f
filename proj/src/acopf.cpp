#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <lapacke.h>

#include "gnnopf/errors.hpp"
#include "gnnopf/opf.hpp"

namespace gnnopf {

namespace {

constexpr double kBoundRelax = 1e-8;
constexpr double kBoundPush = 1e-2;
constexpr double kBoundFrac = 1e-2;
constexpr double kArmijo = 1e-4;
constexpr double kKappaSigma = 1e10;
constexpr double kScaleMax = 100.0;

// Variable layout: [delta (non-slack) | v | p_gen | q_gen].
struct Layout {
  int n = 0;
  int m = 0;
  int slack = 0;
  std::vector<int> angle_var;  // per bus, -1 for the slack
  int n_angle = 0;

  int v(int bus) const { return n_angle + bus; }
  int pg(int gen) const { return n_angle + n + gen; }
  int qg(int gen) const { return n_angle + n + m + gen; }
  int size() const { return n_angle + n + 2 * m; }
};

struct Point {
  Eigen::VectorXd v;
  Eigen::VectorXd delta;
  Eigen::VectorXd pg;
  Eigen::VectorXd qg;
};

Point unpack(const Layout& lay, const Eigen::VectorXd& x) {
  Point pt{Eigen::VectorXd(lay.n), Eigen::VectorXd::Zero(lay.n), Eigen::VectorXd(lay.m),
           Eigen::VectorXd(lay.m)};
  for (int i = 0; i < lay.n; ++i) {
    pt.v[i] = x[lay.v(i)];
    if (lay.angle_var[static_cast<std::size_t>(i)] >= 0) {
      pt.delta[i] = x[lay.angle_var[static_cast<std::size_t>(i)]];
    }
  }
  for (int k = 0; k < lay.m; ++k) {
    pt.pg[k] = x[lay.pg(k)];
    pt.qg[k] = x[lay.qg(k)];
  }
  return pt;
}

class AcopfProblem {
 public:
  AcopfProblem(const GridCase& grid, const Eigen::VectorXd& p_load, const Eigen::VectorXd& q_load)
      : grid_(grid), y_(build_admittance(grid)), p_load_(p_load), q_load_(q_load) {
    lay_.n = grid.n_buses();
    lay_.m = grid.n_generators();
    lay_.slack = grid.slack_bus();
    lay_.angle_var.assign(static_cast<std::size_t>(lay_.n), -1);
    for (int i = 0; i < lay_.n; ++i) {
      if (i != lay_.slack) lay_.angle_var[static_cast<std::size_t>(i)] = lay_.n_angle++;
    }
  }

  const Layout& layout() const { return lay_; }
  const AdmittanceMatrix& admittance() const { return y_; }

  void bounds(Eigen::VectorXd& lo, Eigen::VectorXd& hi) const {
    lo.resize(lay_.size());
    hi.resize(lay_.size());
    for (int i = 0; i < lay_.n; ++i) {
      const auto& b = grid_.buses[static_cast<std::size_t>(i)];
      const int a = lay_.angle_var[static_cast<std::size_t>(i)];
      if (a >= 0) {
        lo[a] = b.delta_min;
        hi[a] = b.delta_max;
      }
      lo[lay_.v(i)] = b.v_min;
      hi[lay_.v(i)] = b.v_max;
    }
    for (int k = 0; k < lay_.m; ++k) {
      const auto& g = grid_.generators[static_cast<std::size_t>(k)];
      lo[lay_.pg(k)] = g.p_min;
      hi[lay_.pg(k)] = g.p_max;
      lo[lay_.qg(k)] = g.q_min;
      hi[lay_.qg(k)] = g.q_max;
    }
  }

  double objective(const Eigen::VectorXd& x) const {
    double f = 0.0;
    for (int k = 0; k < lay_.m; ++k) {
      const auto& g = grid_.generators[static_cast<std::size_t>(k)];
      const double p = x[lay_.pg(k)];
      f += g.cost_c2 * p * p + g.cost_c1 * p + g.cost_c0;
    }
    return f;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(lay_.size());
    for (int k = 0; k < lay_.m; ++k) {
      const auto& g = grid_.generators[static_cast<std::size_t>(k)];
      grad[lay_.pg(k)] = 2.0 * g.cost_c2 * x[lay_.pg(k)] + g.cost_c1;
    }
    return grad;
  }

  // Power balance residuals: rows 0..N-1 active, N..2N-1 reactive.
  Eigen::VectorXd constraints(const Eigen::VectorXd& x) const {
    const auto pt = unpack(lay_, x);
    const auto inj = injections(pt.v, pt.delta, y_);
    Eigen::VectorXd c(2 * lay_.n);
    c.head(lay_.n) = inj.p + p_load_;
    c.tail(lay_.n) = inj.q + q_load_;
    for (int k = 0; k < lay_.m; ++k) {
      const int bus = grid_.generators[static_cast<std::size_t>(k)].bus;
      c[bus] -= pt.pg[k];
      c[lay_.n + bus] -= pt.qg[k];
    }
    return c;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const {
    const auto pt = unpack(lay_, x);
    const auto jac = injection_jacobian(pt.v, pt.delta, y_);
    const int n = lay_.n;
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * n, lay_.size());
    for (int r = 0; r < n; ++r) {
      for (int b = 0; b < n; ++b) {
        const int a = lay_.angle_var[static_cast<std::size_t>(b)];
        if (a >= 0) {
          j(r, a) = jac.dp_ddelta(r, b);
          j(n + r, a) = jac.dq_ddelta(r, b);
        }
        j(r, lay_.v(b)) = jac.dp_dv(r, b);
        j(n + r, lay_.v(b)) = jac.dq_dv(r, b);
      }
    }
    for (int k = 0; k < lay_.m; ++k) {
      const int bus = grid_.generators[static_cast<std::size_t>(k)].bus;
      j(bus, lay_.pg(k)) = -1.0;
      j(n + bus, lay_.qg(k)) = -1.0;
    }
    return j;
  }

  // Hessian of obj_scale * f + lambda^T c.
  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda,
                                     double obj_scale) const {
    const auto pt = unpack(lay_, x);
    const int n = lay_.n;
    const Eigen::MatrixXd hi =
        injection_hessian(pt.v, pt.delta, y_, lambda.head(n), lambda.tail(n));
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(lay_.size(), lay_.size());
    auto var = [&](int idx) {
      return idx < n ? lay_.angle_var[static_cast<std::size_t>(idx)] : lay_.v(idx - n);
    };
    for (int r = 0; r < 2 * n; ++r) {
      const int vr = var(r);
      if (vr < 0) continue;
      for (int c = 0; c < 2 * n; ++c) {
        const int vc = var(c);
        if (vc < 0) continue;
        h(vr, vc) = hi(r, c);
      }
    }
    for (int k = 0; k < lay_.m; ++k) {
      h(lay_.pg(k), lay_.pg(k)) += obj_scale * 2.0 * grid_.generators[static_cast<std::size_t>(k)].cost_c2;
    }
    return h;
  }

 private:
  const GridCase& grid_;
  AdmittanceMatrix y_;
  Eigen::VectorXd p_load_;
  Eigen::VectorXd q_load_;
  Layout lay_;
};

struct Inertia {
  int positive = 0;
  int negative = 0;
  int zero = 0;
};

// Symmetric indefinite factorization (Bunch-Kaufman) with inertia readout.
class SymmetricFactor {
 public:
  bool factor(const Eigen::MatrixXd& k) {
    a_ = k;
    const auto n = static_cast<lapack_int>(a_.rows());
    ipiv_.assign(static_cast<std::size_t>(n), 0);
    const lapack_int info =
        LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n, a_.data(), n, ipiv_.data());
    if (info < 0) return false;
    inertia_ = Inertia{};
    for (lapack_int i = 0; i < n; ++i) {
      if (ipiv_[static_cast<std::size_t>(i)] > 0) {
        const double d = a_(i, i);
        if (d > 0.0) ++inertia_.positive;
        else if (d < 0.0) ++inertia_.negative;
        else ++inertia_.zero;
      } else {
        const double a = a_(i, i);
        const double b = a_(i + 1, i);
        const double c = a_(i + 1, i + 1);
        const double det = a * c - b * b;
        if (det < 0.0) {
          ++inertia_.positive;
          ++inertia_.negative;
        } else if (det > 0.0) {
          if (a + c > 0.0) inertia_.positive += 2;
          else inertia_.negative += 2;
        } else {
          inertia_.zero += 2;
        }
        ++i;
      }
    }
    return true;
  }

  const Inertia& inertia() const { return inertia_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = rhs;
    const auto n = static_cast<lapack_int>(a_.rows());
    LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n, 1, a_.data(), n, ipiv_.data(), x.data(), n);
    return x;
  }

 private:
  Eigen::MatrixXd a_;
  std::vector<lapack_int> ipiv_;
  Inertia inertia_;
};

double barrier_merit(double f_scaled, const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                     const Eigen::VectorXd& hi, double mu, double nu, const Eigen::VectorXd& c) {
  double phi = f_scaled + nu * c.lpNorm<1>();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double sl = x[i] - lo[i];
    const double su = hi[i] - x[i];
    if (!(sl > 0.0) || !(su > 0.0)) return std::numeric_limits<double>::infinity();
    phi -= mu * (std::log(sl) + std::log(su));
  }
  return phi;
}

}  // namespace

OpfSolution solve_acopf(const GridCase& grid, const Eigen::Ref<const Eigen::VectorXd>& p_load,
                        const Eigen::Ref<const Eigen::VectorXd>& q_load, const DcSolution& warm,
                        const AcopfOptions& options) {
  const int n_bus = grid.n_buses();
  const int n_gen = grid.n_generators();
  if (p_load.size() != n_bus || q_load.size() != n_bus) {
    throw ContractError("solve_acopf: load vectors must have length N");
  }
  if (warm.gen_p.size() != n_gen || warm.angles.size() != n_bus) {
    throw ContractError("solve_acopf: warm start does not match the case");
  }

  const AcopfProblem problem(grid, p_load, q_load);
  const Layout& lay = problem.layout();
  const int nx = lay.size();
  const int nc = 2 * n_bus;

  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  problem.bounds(lo, hi);
  for (int i = 0; i < nx; ++i) {
    lo[i] -= kBoundRelax * std::max(1.0, std::abs(lo[i]));
    hi[i] += kBoundRelax * std::max(1.0, std::abs(hi[i]));
  }

  // Warm start from the DC solution, pushed strictly inside the bounds.
  Eigen::VectorXd x(nx);
  for (int i = 0; i < n_bus; ++i) {
    const int a = lay.angle_var[static_cast<std::size_t>(i)];
    if (a >= 0) x[a] = warm.angles[i];
    x[lay.v(i)] = 1.0;
  }
  for (int k = 0; k < n_gen; ++k) {
    x[lay.pg(k)] = std::isfinite(warm.gen_p[k]) ? warm.gen_p[k] : 0.0;
    x[lay.qg(k)] = 0.0;
  }
  for (int i = 0; i < nx; ++i) {
    const double range = hi[i] - lo[i];
    const double push_lo = std::min(kBoundPush * std::max(1.0, std::abs(lo[i])), kBoundFrac * range);
    const double push_hi = std::min(kBoundPush * std::max(1.0, std::abs(hi[i])), kBoundFrac * range);
    x[i] = std::clamp(x[i], lo[i] + push_lo, hi[i] - push_hi);
  }

  const double grad_norm = problem.gradient(x).lpNorm<Eigen::Infinity>();
  const double obj_scale = grad_norm > 1.0 ? 1.0 / grad_norm : 1.0;

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(nc);
  Eigen::VectorXd z_lo = Eigen::VectorXd::Ones(nx);
  Eigen::VectorXd z_hi = Eigen::VectorXd::Ones(nx);

  OpfSolution sol;
  sol.objective_scale = 1.0 / obj_scale;
  double mu = options.mu_initial;
  double nu = 1.0;
  double delta_w_last = 0.0;
  bool failed = false;
  bool restoration_failed = false;

  for (;;) {
    // Newton steps on the barrier subproblem for the current mu.
    for (;;) {
      const Eigen::VectorXd grad = obj_scale * problem.gradient(x);
      const Eigen::VectorXd c = problem.constraints(x);
      const Eigen::MatrixXd jac = problem.jacobian(x);
      const Eigen::VectorXd s_lo = x - lo;
      const Eigen::VectorXd s_hi = hi - x;

      const Eigen::VectorXd dual = grad + jac.transpose() * lambda - z_lo + z_hi;
      const double compl_err =
          std::max((s_lo.cwiseProduct(z_lo).array() - mu).abs().maxCoeff(),
                   (s_hi.cwiseProduct(z_hi).array() - mu).abs().maxCoeff());
      const double z_sum = z_lo.lpNorm<1>() + z_hi.lpNorm<1>();
      const double s_d =
          std::max(kScaleMax, (lambda.lpNorm<1>() + z_sum) / (nc + 2 * nx)) / kScaleMax;
      const double s_c = std::max(kScaleMax, z_sum / (2 * nx)) / kScaleMax;
      const double err = std::max({dual.lpNorm<Eigen::Infinity>() / s_d,
                                   c.lpNorm<Eigen::Infinity>(), compl_err / s_c});
      if (err <= options.kappa_epsilon * mu) break;
      if (sol.iterations >= options.max_iterations) {
        failed = true;
        break;
      }

      const Eigen::VectorXd sigma = z_lo.cwiseQuotient(s_lo) + z_hi.cwiseQuotient(s_hi);
      const Eigen::MatrixXd hess = problem.lagrangian_hessian(x, lambda, obj_scale);
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nx + nc, nx + nc);
      kkt.topLeftCorner(nx, nx) = hess;
      kkt.topLeftCorner(nx, nx).diagonal() += sigma;
      kkt.bottomLeftCorner(nc, nx) = jac;
      kkt.topRightCorner(nx, nc) = jac.transpose();

      Eigen::VectorXd rhs(nx + nc);
      rhs.head(nx) = -(grad + jac.transpose() * lambda - mu * s_lo.cwiseInverse() +
                       mu * s_hi.cwiseInverse());
      rhs.tail(nc) = -c;

      // Inertia correction: want nx positive and nc negative eigenvalues.
      SymmetricFactor factor;
      double delta_w = 0.0;
      double delta_c = 0.0;
      bool ok = false;
      for (int attempt = 0; attempt < 40; ++attempt) {
        Eigen::MatrixXd k = kkt;
        k.topLeftCorner(nx, nx).diagonal().array() += delta_w;
        k.bottomRightCorner(nc, nc).diagonal().array() -= delta_c;
        if (!factor.factor(k)) break;
        const auto& in = factor.inertia();
        if (in.positive == nx && in.negative == nc && in.zero == 0) {
          ok = true;
          break;
        }
        if (in.zero > 0 && delta_c == 0.0) delta_c = 1e-8 * std::pow(mu, 0.25);
        if (in.zero == 0 || in.negative > nc) {
          if (delta_w == 0.0) {
            delta_w = delta_w_last == 0.0 ? 1e-4 : std::max(1e-20, delta_w_last / 3.0);
          } else {
            delta_w *= delta_w_last == 0.0 ? 100.0 : 8.0;
          }
        }
      }
      if (!ok) {
        failed = true;
        restoration_failed = true;
        break;
      }
      if (delta_w > 0.0) delta_w_last = delta_w;

      const Eigen::VectorXd step = factor.solve(rhs);
      Eigen::VectorXd dx = step.head(nx);
      Eigen::VectorXd dlambda = step.tail(nc);
      Eigen::VectorXd dz_lo;
      Eigen::VectorXd dz_hi;
      double alpha_primal = 1.0;
      double alpha_dual = 1.0;
      auto step_lengths = [&](const Eigen::VectorXd& d) {
        dz_lo = mu * s_lo.cwiseInverse() - z_lo - z_lo.cwiseQuotient(s_lo).cwiseProduct(d);
        dz_hi = mu * s_hi.cwiseInverse() - z_hi + z_hi.cwiseQuotient(s_hi).cwiseProduct(d);
        alpha_primal = 1.0;
        alpha_dual = 1.0;
        for (int i = 0; i < nx; ++i) {
          if (d[i] < 0.0) alpha_primal = std::min(alpha_primal, -options.tau * s_lo[i] / d[i]);
          if (d[i] > 0.0) alpha_primal = std::min(alpha_primal, options.tau * s_hi[i] / d[i]);
          if (dz_lo[i] < 0.0) alpha_dual = std::min(alpha_dual, -options.tau * z_lo[i] / dz_lo[i]);
          if (dz_hi[i] < 0.0) alpha_dual = std::min(alpha_dual, -options.tau * z_hi[i] / dz_hi[i]);
        }
      };
      step_lengths(dx);

      // l1 merit backtracking.
      nu = std::max(nu, 1.1 * (lambda + dlambda).lpNorm<Eigen::Infinity>() + 1e-6);
      const double c_l1 = c.lpNorm<1>();
      const double f0 = obj_scale * problem.objective(x);
      const double phi0 = barrier_merit(f0, x, lo, hi, mu, nu, c);
      const Eigen::VectorXd barrier_grad =
          grad - mu * s_lo.cwiseInverse() + mu * s_hi.cwiseInverse();
      const double slope = barrier_grad.dot(dx) - nu * c_l1;
      auto merit_at = [&](const Eigen::VectorXd& x_try, Eigen::VectorXd* c_out) {
        Eigen::VectorXd c_try = problem.constraints(x_try);
        const double phi =
            barrier_merit(obj_scale * problem.objective(x_try), x_try, lo, hi, mu, nu, c_try);
        if (c_out) *c_out = std::move(c_try);
        return phi;
      };
      double alpha = alpha_primal;
      bool accepted = false;
      for (int bt = 0; bt < 40; ++bt) {
        Eigen::VectorXd c_try;
        const double phi = merit_at(x + alpha * dx, &c_try);
        if (std::isfinite(phi) && phi <= phi0 + kArmijo * alpha * std::min(slope, 0.0)) {
          accepted = true;
          break;
        }
        if (bt == 0) {
          // Second-order corrections against constraint curvature, which
          // otherwise makes the merit reject full steps near a solution.
          const Eigen::VectorXd saved_dz_lo = dz_lo, saved_dz_hi = dz_hi;
          const double saved_primal = alpha_primal, saved_dual = alpha_dual;
          Eigen::VectorXd c_soc = c;
          Eigen::VectorXd rhs_soc = rhs;
          double alpha_soc = alpha;
          Eigen::VectorXd c_prev = c_try;
          for (int k = 0; k < 4 && !accepted; ++k) {
            c_soc = alpha_soc * c_soc + c_prev;
            rhs_soc.tail(nc) = -c_soc;
            const Eigen::VectorXd soc = factor.solve(rhs_soc);
            step_lengths(soc.head(nx));
            alpha_soc = alpha_primal;
            const Eigen::VectorXd x_soc = x + alpha_soc * soc.head(nx);
            const double phi_soc = merit_at(x_soc, &c_prev);
            if (std::isfinite(phi_soc) && phi_soc <= phi0 + kArmijo * alpha * std::min(slope, 0.0)) {
              dx = soc.head(nx);
              dlambda = soc.tail(nc);
              alpha = alpha_soc;
              accepted = true;
            }
          }
          if (accepted) break;
          dz_lo = saved_dz_lo;
          dz_hi = saved_dz_hi;
          alpha_primal = saved_primal;
          alpha_dual = saved_dual;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        // Tiny step to keep making progress on the complementarity side.
        alpha = std::min(alpha_primal, 1e-8);
      }

      x += alpha * dx;
      lambda += alpha * dlambda;
      z_lo += alpha_dual * dz_lo;
      z_hi += alpha_dual * dz_hi;
      const Eigen::VectorXd new_slo = x - lo;
      const Eigen::VectorXd new_shi = hi - x;
      for (int i = 0; i < nx; ++i) {
        z_lo[i] = std::clamp(z_lo[i], mu / (kKappaSigma * new_slo[i]), kKappaSigma * mu / new_slo[i]);
        z_hi[i] = std::clamp(z_hi[i], mu / (kKappaSigma * new_shi[i]), kKappaSigma * mu / new_shi[i]);
      }
      ++sol.iterations;
    }
    if (failed) break;
    sol.mu_history.push_back(mu);
    if (mu <= options.mu_final * (1.0 + 1e-9)) break;
    mu = std::max(options.mu_final, mu * options.mu_factor);
  }

  const Eigen::VectorXd c = problem.constraints(x);
  const Eigen::MatrixXd jac = problem.jacobian(x);
  const Eigen::VectorXd dual =
      obj_scale * problem.gradient(x) + jac.transpose() * lambda - z_lo + z_hi;
  sol.kkt_residual = dual.lpNorm<Eigen::Infinity>();
  sol.equality_residual = c.lpNorm<Eigen::Infinity>();

  const auto pt = unpack(lay, x);
  sol.p_star = pt.pg;
  sol.q_gen = pt.qg;
  for (int k = 0; k < n_gen; ++k) {
    const auto& g = grid.generators[static_cast<std::size_t>(k)];
    sol.p_star[k] = std::clamp(sol.p_star[k], g.p_min, g.p_max);
    sol.q_gen[k] = std::clamp(sol.q_gen[k], g.q_min, g.q_max);
  }
  const auto inj = injections(pt.v, pt.delta, problem.admittance());
  sol.state = StateMatrix{pt.v, pt.delta, inj.p, inj.q};
  sol.cost = evaluate_cost(grid, sol.p_star);

  if (restoration_failed) {
    sol.status = OpfStatus::infeasible;
  } else if (failed) {
    sol.status = OpfStatus::max_iter;
  } else if (sol.equality_residual <= options.feas_tol && sol.kkt_residual <= options.opt_tol) {
    sol.status = OpfStatus::optimal;
  } else {
    sol.status = sol.equality_residual > options.feas_tol ? OpfStatus::infeasible
                                                          : OpfStatus::max_iter;
  }
  return sol;
}

}  // namespace gnnopf
