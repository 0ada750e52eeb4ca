#include "forge/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "forge/parallel.hpp"
#include "forge/rng.hpp"
#include "forge/socp.hpp"

namespace forge::boundary {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// constraint functions of the reduced problem: all steady-state bounds
// evaluated through stage-1 power flows, as signed violations (<= 0 feasible)
struct Reduced {
  const net::Network& net;
  const net::InputSpace& xs;
  acpf::PowerFlowOptions pf;

  explicit Reduced(const net::Network& n, const net::InputSpace& x) : net(n), xs(x) {
    pf.pf_tol = 1e-10;
    pf.enforce_q_limits = false;
  }

  int free_dim() const { return xs.free_count(); }

  net::InputVector to_physical(const Eigen::VectorXd& y) const {
    Eigen::VectorXd unit = Eigen::VectorXd::Constant(xs.size(), 0.5);
    const auto free = xs.free_indices();
    for (size_t k = 0; k < free.size(); ++k) unit[free[k]] = y[k];
    return xs.denormalize(unit);
  }

  Eigen::VectorXd to_free(const net::InputVector& x) const {
    const Eigen::VectorXd unit = xs.normalize(x);
    const auto free = xs.free_indices();
    Eigen::VectorXd y(free.size());
    for (size_t k = 0; k < free.size(); ++k) y[k] = unit[free[k]];
    return y;
  }

  // false when any power flow diverges
  bool eval(const Eigen::VectorXd& y, Eigen::VectorXd& g) const {
    const net::InputVector x = to_physical(y);
    std::vector<double> rows;
    for (int c = 0; c < net.contingencies.size(); ++c) {
      auto sol = acpf::solve_pf(net, xs, x, c, pf);
      if (!sol.converged) return false;
      for (int k = 0; k < net.n_buses(); ++k) {
        rows.push_back(sol.v_mag[k] - net.buses[k].v_max);
        rows.push_back(net.buses[k].v_min - sol.v_mag[k]);
      }
      const int slack = net.slack_bus();
      for (int gi = 0; gi < static_cast<int>(net.generators.size()); ++gi) {
        const auto& gen = net.generators[gi];
        if (!gen.in_service) continue;
        rows.push_back(sol.gen_q[gi] - gen.q_max);
        rows.push_back(gen.q_min - sol.gen_q[gi]);
        if (gen.bus == slack) {
          rows.push_back(sol.gen_p[gi] - gen.p_max);
          rows.push_back(gen.p_min - sol.gen_p[gi]);
        }
      }
      for (int bi : net::active_branches(net, c)) {
        const auto& br = net.branches[bi];
        const auto f = acpf::branch_flow(net, bi, sol);
        if (br.s_max) {
          rows.push_back(std::abs(f.from) - *br.s_max);
          rows.push_back(std::abs(f.to) - *br.s_max);
        }
        const double dth = sol.v_ang[br.from_bus] - sol.v_ang[br.to_bus];
        rows.push_back(dth - br.theta_max);
        rows.push_back(br.theta_min - dth);
      }
    }
    g = Eigen::Map<Eigen::VectorXd>(rows.data(), static_cast<long>(rows.size()));
    return true;
  }

  // central differences; falls back to one-sided when a flow diverges
  bool jacobian(const Eigen::VectorXd& y, const Eigen::VectorXd& g0, double h,
                Eigen::MatrixXd& jac) const {
    const int d = free_dim();
    jac.resize(g0.size(), d);
    Eigen::VectorXd gp, gm;
    for (int k = 0; k < d; ++k) {
      Eigen::VectorXd yp = y, ym = y;
      yp[k] = std::min(1.0, y[k] + h);
      ym[k] = std::max(0.0, y[k] - h);
      const bool okp = eval(yp, gp);
      const bool okm = eval(ym, gm);
      if (okp && okm && gp.size() == g0.size() && gm.size() == g0.size()) {
        jac.col(k) = (gp - gm) / (yp[k] - ym[k]);
      } else if (okp && gp.size() == g0.size()) {
        jac.col(k) = (gp - g0) / (yp[k] - y[k]);
      } else if (okm && gm.size() == g0.size()) {
        jac.col(k) = (g0 - gm) / (y[k] - ym[k]);
      } else {
        jac.col(k).setZero();
      }
    }
    return true;
  }
};

struct QpSolution {
  bool ok = false;
  Eigen::VectorXd d;
  double predicted_violation = 0.0;
  double dual_residual = 0.0;
};

// min ||y + d - hat|| + penalty * sum(xi)
// s.t. g + J d <= xi + margin_shift, 0 <= y + d <= 1, |d| <= delta, xi >= 0
QpSolution solve_subproblem(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat,
                            const Eigen::VectorXd& g, const Eigen::MatrixXd& jac, double delta,
                            double penalty, double margin) {
  const int d = static_cast<int>(y.size());
  const int m = static_cast<int>(g.size());
  socp::ProgramBuilder b;
  const int dv = b.add_vars(d);
  const int r = b.add_var(1.0);
  const int xi0 = b.add_vars(m);
  for (int i = 0; i < m; ++i) b.set_cost(xi0 + i, penalty);

  for (int i = 0; i < m; ++i) {
    std::vector<std::pair<int, double>> terms{{xi0 + i, -1.0}};
    for (int k = 0; k < d; ++k)
      if (jac(i, k) != 0.0) terms.push_back({dv + k, jac(i, k)});
    b.add_le(terms, -g[i] - margin);
    b.add_ge({{xi0 + i, 1.0}}, 0.0);
  }
  for (int k = 0; k < d; ++k) {
    b.add_box(dv + k, std::max(-delta, -y[k]), std::min(delta, 1.0 - y[k]));
  }
  std::vector<socp::ProgramBuilder::Affine> soc;
  soc.push_back({{{r, 1.0}}, 0.0});
  for (int k = 0; k < d; ++k) soc.push_back({{{dv + k, 1.0}}, y[k] - y_hat[k]});
  b.add_soc(soc);

  auto sol = socp::solve(b.build());
  QpSolution out;
  if (sol.status != socp::SolveStatus::optimal) return out;
  out.ok = true;
  out.d = sol.x_primal.segment(dv, d);
  double viol = 0.0;
  for (int i = 0; i < m; ++i) viol += std::max(0.0, sol.x_primal[xi0 + i]);
  out.predicted_violation = viol;
  out.dual_residual = sol.residuals.dual;
  return out;
}

double merit(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat, const Eigen::VectorXd& g,
             double penalty) {
  double viol = 0.0;
  for (int i = 0; i < g.size(); ++i) viol += std::max(0.0, g[i]);
  return (y - y_hat).norm() + penalty * viol;
}

}  // namespace

ProjectionResult closest_feasible_ac(const net::Network& net, const net::InputSpace& xs,
                                     const net::InputVector& x_hat, const ProjectionOptions& opt,
                                     const std::optional<net::InputVector>& start) {
  Reduced red(net, xs);
  const Eigen::VectorXd y_hat = red.to_free(x_hat);
  Eigen::VectorXd y = start ? red.to_free(*start) : y_hat;
  for (int k = 0; k < y.size(); ++k) y[k] = std::clamp(y[k], 0.0, 1.0);

  ProjectionResult res;
  Eigen::VectorXd g;
  if (!red.eval(y, g)) {
    // diverged at the start; nudge to the box center and retry once
    y = 0.5 * (y + Eigen::VectorXd::Constant(y.size(), 0.5));
    if (!red.eval(y, g)) return res;
  }

  double delta = 0.25;
  Eigen::MatrixXd jac;
  double kkt = kInf;
  for (int it = 0; it < opt.max_sqp_iter; ++it) {
    res.iterations = it + 1;
    red.jacobian(y, g, opt.fd_step, jac);
    QpSolution qp = solve_subproblem(y, y_hat, g, jac, delta, opt.penalty, 0.0);
    if (!qp.ok) {
      delta *= 0.5;
      if (delta < 1e-9) break;
      continue;
    }
    const double phi0 = merit(y, y_hat, g, opt.penalty);
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 8; ++ls) {
      Eigen::VectorXd y_try = y + alpha * qp.d;
      Eigen::VectorXd g_try;
      if (red.eval(y_try, g_try) && g_try.size() == g.size()) {
        const double phi1 = merit(y_try, y_hat, g_try, opt.penalty);
        if (phi1 <= phi0 - 1e-8 * alpha * qp.d.norm() || qp.d.norm() < 1e-12) {
          y = y_try;
          g = g_try;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    const double step_norm = accepted ? alpha * qp.d.norm() : 0.0;
    if (accepted && alpha == 1.0)
      delta = std::min(1.0, delta * 1.6);
    else
      delta = std::max(1e-9, delta * 0.5);

    const double viol = g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;
    kkt = qp.dual_residual + step_norm;
    if (viol <= opt.feas_tol && step_norm <= 1e-7) break;
    if (!accepted && delta <= 1e-9) break;
  }

  double viol = g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;
  if (viol > opt.feas_tol) return res;  // not feasible: projection failed

  // nudge strictly inside so the returned point re-validates with margin
  if (opt.interior_margin > 0.0) {
    red.jacobian(y, g, opt.fd_step, jac);
    QpSolution qp = solve_subproblem(y, y_hat, g, jac, 0.05, opt.penalty, opt.interior_margin);
    if (qp.ok && qp.predicted_violation <= 1e-12) {
      Eigen::VectorXd g_try;
      Eigen::VectorXd y_try = y + qp.d;
      if (red.eval(y_try, g_try) && g_try.size() &&
          g_try.maxCoeff() <= -opt.interior_margin * 0.1) {
        y = y_try;
        g = g_try;
      }
    }
  }

  res.ok = true;
  res.x_star = red.to_physical(y);
  res.r = (y - y_hat).norm();
  res.kkt_residual = kkt;
  res.max_violation = g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;
  return res;
}

BoundaryResult identify_boundary(const net::Network& net, const net::InputSpace& xs,
                                 const certify::Polytope& polytope, const BoundaryOptions& opt) {
  BoundaryResult out;
  if (opt.n2 <= 0) return out;

  auto draws = certify::hit_and_run(polytope, opt.n2, derive_seed(opt.seed, 0xb0dULL));
  const auto free = xs.free_indices();
  out.samples.resize(opt.n2);

  std::atomic<int> attempted{0}, succeeded{0}, secure{0};
  parallel_for(opt.n2, opt.threads, [&](int i) {
    BoundarySample rec;
    rec.seed = derive_seed(opt.seed, 0x1000ULL + i);
    Eigen::VectorXd unit = Eigen::VectorXd::Constant(xs.size(), 0.5);
    for (size_t k = 0; k < free.size(); ++k) unit[free[k]] = draws[i][k];
    rec.x_raw = xs.denormalize(unit);

    auto cls = acpf::classify_two_stage(net, xs, rec.x_raw, opt.classify);
    rec.secure_raw = cls.report.secure;
    rec.stage = cls.report.stage;
    rec.diverged = cls.report.diverged;
    rec.violations = cls.report.violations;
    rec.x_final = cls.adjusted_x ? *cls.adjusted_x : rec.x_raw;
    if (cls.report.secure) {
      ++secure;
    } else {
      ++attempted;
      auto proj = closest_feasible_ac(net, xs, rec.x_raw, opt.projection);
      if (!proj.ok && opt.qc_warm_start) {
        auto qc = qcrelax::closest_feasible_qc(*opt.qc_warm_start, rec.x_raw);
        if (qc.status == qcrelax::CertificateResult::Status::cut_found ||
            qc.status == qcrelax::CertificateResult::Status::feasible_point)
          proj = closest_feasible_ac(net, xs, rec.x_raw, opt.projection, qc.x_star);
      }
      if (proj.ok) {
        // the projected point must independently re-validate as secure
        auto check = acpf::classify_two_stage(net, xs, proj.x_star, opt.classify);
        if (check.report.secure) {
          rec.x_projected = check.adjusted_x ? *check.adjusted_x : proj.x_star;
          rec.r_projection = proj.r;
          ++succeeded;
        }
      }
    }
    out.samples[i] = std::move(rec);
  });

  out.secure_fraction = static_cast<double>(secure.load()) / opt.n2;
  out.projections_attempted = attempted.load();
  out.projections_succeeded = succeeded.load();
  return out;
}

}  // namespace forge::boundary
