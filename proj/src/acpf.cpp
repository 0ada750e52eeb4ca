#include "forge/acpf.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

namespace forge::acpf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class PfKind { slack, pv, pq };

struct BusSetup {
  PfKind kind = PfKind::pq;
  double p_spec = 0.0;  // specified injection (gen + uncertain - demand)
  double q_spec = 0.0;
  double v_set = 1.0;   // for pv / slack
  double q_gen_total = 0.0;  // aggregate generator q bounds (pv buses)
  double q_gen_min = 0.0, q_gen_max = 0.0;
  double q_fixed_net = 0.0;  // non-generator reactive injection (uncertain - demand)
};

struct Injections {
  std::vector<BusSetup> bus;
  net::InputBinding bind;
};

Injections setup_injections(const net::Network& net, const net::InputSpace& xs,
                            const net::InputVector& x) {
  Injections inj;
  inj.bind = net::bind_input(net, xs, x);
  const int slack = net.slack_bus();
  inj.bus.assign(net.n_buses(), {});
  for (int k = 0; k < net.n_buses(); ++k) {
    auto& b = inj.bus[k];
    b.p_spec = -net.buses[k].p_demand;
    b.q_spec = -net.buses[k].q_demand;
    b.q_fixed_net = -net.buses[k].q_demand;
  }
  for (size_t u = 0; u < net.uncertain.size(); ++u) {
    const auto& inj_u = net.uncertain[u];
    const double p = inj.bind.uncertain_p[u];
    inj.bus[inj_u.bus].p_spec += p;
    inj.bus[inj_u.bus].q_spec += p * inj_u.q_ratio();
    inj.bus[inj_u.bus].q_fixed_net += p * inj_u.q_ratio();
  }
  for (size_t g = 0; g < net.generators.size(); ++g) {
    const auto& gen = net.generators[g];
    if (!gen.in_service) continue;
    auto& b = inj.bus[gen.bus];
    if (gen.bus != slack) {
      const double pg = inj.bind.gen_p[g];
      b.p_spec += std::isnan(pg) ? 0.0 : pg;
    }
    b.q_gen_min += gen.q_min;
    b.q_gen_max += gen.q_max;
    b.kind = (gen.bus == slack) ? PfKind::slack : PfKind::pv;
    const double vset = inj.bind.bus_v[gen.bus];
    b.v_set = std::isnan(vset) ? gen.v_set : vset;
  }
  return inj;
}

}  // namespace

BranchFlow branch_flow(const net::Network& net, int branch, const PowerFlowSolution& sol) {
  const auto& br = net.branches[branch];
  const auto a = net::branch_admittance(br);
  const std::complex<double> vf = std::polar(sol.v_mag[br.from_bus], sol.v_ang[br.from_bus]);
  const std::complex<double> vt = std::polar(sol.v_mag[br.to_bus], sol.v_ang[br.to_bus]);
  BranchFlow f;
  f.from = vf * std::conj(a.ff * vf + a.ft * vt);
  f.to = vt * std::conj(a.tf * vf + a.tt * vt);
  return f;
}

PowerFlowSolution solve_pf(const net::Network& net, const net::InputSpace& xs,
                           const net::InputVector& x, int contingency,
                           const PowerFlowOptions& opt) {
  const auto view = net::apply_contingency(net, contingency);
  const int n = net.n_buses();
  const int slack = net.slack_bus();
  Injections inj = setup_injections(net, xs, x);

  Eigen::MatrixXcd y = Eigen::MatrixXcd(view.y);
  Eigen::MatrixXd g = y.real(), b = y.imag();

  // working bus kinds; pv buses may be switched to pq with pinned q
  std::vector<PfKind> kind(n);
  std::vector<double> q_pin(n, 0.0);
  for (int k = 0; k < n; ++k) kind[k] = inj.bus[k].kind;

  PowerFlowSolution sol;
  sol.v_mag.resize(n);
  sol.v_ang = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k)
    sol.v_mag[k] = (kind[k] == PfKind::pq) ? 1.0 : inj.bus[k].v_set;

  auto calc_pq = [&](int k, double& p, double& q) {
    p = 0.0;
    q = 0.0;
    for (int j = 0; j < n; ++j) {
      if (g(k, j) == 0.0 && b(k, j) == 0.0) continue;
      const double th = sol.v_ang[k] - sol.v_ang[j];
      const double c = std::cos(th), s = std::sin(th);
      p += sol.v_mag[k] * sol.v_mag[j] * (g(k, j) * c + b(k, j) * s);
      q += sol.v_mag[k] * sol.v_mag[j] * (g(k, j) * s - b(k, j) * c);
    }
  };

  int total_iters = 0;
  bool converged = false;

  for (int sw = 0; sw <= opt.max_switch_iter; ++sw) {
    // index maps for the newton unknowns under current bus kinds
    std::vector<int> ang_idx(n, -1), mag_idx(n, -1);
    int nv = 0;
    for (int k = 0; k < n; ++k)
      if (kind[k] != PfKind::slack) ang_idx[k] = nv++;
    for (int k = 0; k < n; ++k)
      if (kind[k] == PfKind::pq) mag_idx[k] = nv++;

    converged = false;
    for (int it = 0; it <= opt.max_newton_iter; ++it) {
      Eigen::VectorXd mis = Eigen::VectorXd::Zero(nv);
      double worst = 0.0;
      std::vector<double> pc(n), qc(n);
      for (int k = 0; k < n; ++k) {
        calc_pq(k, pc[k], qc[k]);
        if (kind[k] != PfKind::slack) {
          const double dp = inj.bus[k].p_spec - pc[k];
          mis[ang_idx[k]] = dp;
          worst = std::max(worst, std::abs(dp));
        }
        if (kind[k] == PfKind::pq) {
          const double q_target =
              (inj.bus[k].kind == PfKind::pv) ? q_pin[k] + inj.bus[k].q_fixed_net
                                              : inj.bus[k].q_spec;
          const double dq = q_target - qc[k];
          mis[mag_idx[k]] = dq;
          worst = std::max(worst, std::abs(dq));
        }
      }
      sol.max_mismatch = worst;
      if (!std::isfinite(worst) || worst > 1e8) break;
      if (worst <= opt.pf_tol) {
        converged = true;
        break;
      }
      if (it == opt.max_newton_iter) break;

      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nv, nv);
      for (int k = 0; k < n; ++k) {
        const double vk = sol.v_mag[k];
        for (int j = 0; j < n; ++j) {
          if (k != j && g(k, j) == 0.0 && b(k, j) == 0.0) continue;
          const double vj = sol.v_mag[j];
          const double th = sol.v_ang[k] - sol.v_ang[j];
          const double c = std::cos(th), s = std::sin(th);
          if (k == j) {
            const double pk = pc[k], qk = qc[k];
            if (ang_idx[k] >= 0) {
              jac(ang_idx[k], ang_idx[k]) = -(-qk - b(k, k) * vk * vk);  // dP/dth
              if (mag_idx[k] >= 0) jac(ang_idx[k], mag_idx[k]) = -(pk / vk + g(k, k) * vk);
            }
            if (mag_idx[k] >= 0) {
              jac(mag_idx[k], ang_idx[k]) = -(pk - g(k, k) * vk * vk);  // dQ/dth
              jac(mag_idx[k], mag_idx[k]) = -(qk / vk - b(k, k) * vk);
            }
          } else {
            const double dp_dth = vk * vj * (g(k, j) * s - b(k, j) * c);
            const double dp_dv = vk * (g(k, j) * c + b(k, j) * s);
            const double dq_dth = -vk * vj * (g(k, j) * c + b(k, j) * s);
            const double dq_dv = vk * (g(k, j) * s - b(k, j) * c);
            if (ang_idx[k] >= 0 && ang_idx[j] >= 0) jac(ang_idx[k], ang_idx[j]) = -dp_dth;
            if (ang_idx[k] >= 0 && mag_idx[j] >= 0) jac(ang_idx[k], mag_idx[j]) = -dp_dv;
            if (mag_idx[k] >= 0 && ang_idx[j] >= 0) jac(mag_idx[k], ang_idx[j]) = -dq_dth;
            if (mag_idx[k] >= 0 && mag_idx[j] >= 0) jac(mag_idx[k], mag_idx[j]) = -dq_dv;
          }
        }
      }
      Eigen::VectorXd step = jac.partialPivLu().solve(-mis);
      if (!step.allFinite()) break;
      for (int k = 0; k < n; ++k) {
        if (ang_idx[k] >= 0) sol.v_ang[k] += step[ang_idx[k]];
        if (mag_idx[k] >= 0) sol.v_mag[k] += step[mag_idx[k]];
      }
      ++total_iters;
    }
    sol.iterations = total_iters;
    if (!converged) break;
    if (!opt.enforce_q_limits) break;

    // q-limit check with pv<->pq switching
    bool any_switch = false;
    for (int k = 0; k < n; ++k) {
      if (inj.bus[k].kind != PfKind::pv) continue;
      double pk, qk;
      calc_pq(k, pk, qk);
      const double q_gen = qk - inj.bus[k].q_fixed_net;
      if (kind[k] == PfKind::pv) {
        if (q_gen > inj.bus[k].q_gen_max + opt.pf_tol) {
          kind[k] = PfKind::pq;
          q_pin[k] = inj.bus[k].q_gen_max;
          any_switch = true;
        } else if (q_gen < inj.bus[k].q_gen_min - opt.pf_tol) {
          kind[k] = PfKind::pq;
          q_pin[k] = inj.bus[k].q_gen_min;
          any_switch = true;
        }
      } else {
        // back-switch when the bus voltage crosses its set-point
        const bool at_max = q_pin[k] == inj.bus[k].q_gen_max;
        if ((at_max && sol.v_mag[k] > inj.bus[k].v_set) ||
            (!at_max && sol.v_mag[k] < inj.bus[k].v_set)) {
          kind[k] = PfKind::pv;
          sol.v_mag[k] = inj.bus[k].v_set;
          any_switch = true;
        }
      }
    }
    if (!any_switch) break;
    if (sw == opt.max_switch_iter) break;
  }

  sol.converged = converged;
  for (int k = 0; k < n; ++k)
    if (inj.bus[k].kind == PfKind::pv && kind[k] == PfKind::pq) sol.switched_buses.push_back(k);

  // recover generator outputs
  sol.gen_p.assign(net.generators.size(), kNaN);
  sol.gen_q.assign(net.generators.size(), kNaN);
  if (converged) {
    auto by_bus = net.gens_by_bus();
    for (int k = 0; k < n; ++k) {
      if (by_bus[k].empty()) continue;
      double pk, qk;
      calc_pq(k, pk, qk);
      const double q_gen = qk - inj.bus[k].q_fixed_net;
      double p_gen;
      if (kind[k] == PfKind::slack || inj.bus[k].kind == PfKind::slack) {
        p_gen = pk + net.buses[k].p_demand;
        for (size_t u = 0; u < net.uncertain.size(); ++u)
          if (net.uncertain[u].bus == k) p_gen -= inj.bind.uncertain_p[u];
        sol.slack_p = p_gen;
      } else {
        p_gen = 0.0;
        for (int gi : by_bus[k]) p_gen += inj.bind.gen_p[gi];
      }
      // allocate across generators proportionally to their ranges
      double qmin = inj.bus[k].q_gen_min, qmax = inj.bus[k].q_gen_max;
      const double span = qmax - qmin;
      for (int gi : by_bus[k]) {
        const auto& gen = net.generators[gi];
        const double share =
            (span > 1e-12) ? (gen.q_max - gen.q_min) / span : 1.0 / by_bus[k].size();
        sol.gen_q[gi] = (span > 1e-12) ? gen.q_min + (q_gen - qmin) * share
                                       : q_gen / static_cast<double>(by_bus[k].size());
        if (inj.bus[k].kind == PfKind::slack) {
          double plo = 0.0, phi = 0.0;
          for (int gj : by_bus[k]) {
            plo += net.generators[gj].p_min;
            phi += net.generators[gj].p_max;
          }
          const double pspan = phi - plo;
          const double pshare =
              (pspan > 1e-12) ? (gen.p_max - gen.p_min) / pspan : 1.0 / by_bus[k].size();
          sol.gen_p[gi] = (pspan > 1e-12) ? gen.p_min + (p_gen - plo) * pshare
                                          : p_gen / static_cast<double>(by_bus[k].size());
        } else {
          sol.gen_p[gi] = inj.bind.gen_p[gi];
        }
      }
    }
  }
  return sol;
}

std::vector<Violation> check_constraints(const net::Network& net, const net::InputSpace& xs,
                                         const net::InputVector& x,
                                         const std::vector<PowerFlowSolution>& solutions,
                                         double feas_tol) {
  for (const auto& s : solutions)
    if (!s.converged) throw UnconvergedInput("constraint check on unconverged power flow");
  std::vector<Violation> out;
  const auto bind = net::bind_input(net, xs, x);

  for (int c = 0; c < static_cast<int>(solutions.size()); ++c) {
    const auto& sol = solutions[c];
    for (int k = 0; k < net.n_buses(); ++k) {
      const auto& bus = net.buses[k];
      if (sol.v_mag[k] > bus.v_max + feas_tol)
        out.push_back({ConstraintKind::v_bound, c, k, sol.v_mag[k] - bus.v_max});
      if (sol.v_mag[k] < bus.v_min - feas_tol)
        out.push_back({ConstraintKind::v_bound, c, k, bus.v_min - sol.v_mag[k]});
    }
    for (int gi = 0; gi < static_cast<int>(net.generators.size()); ++gi) {
      const auto& gen = net.generators[gi];
      if (!gen.in_service) continue;
      const double pg = sol.gen_p[gi];
      const double qg = sol.gen_q[gi];
      if (pg > gen.p_max + feas_tol)
        out.push_back({ConstraintKind::gen_p, c, gi, pg - gen.p_max});
      if (pg < gen.p_min - feas_tol)
        out.push_back({ConstraintKind::gen_p, c, gi, gen.p_min - pg});
      if (qg > gen.q_max + feas_tol)
        out.push_back({ConstraintKind::gen_q, c, gi, qg - gen.q_max});
      if (qg < gen.q_min - feas_tol)
        out.push_back({ConstraintKind::gen_q, c, gi, gen.q_min - qg});
    }
    for (int bi : net::active_branches(net, c)) {
      const auto& br = net.branches[bi];
      const auto f = branch_flow(net, bi, sol);
      if (br.s_max) {
        if (std::abs(f.from) > *br.s_max + feas_tol)
          out.push_back({ConstraintKind::flow_from, c, bi, std::abs(f.from) - *br.s_max});
        if (std::abs(f.to) > *br.s_max + feas_tol)
          out.push_back({ConstraintKind::flow_to, c, bi, std::abs(f.to) - *br.s_max});
      }
      const double dth = sol.v_ang[br.from_bus] - sol.v_ang[br.to_bus];
      if (dth > br.theta_max + feas_tol)
        out.push_back({ConstraintKind::angle_diff, c, bi, dth - br.theta_max});
      if (dth < br.theta_min - feas_tol)
        out.push_back({ConstraintKind::angle_diff, c, bi, br.theta_min - dth});
    }
    if (c == 0) {
      for (int u = 0; u < static_cast<int>(net.uncertain.size()); ++u) {
        const double p = bind.uncertain_p[u];
        if (p > net.uncertain[u].p_max + feas_tol)
          out.push_back({ConstraintKind::uncertain_bound, c, u, p - net.uncertain[u].p_max});
        if (p < net.uncertain[u].p_min - feas_tol)
          out.push_back({ConstraintKind::uncertain_bound, c, u, net.uncertain[u].p_min - p});
      }
    }
  }
  return out;
}

TwoStageResult classify_two_stage(const net::Network& net, const net::InputSpace& xs,
                                  const net::InputVector& x, const ClassifyOptions& opt) {
  const int n_cont = net.contingencies.size();
  TwoStageResult res;

  auto solve_all = [&](const net::InputVector& point, bool enforce_q,
                       std::vector<PowerFlowSolution>& sols) {
    sols.clear();
    PowerFlowOptions pf = opt.pf;
    pf.enforce_q_limits = enforce_q;
    for (int c = 0; c < n_cont; ++c) {
      sols.push_back(solve_pf(net, xs, point, c, pf));
      if (!sols.back().converged) return false;
    }
    return true;
  };

  net::InputVector current = x;
  for (int round = 0; round <= opt.max_adjust_rounds; ++round) {
    std::vector<PowerFlowSolution> stage1;
    if (!solve_all(current, false, stage1)) {
      res.report.secure = false;
      res.report.stage = Stage::none;
      res.report.diverged = true;
      return res;
    }
    auto viol1 = check_constraints(net, xs, current, stage1, opt.feas_tol);
    if (viol1.empty()) {
      res.report.secure = true;
      res.report.stage = (round == 0) ? Stage::direct : Stage::q_adjusted;
      if (round > 0) res.adjusted_x = current;
      return res;
    }

    std::vector<PowerFlowSolution> stage2;
    if (!solve_all(current, true, stage2)) {
      res.report.secure = false;
      res.report.stage = Stage::none;
      res.report.diverged = true;
      res.report.violations = viol1;
      return res;
    }
    auto viol2 = check_constraints(net, xs, current, stage2, opt.feas_tol);
    if (!viol2.empty()) {
      res.report.secure = false;
      res.report.stage = Stage::none;
      res.report.violations = viol2;
      return res;
    }

    // secure with enforced q limits: move the voltage set-points of buses
    // switched in the intact solve to their achieved magnitudes
    net::InputVector adjusted = current;
    const auto& intact = stage2[0];
    for (int i = 0; i < xs.size(); ++i) {
      const auto& d = xs.dims[i];
      if (d.role != net::InputRole::gen_v || d.frozen) continue;
      for (int sb : intact.switched_buses)
        if (sb == d.element) adjusted[i] = intact.v_mag[sb];
    }
    if ((adjusted - current).cwiseAbs().maxCoeff() <= 1e-12) {
      res.report.secure = true;
      res.report.stage = Stage::q_adjusted;
      res.adjusted_x = current;
      return res;
    }
    current = adjusted;
  }
  // no fixed point among the adjusted set-points; treat as insecure
  res.report.secure = false;
  res.report.stage = Stage::none;
  return res;
}

}  // namespace forge::acpf
