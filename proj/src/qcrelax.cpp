#include "forge/qcrelax.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace forge::qcrelax {

namespace {

using socp::ProgramBuilder;
using Terms = std::vector<std::pair<int, double>>;

constexpr double kThetaCap = 1.5707;  // just inside pi/2

// w = x*y over the box [xl,xu] x [yl,yu]
void add_mccormick(ProgramBuilder& b, int w, int x, int y, double xl, double xu, double yl,
                   double yu) {
  b.add_ge({{w, 1.0}, {x, -yl}, {y, -xl}}, -xl * yl);
  b.add_ge({{w, 1.0}, {x, -yu}, {y, -xu}}, -xu * yu);
  b.add_le({{w, 1.0}, {x, -yl}, {y, -xu}}, -xu * yl);
  b.add_le({{w, 1.0}, {x, -yu}, {y, -xl}}, -xl * yu);
}

struct TrigRange {
  double cs_lo = 0.0, cs_hi = 1.0;
  double sn_lo = -1.0, sn_hi = 1.0;
};

TrigRange trig_range(double tl, double tu) {
  TrigRange r;
  const double tm = std::max(std::abs(tl), std::abs(tu));
  const double kc = (tm > 1e-12) ? (1.0 - std::cos(tm)) / (tm * tm) : 0.5;
  r.cs_lo = std::min(std::cos(tl), std::cos(tu));
  r.cs_hi = (tl <= 0.0 && tu >= 0.0) ? 1.0
                                     : 1.0 - kc * std::min(tl * tl, tu * tu);
  const double ch = std::cos(tm / 2.0), sh = std::sin(tm / 2.0);
  r.sn_hi = std::min(1.0, ch * (tu - tm / 2.0) + sh);
  r.sn_lo = std::max(-1.0, ch * (tl + tm / 2.0) - sh);
  return r;
}

}  // namespace

RelaxationBounds default_bounds(const net::Network& net) {
  RelaxationBounds rb;
  const int n = net.n_buses();
  rb.v_min.resize(n);
  rb.v_max.resize(n);
  for (int k = 0; k < n; ++k) {
    rb.v_min[k] = net.buses[k].v_min;
    rb.v_max[k] = net.buses[k].v_max;
  }
  for (const auto& br : net.branches) {
    rb.theta_min.push_back(br.theta_min);
    rb.theta_max.push_back(br.theta_max);
  }
  rb.v_min_out = rb.v_min;
  rb.v_max_out = rb.v_max;
  rb.theta_min_out = rb.theta_min;
  rb.theta_max_out = rb.theta_max;
  return rb;
}

QCModel build_qc(const net::Network& net, const net::InputSpace& xs,
                 const RelaxationBounds& bounds, const BuildOptions& opt) {
  const int n_bus = net.n_buses();
  const int n_br = static_cast<int>(net.branches.size());
  const int n_gen = static_cast<int>(net.generators.size());
  const int n_unc = static_cast<int>(net.uncertain.size());
  const int slack = net.slack_bus();
  const double tol = opt.feas_tol;

  for (int bi = 0; bi < n_br; ++bi) {
    if (std::abs(bounds.theta_min[bi]) > kThetaCap + 1e-6 ||
        std::abs(bounds.theta_max[bi]) > kThetaCap + 1e-6 ||
        std::abs(bounds.theta_min_out[bi]) > kThetaCap + 1e-6 ||
        std::abs(bounds.theta_max_out[bi]) > kThetaCap + 1e-6)
      throw BoundDomainError("branch angle bounds must stay within +-pi/2");
  }

  QCModel model;
  model.space = xs;
  model.feas_tol = tol;
  if (opt.intact_only)
    model.contingencies = {0};
  else
    for (int c = 0; c < net.contingencies.size(); ++c) model.contingencies.push_back(c);
  const int n_cont = static_cast<int>(model.contingencies.size());

  // effective per-bus voltage bounds: frozen set-point dims collapse them
  Eigen::VectorXd v_lo = bounds.v_min, v_hi = bounds.v_max;
  Eigen::VectorXd v_lo_out = bounds.v_min_out, v_hi_out = bounds.v_max_out;
  for (const auto& d : xs.dims) {
    if (d.role != net::InputRole::gen_v || !d.frozen) continue;
    v_lo[d.element] = v_hi[d.element] = d.frozen_value;
    v_lo_out[d.element] = v_hi_out[d.element] = d.frozen_value;
  }

  ProgramBuilder b;
  VarMap& vm = model.vars;
  vm.n_cont = n_cont;
  vm.n_bus = n_bus;
  vm.n_branch = n_br;
  vm.n_gen = n_gen;
  vm.n_unc = n_unc;
  auto grid = [&](std::vector<std::vector<int>>& v, int cols) {
    v.assign(n_cont, std::vector<int>(cols, -1));
  };
  grid(vm.v, n_bus);
  grid(vm.theta, n_bus);
  grid(vm.w_kk, n_bus);
  grid(vm.w_re, n_br);
  grid(vm.w_im, n_br);
  grid(vm.theta_d, n_br);
  grid(vm.u_vv, n_br);
  grid(vm.cs, n_br);
  grid(vm.sn, n_br);
  grid(vm.l_cur, n_br);
  grid(vm.p_from, n_br);
  grid(vm.q_from, n_br);
  grid(vm.p_to, n_br);
  grid(vm.q_to, n_br);
  grid(vm.gen_p, n_gen);
  grid(vm.gen_q, n_gen);
  vm.uncertain_p.assign(n_unc, -1);

  for (int u = 0; u < n_unc; ++u) {
    vm.uncertain_p[u] = b.add_var();
    b.add_box(vm.uncertain_p[u], net.uncertain[u].p_min - tol, net.uncertain[u].p_max + tol);
  }

  auto gens_at = net.gens_by_bus();

  for (int blk = 0; blk < n_cont; ++blk) {
    const int c = model.contingencies[blk];
    const bool intact = (c == 0);
    const Eigen::VectorXd& vl = intact ? v_lo : v_lo_out;
    const Eigen::VectorXd& vh = intact ? v_hi : v_hi_out;
    const auto& th_lo_all = intact ? bounds.theta_min : bounds.theta_min_out;
    const auto& th_hi_all = intact ? bounds.theta_max : bounds.theta_max_out;
    const auto active = net::active_branches(net, c);
    std::vector<char> is_active(n_br, 0);
    for (int bi : active) is_active[bi] = 1;

    for (int k = 0; k < n_bus; ++k) {
      vm.v[blk][k] = b.add_var();
      vm.theta[blk][k] = b.add_var();
      vm.w_kk[blk][k] = b.add_var();
      b.add_box(vm.v[blk][k], vl[k] - tol, vh[k] + tol);
      const double wl = std::max(0.0, vl[k] - tol), wh = vh[k] + tol;
      b.add_box(vm.w_kk[blk][k], wl * wl, wh * wh);
    }
    b.add_eq({{vm.theta[blk][slack], 1.0}}, 0.0);

    for (int g = 0; g < n_gen; ++g) {
      const auto& gen = net.generators[g];
      if (!gen.in_service) continue;
      vm.gen_p[blk][g] = b.add_var();
      vm.gen_q[blk][g] = b.add_var();
      b.add_box(vm.gen_p[blk][g], gen.p_min - tol, gen.p_max + tol);
      b.add_box(vm.gen_q[blk][g], gen.q_min - tol, gen.q_max + tol);
    }

    for (int bi : active) {
      const auto& br = net.branches[bi];
      const int i = br.from_bus, j = br.to_bus;
      const double tl = th_lo_all[bi] - tol, tu = th_hi_all[bi] + tol;

      const int wre = vm.w_re[blk][bi] = b.add_var();
      const int wim = vm.w_im[blk][bi] = b.add_var();
      const int thd = vm.theta_d[blk][bi] = b.add_var();
      const int u = vm.u_vv[blk][bi] = b.add_var();
      const int csv = vm.cs[blk][bi] = b.add_var();
      const int snv = vm.sn[blk][bi] = b.add_var();
      const int lc = vm.l_cur[blk][bi] = b.add_var();
      const int pf = vm.p_from[blk][bi] = b.add_var();
      const int qf = vm.q_from[blk][bi] = b.add_var();
      const int pt = vm.p_to[blk][bi] = b.add_var();
      const int qt = vm.q_to[blk][bi] = b.add_var();

      b.add_eq({{thd, 1.0}, {vm.theta[blk][i], -1.0}, {vm.theta[blk][j], 1.0}}, 0.0);
      b.add_box(thd, tl, tu);

      // voltage product envelope
      const double uil = std::max(0.0, vl[i] - tol), uiu = vh[i] + tol;
      const double ujl = std::max(0.0, vl[j] - tol), uju = vh[j] + tol;
      add_mccormick(b, u, vm.v[blk][i], vm.v[blk][j], uil, uiu, ujl, uju);

      // trig envelopes
      if (tu - tl < 1e-9) {
        b.add_eq({{csv, 1.0}}, std::cos(tl));
        b.add_eq({{snv, 1.0}}, std::sin(tl));
      } else {
        const double tm = std::max(std::abs(tl), std::abs(tu));
        const double kc = (1.0 - std::cos(tm)) / (tm * tm);
        // cos: concave quadratic cap and the chord
        // kc * thd^2 <= 1 - csv  as a rotated cone
        b.add_soc({{{{csv, -0.5}}, 1.0},                      // (1 - cs + 1)/2
                   {{{thd, std::sqrt(kc)}}, 0.0},             // sqrt(kc) * thd
                   {{{csv, 0.5}}, 0.0}});                     // (1 - cs - 1)/2
        const double slope_c = (std::cos(tu) - std::cos(tl)) / (tu - tl);
        b.add_ge({{csv, 1.0}, {thd, -slope_c}}, std::cos(tl) - slope_c * tl);

        // sin: tangent lines at +-tm/2 plus one-sided chords
        const double ch = std::cos(tm / 2.0), sh = std::sin(tm / 2.0);
        b.add_le({{snv, 1.0}, {thd, -ch}}, sh - ch * tm / 2.0);
        b.add_ge({{snv, 1.0}, {thd, -ch}}, -sh + ch * tm / 2.0);
        const double slope_s = (std::sin(tu) - std::sin(tl)) / (tu - tl);
        if (tl >= 0.0)
          b.add_ge({{snv, 1.0}, {thd, -slope_s}}, std::sin(tl) - slope_s * tl);
        else if (tu <= 0.0)
          b.add_le({{snv, 1.0}, {thd, -slope_s}}, std::sin(tl) - slope_s * tl);
      }

      const TrigRange tr = trig_range(tl, tu);
      b.add_box(csv, tr.cs_lo, tr.cs_hi);
      b.add_box(snv, tr.sn_lo, tr.sn_hi);

      // W products via nested bilinear envelopes
      const double ul = uil * ujl, uu = uiu * uju;
      add_mccormick(b, wre, u, csv, ul, uu, tr.cs_lo, tr.cs_hi);
      add_mccormick(b, wim, u, snv, ul, uu, tr.sn_lo, tr.sn_hi);

      // angle rows on the W pair
      if (tu < kThetaCap) b.add_le({{wim, 1.0}, {wre, -std::tan(tu)}}, 0.0);
      if (tl > -kThetaCap) b.add_ge({{wim, 1.0}, {wre, -std::tan(tl)}}, 0.0);

      // flow definitions
      const auto a = net::branch_admittance(br);
      const double gff = a.ff.real(), bff = a.ff.imag();
      const double gft = a.ft.real(), bft = a.ft.imag();
      const double gtf = a.tf.real(), btf = a.tf.imag();
      const double gtt = a.tt.real(), btt = a.tt.imag();
      b.add_eq({{pf, 1.0}, {vm.w_kk[blk][i], -gff}, {wre, -gft}, {wim, -bft}}, 0.0);
      b.add_eq({{qf, 1.0}, {vm.w_kk[blk][i], bff}, {wim, -gft}, {wre, bft}}, 0.0);
      b.add_eq({{pt, 1.0}, {vm.w_kk[blk][j], -gtt}, {wre, -gtf}, {wim, btf}}, 0.0);
      b.add_eq({{qt, 1.0}, {vm.w_kk[blk][j], btt}, {wim, gtf}, {wre, btf}}, 0.0);

      // from-side squared current and both current-flow couplings
      const std::complex<double> m = a.ff * std::conj(a.ft);
      b.add_eq({{lc, 1.0},
                {vm.w_kk[blk][i], -std::norm(a.ff)},
                {vm.w_kk[blk][j], -std::norm(a.ft)},
                {wre, -2.0 * m.real()},
                {wim, 2.0 * m.imag()}},
               0.0);
      b.add_ge({{lc, 1.0}}, 0.0);
      // |S_f|^2 <= W_ii * l
      b.add_soc({{{{vm.w_kk[blk][i], 0.5}, {lc, 0.5}}, 0.0},
                 {{{pf, 1.0}}, 0.0},
                 {{{qf, 1.0}}, 0.0},
                 {{{vm.w_kk[blk][i], 0.5}, {lc, -0.5}}, 0.0}});
      // |S_t|^2 <= W_jj * l_t with l_t spelled out as an affine expression
      const std::complex<double> nmix = a.tf * std::conj(a.tt);
      ProgramBuilder::Affine lt;
      lt.terms = {{vm.w_kk[blk][i], std::norm(a.tf)},
                  {vm.w_kk[blk][j], std::norm(a.tt)},
                  {wre, 2.0 * nmix.real()},
                  {wim, -2.0 * nmix.imag()}};
      ProgramBuilder::Affine t_row, pt_row, qt_row, d_row;
      t_row.terms = lt.terms;
      for (auto& term : t_row.terms) term.second *= 0.5;
      t_row.terms.push_back({vm.w_kk[blk][j], 0.5});
      pt_row.terms = {{pt, 1.0}};
      qt_row.terms = {{qt, 1.0}};
      d_row.terms = lt.terms;
      for (auto& term : d_row.terms) term.second *= -0.5;
      d_row.terms.push_back({vm.w_kk[blk][j], 0.5});
      b.add_soc({t_row, pt_row, qt_row, d_row});

      // thermal ratings
      if (br.s_max) {
        const double cap = *br.s_max + tol;
        b.add_soc({{{}, cap}, {{{pf, 1.0}}, 0.0}, {{{qf, 1.0}}, 0.0}});
        b.add_soc({{{}, cap}, {{{pt, 1.0}}, 0.0}, {{{qt, 1.0}}, 0.0}});
      }
    }

    // square envelopes once per bus
    for (int k = 0; k < n_bus; ++k) {
      const int v = vm.v[blk][k], w = vm.w_kk[blk][k];
      b.add_soc({{{{w, 0.5}}, 0.5}, {{{v, 1.0}}, 0.0}, {{{w, 0.5}}, -0.5}});  // v^2 <= w
      const double lo = std::max(0.0, vl[k] - tol), hi = vh[k] + tol;
      b.add_le({{w, 1.0}, {v, -(lo + hi)}}, -lo * hi);
    }

    // nodal balance
    for (int k = 0; k < n_bus; ++k) {
      Terms pr, qr;
      for (int g : gens_at[k]) {
        pr.push_back({vm.gen_p[blk][g], 1.0});
        qr.push_back({vm.gen_q[blk][g], 1.0});
      }
      for (int u = 0; u < n_unc; ++u)
        if (net.uncertain[u].bus == k) {
          pr.push_back({vm.uncertain_p[u], 1.0});
          qr.push_back({vm.uncertain_p[u], net.uncertain[u].q_ratio()});
        }
      pr.push_back({vm.w_kk[blk][k], -net.buses[k].shunt_g});
      qr.push_back({vm.w_kk[blk][k], net.buses[k].shunt_b});
      for (int bi : active) {
        const auto& br = net.branches[bi];
        if (br.from_bus == k) {
          pr.push_back({vm.p_from[blk][bi], -1.0});
          qr.push_back({vm.q_from[blk][bi], -1.0});
        }
        if (br.to_bus == k) {
          pr.push_back({vm.p_to[blk][bi], -1.0});
          qr.push_back({vm.q_to[blk][bi], -1.0});
        }
      }
      b.add_eq(pr, net.buses[k].p_demand);
      b.add_eq(qr, net.buses[k].q_demand);
    }

    // preventive linking to the intact block
    if (blk > 0) {
      for (int g = 0; g < n_gen; ++g) {
        const auto& gen = net.generators[g];
        if (!gen.in_service || gen.bus == slack) continue;
        b.add_eq({{vm.gen_p[blk][g], 1.0}, {vm.gen_p[0][g], -1.0}}, 0.0);
      }
      for (int k : net.generator_buses()) {
        b.add_eq({{vm.w_kk[blk][k], 1.0}, {vm.w_kk[0][k], -1.0}}, 0.0);
        b.add_eq({{vm.v[blk][k], 1.0}, {vm.v[0][k], -1.0}}, 0.0);
      }
    }
  }

  // x aliases and frozen pins
  model.x_column.assign(xs.size(), -1);
  for (int d = 0; d < xs.size(); ++d) {
    const auto& dim = xs.dims[d];
    int col = -1;
    switch (dim.role) {
      case net::InputRole::gen_p_excl_slack:
        col = vm.gen_p[0][dim.element];
        break;
      case net::InputRole::gen_v:
        col = vm.v[0][dim.element];
        break;
      case net::InputRole::uncertain_p:
        col = vm.uncertain_p[dim.element];
        break;
    }
    model.x_column[d] = col;
    if (dim.frozen && dim.role != net::InputRole::gen_v)
      b.add_eq({{col, 1.0}}, dim.frozen_value);
    if (!dim.frozen && dim.in_x) {
      // tightened input box
      b.add_box(col, dim.bt_lo - tol, dim.bt_hi + tol);
    }
  }

  if (opt.with_distance) {
    vm.radius = b.add_var(1.0);  // objective: min R
    std::vector<ProgramBuilder::Affine> rows;
    rows.push_back({{{vm.radius, 1.0}}, 0.0});
    for (int d = 0; d < xs.size(); ++d) {
      const auto& dim = xs.dims[d];
      if (dim.frozen || !dim.in_x) continue;
      const double scale = 1.0 / (dim.hi - dim.lo);
      rows.push_back({{{model.x_column[d], scale}}, 0.0});  // offset set per probe
    }
    model.distance_block = b.n_soc_blocks();
    (void)b.add_soc(rows);
  }

  model.program = b.build();
  if (opt.with_distance) {
    // rows of the distance cone sit at the very end of cone_h
    int sz = 1 + xs.free_count();
    model.distance_row_start = model.program.cone_rows() - sz;
  }
  return model;
}

CertificateResult closest_feasible_qc(const QCModel& model, const net::InputVector& x_hat,
                                      const socp::BackendConfig& backend, double r_eps) {
  if (model.vars.radius < 0) throw SolverFailure("model built without a distance objective");
  socp::ConicProgram prog = model.program;
  const auto& xs = model.space;

  // distance rows: s_k = scale*(x_k - xhat_k)  ->  h = -scale*xhat_k
  int row = model.distance_row_start + 1;
  for (int d = 0; d < xs.size(); ++d) {
    const auto& dim = xs.dims[d];
    if (dim.frozen || !dim.in_x) continue;
    const double scale = 1.0 / (dim.hi - dim.lo);
    prog.cone_h[row++] = -scale * x_hat[d];
  }

  socp::ConicSolution sol = socp::solve_with_backend(prog, backend);
  CertificateResult res;
  res.solver_status = sol.status;
  switch (sol.status) {
    case socp::SolveStatus::optimal: {
      res.x_star = net::InputVector(xs.size());
      for (int d = 0; d < xs.size(); ++d) {
        const auto& dim = xs.dims[d];
        res.x_star[d] = dim.frozen ? dim.frozen_value : sol.x_primal[model.x_column[d]];
      }
      res.x_star_unit = xs.normalize(res.x_star);
      const Eigen::VectorXd hat_unit = xs.normalize(x_hat);
      double r2 = 0.0;
      for (int k : xs.free_indices()) {
        const double dv = res.x_star_unit[k] - hat_unit[k];
        r2 += dv * dv;
      }
      res.r_star = std::sqrt(r2);
      res.status = (res.r_star > r_eps) ? CertificateResult::Status::cut_found
                                        : CertificateResult::Status::feasible_point;
      break;
    }
    case socp::SolveStatus::primal_infeasible:
      res.status = CertificateResult::Status::qc_empty;
      break;
    default:
      res.status = CertificateResult::Status::solver_failure;
      break;
  }
  return res;
}

Eigen::VectorXd lift_solution(const QCModel& model, const net::Network& net,
                              const net::InputSpace& xs, const net::InputVector& x,
                              const std::vector<acpf::PowerFlowSolution>& sols) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(model.program.n_vars);
  const auto& vm = model.vars;
  const auto bind = net::bind_input(net, xs, x);

  for (int u = 0; u < vm.n_unc; ++u) z[vm.uncertain_p[u]] = bind.uncertain_p[u];

  for (size_t blk = 0; blk < model.contingencies.size(); ++blk) {
    const int c = model.contingencies[blk];
    const auto& sol = sols.at(c);
    for (int k = 0; k < vm.n_bus; ++k) {
      z[vm.v[blk][k]] = sol.v_mag[k];
      z[vm.theta[blk][k]] = sol.v_ang[k];
      z[vm.w_kk[blk][k]] = sol.v_mag[k] * sol.v_mag[k];
    }
    for (int g = 0; g < vm.n_gen; ++g) {
      if (vm.gen_p[blk][g] < 0) continue;
      z[vm.gen_p[blk][g]] = sol.gen_p[g];
      z[vm.gen_q[blk][g]] = sol.gen_q[g];
    }
    for (int bi : net::active_branches(net, c)) {
      const auto& br = net.branches[bi];
      const int i = br.from_bus, j = br.to_bus;
      const std::complex<double> vi = std::polar(sol.v_mag[i], sol.v_ang[i]);
      const std::complex<double> vj = std::polar(sol.v_mag[j], sol.v_ang[j]);
      const std::complex<double> wij = vi * std::conj(vj);
      z[vm.w_re[blk][bi]] = wij.real();
      z[vm.w_im[blk][bi]] = wij.imag();
      z[vm.theta_d[blk][bi]] = sol.v_ang[i] - sol.v_ang[j];
      z[vm.u_vv[blk][bi]] = sol.v_mag[i] * sol.v_mag[j];
      z[vm.cs[blk][bi]] = std::cos(z[vm.theta_d[blk][bi]]);
      z[vm.sn[blk][bi]] = std::sin(z[vm.theta_d[blk][bi]]);
      const auto a = net::branch_admittance(br);
      const std::complex<double> i_from = a.ff * vi + a.ft * vj;
      z[vm.l_cur[blk][bi]] = std::norm(i_from);
      const auto f = acpf::branch_flow(net, bi, sol);
      z[vm.p_from[blk][bi]] = f.from.real();
      z[vm.q_from[blk][bi]] = f.from.imag();
      z[vm.p_to[blk][bi]] = f.to.real();
      z[vm.q_to[blk][bi]] = f.to.imag();
    }
  }
  if (vm.radius >= 0) z[vm.radius] = 0.0;
  return z;
}

double lifted_violation(const QCModel& model, const Eigen::VectorXd& z) {
  const auto& p = model.program;
  double worst = 0.0;
  if (p.eq_rows() > 0)
    worst = (p.eq_a * z - p.eq_b).cwiseAbs().maxCoeff();

  Eigen::VectorXd s = p.cone_h - p.cone_g * z;
  // recenter the distance rows on the point itself: the cone then reads
  // ||D(x - x)|| <= R = 0, which the lifted point satisfies exactly
  if (model.distance_row_start >= 0) {
    const auto& xs = model.space;
    int row = model.distance_row_start + 1;
    for (int d = 0; d < xs.size(); ++d) {
      if (xs.dims[d].frozen || !xs.dims[d].in_x) continue;
      const double scale = 1.0 / (xs.dims[d].hi - xs.dims[d].lo);
      s[row] += -scale * z[model.x_column[d]];
      ++row;
    }
  }
  int at = 0;
  for (const auto& cone : p.cones) {
    auto seg = s.segment(at, cone.size);
    if (cone.kind == socp::ConeKind::nonnegative) {
      worst = std::max(worst, -seg.minCoeff());
    } else {
      worst = std::max(worst, seg.tail(cone.size - 1).norm() - seg[0]);
    }
    at += cone.size;
  }
  return worst;
}

}  // namespace forge::qcrelax
