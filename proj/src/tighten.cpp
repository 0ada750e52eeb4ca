#include "forge/tighten.hpp"

#include <algorithm>
#include <cmath>

#include "forge/parallel.hpp"

namespace forge::tighten {

namespace {

struct Subproblem {
  int column = 0;
  bool maximize = false;
  enum class Target { w_kk, theta_d, x_dim } target;
  int element = 0;  // bus / branch / dim index
};

struct SubResult {
  bool ok = false;
  bool infeasible = false;
  double value = 0.0;
};

}  // namespace

TightenedBounds obbt_pass(const net::Network& net, const net::InputSpace& xs,
                          const qcrelax::RelaxationBounds& bounds, const TightenOptions& opt) {
  qcrelax::BuildOptions bo;
  bo.with_distance = false;
  bo.intact_only = true;
  bo.feas_tol = opt.feas_tol;
  qcrelax::QCModel model = qcrelax::build_qc(net, xs, bounds, bo);
  const auto& vm = model.vars;

  std::vector<Subproblem> subs;
  for (int k = 0; k < net.n_buses(); ++k)
    for (bool mx : {false, true})
      subs.push_back({vm.w_kk[0][k], mx, Subproblem::Target::w_kk, k});
  for (int bi : net::active_branches(net, 0))
    for (bool mx : {false, true})
      subs.push_back({vm.theta_d[0][bi], mx, Subproblem::Target::theta_d, bi});
  for (int d = 0; d < xs.size(); ++d) {
    if (xs.dims[d].frozen || !xs.dims[d].in_x) continue;
    for (bool mx : {false, true})
      subs.push_back({model.x_column[d], mx, Subproblem::Target::x_dim, d});
  }

  std::vector<SubResult> results(subs.size());
  parallel_for(static_cast<int>(subs.size()), opt.threads, [&](int i) {
    socp::ConicProgram prog = model.program;
    prog.objective.setZero();
    prog.objective[subs[i].column] = subs[i].maximize ? -1.0 : 1.0;
    socp::ConicSolution sol = socp::solve_with_backend(prog, opt.backend);
    SubResult r;
    if (sol.status == socp::SolveStatus::optimal) {
      r.ok = true;
      r.value = subs[i].maximize ? -sol.obj_value : sol.obj_value;
    } else if (sol.status == socp::SolveStatus::primal_infeasible) {
      r.infeasible = true;
    }
    results[i] = r;
  });

  TightenedBounds out;
  out.bounds = bounds;
  out.space = xs;

  for (size_t i = 0; i < subs.size(); ++i) {
    const auto& sp = subs[i];
    const auto& r = results[i];
    if (r.infeasible) throw EmptyFeasibleSet("bound subproblem infeasible: box holds no secure point");
    if (!r.ok) {
      ++out.subproblem_failures;
      continue;
    }
    switch (sp.target) {
      case Subproblem::Target::w_kk: {
        double& lo = out.bounds.v_min[sp.element];
        double& hi = out.bounds.v_max[sp.element];
        if (sp.maximize)
          hi = std::min(hi, std::sqrt(std::max(0.0, r.value)));
        else
          lo = std::max(lo, std::sqrt(std::max(0.0, r.value)));
        if (lo > hi) lo = hi = 0.5 * (lo + hi);
        break;
      }
      case Subproblem::Target::theta_d: {
        double& lo = out.bounds.theta_min[sp.element];
        double& hi = out.bounds.theta_max[sp.element];
        if (sp.maximize)
          hi = std::min(hi, r.value);
        else
          lo = std::max(lo, r.value);
        if (lo > hi) lo = hi = 0.5 * (lo + hi);
        break;
      }
      case Subproblem::Target::x_dim: {
        auto& dim = out.space.dims[sp.element];
        if (sp.maximize)
          dim.bt_hi = std::min(dim.bt_hi, std::min(dim.hi, r.value));
        else
          dim.bt_lo = std::max(dim.bt_lo, std::max(dim.lo, r.value));
        if (dim.bt_lo > dim.bt_hi) dim.bt_lo = dim.bt_hi = 0.5 * (dim.bt_lo + dim.bt_hi);
        break;
      }
    }
  }

  // voltage dims of the input track their bus bounds
  for (auto& dim : out.space.dims) {
    if (dim.role != net::InputRole::gen_v || dim.frozen) continue;
    dim.bt_lo = std::max(dim.bt_lo, out.bounds.v_min[dim.element]);
    dim.bt_hi = std::min(dim.bt_hi, out.bounds.v_max[dim.element]);
    if (dim.bt_lo > dim.bt_hi) dim.bt_lo = dim.bt_hi = 0.5 * (dim.bt_lo + dim.bt_hi);
  }

  out.iterations_used = 1;
  out.v_bt = out.space.tightened_volume_fraction();
  return out;
}

TightenedBounds tighten(const net::Network& net, const net::InputSpace& xs,
                        const TightenOptions& opt) {
  qcrelax::RelaxationBounds rb = qcrelax::default_bounds(net);
  // honor bt bounds already present on the space
  TightenedBounds cur;
  cur.bounds = rb;
  cur.space = xs;

  int used = 0;
  int failures = 0;
  for (int pass = 0; pass < opt.max_iters; ++pass) {
    TightenedBounds next = obbt_pass(net, cur.space, cur.bounds, opt);
    ++used;
    failures += next.subproblem_failures;

    double change = 0.0;
    for (int k = 0; k < net.n_buses(); ++k) {
      change = std::max(change, std::abs(next.bounds.v_min[k] - cur.bounds.v_min[k]));
      change = std::max(change, std::abs(next.bounds.v_max[k] - cur.bounds.v_max[k]));
    }
    for (size_t bi = 0; bi < net.branches.size(); ++bi) {
      change = std::max(change, std::abs(next.bounds.theta_min[bi] - cur.bounds.theta_min[bi]));
      change = std::max(change, std::abs(next.bounds.theta_max[bi] - cur.bounds.theta_max[bi]));
    }
    for (int d = 0; d < xs.size(); ++d) {
      change = std::max(change, std::abs(next.space.dims[d].bt_lo - cur.space.dims[d].bt_lo));
      change = std::max(change, std::abs(next.space.dims[d].bt_hi - cur.space.dims[d].bt_hi));
    }
    cur = next;
    if (change < opt.fixpoint_tol) break;
  }
  cur.iterations_used = used;
  cur.subproblem_failures = failures;
  cur.v_bt = cur.space.tightened_volume_fraction();
  return cur;
}

}  // namespace forge::tighten
