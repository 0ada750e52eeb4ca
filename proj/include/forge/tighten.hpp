#pragma once

#include "forge/netmodel.hpp"
#include "forge/qcrelax.hpp"
#include "forge/socp.hpp"

namespace forge::tighten {

struct TightenedBounds {
  qcrelax::RelaxationBounds bounds;  // intact entries tightened
  net::InputSpace space;             // bt_lo / bt_hi updated
  int iterations_used = 0;
  double v_bt = 1.0;                 // Prod (bt width / original width) over free dims
  int subproblem_failures = 0;
};

struct TightenOptions {
  int max_iters = 3;
  double fixpoint_tol = 1e-4;  // pu / radians per-bound change
  double feas_tol = 1e-6;
  int threads = 1;
  socp::BackendConfig backend;
};

// One sweep of min/max subproblems over the intact-state relaxation
// (voltage squares, branch angle differences, input dims). Jacobi style:
// all subproblems use the incoming bounds. Throws EmptyFeasibleSet when a
// subproblem proves the whole box insecure.
TightenedBounds obbt_pass(const net::Network& net, const net::InputSpace& xs,
                          const qcrelax::RelaxationBounds& bounds, const TightenOptions& opt = {});

// Repeats passes until the fixed-point tolerance or the iteration cap.
TightenedBounds tighten(const net::Network& net, const net::InputSpace& xs,
                        const TightenOptions& opt = {});

}  // namespace forge::tighten
