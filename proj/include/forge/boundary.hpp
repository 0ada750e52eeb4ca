#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "forge/acpf.hpp"
#include "forge/certify.hpp"
#include "forge/netmodel.hpp"
#include "forge/qcrelax.hpp"

namespace forge::boundary {

struct ProjectionOptions {
  double feas_tol = 1e-6;
  double nlp_tol = 1e-6;
  int max_sqp_iter = 60;
  double fd_step = 1e-5;          // normalized coordinates
  double interior_margin = 5e-6;  // inward nudge of the converged point
  double penalty = 30.0;          // l1 restoration weight
};

struct ProjectionResult {
  bool ok = false;
  double r = 0.0;  // normalized distance to x_hat
  net::InputVector x_star;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
};

// Closest dispatch feasible for the nonconvex steady-state constraint set,
// found by sequential conic programming over the power-flow-reduced
// constraints. `start` overrides the default warm start at x_hat.
ProjectionResult closest_feasible_ac(const net::Network& net, const net::InputSpace& xs,
                                     const net::InputVector& x_hat,
                                     const ProjectionOptions& opt = {},
                                     const std::optional<net::InputVector>& start = {});

struct BoundarySample {
  net::InputVector x_raw;
  bool secure_raw = false;
  acpf::Stage stage = acpf::Stage::none;
  bool diverged = false;
  net::InputVector x_final;        // classified point (possibly q-adjusted)
  std::optional<net::InputVector> x_projected;  // extra feasible record
  double r_projection = -1.0;
  std::vector<acpf::Violation> violations;  // of the raw point when insecure
  std::uint64_t seed = 0;
};

struct BoundaryOptions {
  int n2 = 1000;
  std::uint64_t seed = 1;
  ProjectionOptions projection;
  acpf::ClassifyOptions classify;
  int threads = 1;
  // when set, failed projections retry from this model's projection point
  const qcrelax::QCModel* qc_warm_start = nullptr;
};

struct BoundaryResult {
  std::vector<BoundarySample> samples;
  double secure_fraction = 0.0;  // of the raw draws
  int projections_attempted = 0;
  int projections_succeeded = 0;
};

BoundaryResult identify_boundary(const net::Network& net, const net::InputSpace& xs,
                                 const certify::Polytope& polytope, const BoundaryOptions& opt);

}  // namespace forge::boundary
