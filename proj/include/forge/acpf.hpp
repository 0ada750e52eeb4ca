#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "forge/netmodel.hpp"

namespace forge::acpf {

struct PowerFlowOptions {
  double pf_tol = 1e-8;
  int max_newton_iter = 30;
  bool enforce_q_limits = false;
  int max_switch_iter = 10;
};

struct PowerFlowSolution {
  Eigen::VectorXd v_mag;   // per bus, per-unit
  Eigen::VectorXd v_ang;   // per bus, radians
  std::vector<double> gen_q;  // per generator (allocated share at its bus)
  std::vector<double> gen_p;  // per generator; slack share included
  double slack_p = 0.0;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
  std::vector<int> switched_buses;  // buses running PQ with pinned Q at return
};

PowerFlowSolution solve_pf(const net::Network& net, const net::InputSpace& xs,
                           const net::InputVector& x, int contingency,
                           const PowerFlowOptions& opt = {});

enum class ConstraintKind {
  v_bound,
  gen_p,
  gen_q,
  flow_from,
  flow_to,
  angle_diff,
  uncertain_bound
};

struct Violation {
  ConstraintKind kind = ConstraintKind::v_bound;
  int contingency = 0;
  int element = 0;         // bus / generator / branch / injection index
  double magnitude = 0.0;  // amount beyond the bound (pu or radians)
};

enum class Stage { direct, q_adjusted, none };

struct FeasibilityReport {
  bool secure = false;
  Stage stage = Stage::none;
  bool diverged = false;
  std::vector<Violation> violations;  // of the last evaluated stage
};

// All bounds of the steady-state constraint set evaluated on converged
// per-contingency solutions; throws UnconvergedInput otherwise.
std::vector<Violation> check_constraints(const net::Network& net, const net::InputSpace& xs,
                                         const net::InputVector& x,
                                         const std::vector<PowerFlowSolution>& solutions,
                                         double feas_tol = 1e-6);

struct ClassifyOptions {
  PowerFlowOptions pf;
  double feas_tol = 1e-6;
  int max_adjust_rounds = 3;
};

struct TwoStageResult {
  FeasibilityReport report;
  std::optional<net::InputVector> adjusted_x;  // present when stage == q_adjusted
};

TwoStageResult classify_two_stage(const net::Network& net, const net::InputSpace& xs,
                                  const net::InputVector& x, const ClassifyOptions& opt = {});

// complex flows of one branch given a solution (from side, to side)
struct BranchFlow {
  std::complex<double> from, to;
};
BranchFlow branch_flow(const net::Network& net, int branch, const PowerFlowSolution& sol);

}  // namespace forge::acpf
