#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "forge/acpf.hpp"
#include "forge/netmodel.hpp"
#include "forge/socp.hpp"

namespace forge::qcrelax {

// Voltage / angle-difference bounds the relaxation is built under. The intact
// state may carry tightened bounds; outage states keep their own (untightened)
// set.
struct RelaxationBounds {
  Eigen::VectorXd v_min, v_max;                // per bus, intact state
  std::vector<double> theta_min, theta_max;    // per branch, intact state
  Eigen::VectorXd v_min_out, v_max_out;        // per bus, outage states
  std::vector<double> theta_min_out, theta_max_out;
};

RelaxationBounds default_bounds(const net::Network& net);

struct BuildOptions {
  bool with_distance = true;   // add the radius variable + distance cone
  bool intact_only = false;    // ignore the contingency list (bound tightening)
  double feas_tol = 1e-6;      // slack applied to every bound row
};

// column bookkeeping; -1 where a quantity does not exist in a block
struct VarMap {
  int n_cont = 0, n_bus = 0, n_branch = 0, n_gen = 0, n_unc = 0;
  // [c][bus]
  std::vector<std::vector<int>> v, theta, w_kk;
  // [c][branch]; only active branches of block c are populated
  std::vector<std::vector<int>> w_re, w_im, theta_d, u_vv, cs, sn, l_cur;
  std::vector<std::vector<int>> p_from, q_from, p_to, q_to;
  // [c][gen]
  std::vector<std::vector<int>> gen_p, gen_q;
  std::vector<int> uncertain_p;  // shared across blocks
  int radius = -1;
};

struct QCModel {
  socp::ConicProgram program;
  VarMap vars;
  net::InputSpace space;
  std::vector<int> x_column;        // program column backing each x dim
  std::vector<int> contingencies;   // contingency indices included (block order)
  int distance_block = -1;          // soc block index of the distance cone
  int distance_row_start = -1;      // row of its t-entry within cone_h
  double feas_tol = 1e-6;
};

QCModel build_qc(const net::Network& net, const net::InputSpace& xs,
                 const RelaxationBounds& bounds, const BuildOptions& opt = {});

struct CertificateResult {
  enum class Status { feasible_point, cut_found, qc_empty, solver_failure };
  Status status = Status::solver_failure;
  double r_star = 0.0;              // normalized distance
  net::InputVector x_star;          // physical units, all dims
  Eigen::VectorXd x_star_unit;      // normalized, all dims
  socp::SolveStatus solver_status = socp::SolveStatus::numerical;
};

// Euclidean projection of x_hat onto the relaxation's input set, measured in
// normalized coordinates. Throws SolverFailure only for backend errors; solver
// non-convergence is reported through the status.
CertificateResult closest_feasible_qc(const QCModel& model, const net::InputVector& x_hat,
                                      const socp::BackendConfig& backend = {},
                                      double r_eps = 1e-6);

// assignment of every program variable implied by per-contingency power-flow
// solutions (the lifting W_ij = V_i V_j^*)
Eigen::VectorXd lift_solution(const QCModel& model, const net::Network& net,
                              const net::InputSpace& xs, const net::InputVector& x,
                              const std::vector<acpf::PowerFlowSolution>& sols);

// worst constraint violation of an assignment against the model (equalities
// and cone rows; distance rows are centered on the lifted point itself)
double lifted_violation(const QCModel& model, const Eigen::VectorXd& z);

}  // namespace forge::qcrelax
