#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <string>
#include <utility>
#include <vector>

#include "forge/errors.hpp"

namespace forge::socp {

enum class ConeKind { nonnegative, second_order };

struct ConeBlock {
  ConeKind kind = ConeKind::nonnegative;
  int size = 0;
};

// min c'x  s.t.  A x = b,  G x + s = h,  s in K
// K is a product of a leading nonnegative cone and second-order cones
// (t, u) with ||u|| <= t. var bounds, when present, are expanded into
// extra nonnegative rows during canonicalization.
struct ConicProgram {
  int n_vars = 0;
  Eigen::VectorXd objective;
  Eigen::SparseMatrix<double> eq_a;
  Eigen::VectorXd eq_b;
  Eigen::SparseMatrix<double> cone_g;
  Eigen::VectorXd cone_h;
  std::vector<ConeBlock> cones;
  Eigen::VectorXd var_lower;  // empty = no box; -inf entries allowed
  Eigen::VectorXd var_upper;

  void validate() const;  // throws IllFormedProgram

  int cone_rows() const { return static_cast<int>(cone_g.rows()); }
  int eq_rows() const { return static_cast<int>(eq_a.rows()); }
  // first row of the k-th cone block within G
  int cone_start(int block) const;
};

enum class SolveStatus { optimal, primal_infeasible, dual_infeasible, max_iter, numerical };

std::string to_string(SolveStatus s);

struct Residuals {
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::numerical;
  Eigen::VectorXd x_primal;
  Eigen::VectorXd y_dual;   // equality multipliers
  Eigen::VectorXd z_cone;   // cone multipliers (canonical row order)
  Eigen::VectorXd s_slack;  // cone slacks (canonical row order)
  double obj_value = 0.0;
  Residuals residuals;
  int iterations = 0;
};

struct SolveOptions {
  double tol = 1e-7;
  int max_iter = 200;
  bool verbose = false;
};

ConicSolution solve(const ConicProgram& p, const SolveOptions& opt = {});

// Expands var bounds into trailing nonnegative rows; the result has empty
// var_lower/var_upper. Solutions of `solve` are reported in this row order.
ConicProgram canonicalize(const ConicProgram& p);

// Residuals recomputed from the returned iterate, not solver internals.
Residuals compute_residuals(const ConicProgram& p, const ConicSolution& sol);

// Max violation of the Farkas conditions of a primal-infeasibility ray
// (y, z):  A'y + G'z = 0, z in K, b'y + h'z = -1 (ray scaled internally).
double farkas_violation(const ConicProgram& p, const ConicSolution& sol);

// cone membership margin of a vector in canonical row order:
// min over blocks of (s_i for nonneg rows, t - ||u|| for soc blocks)
double cone_margin(const ConicProgram& p, const Eigen::VectorXd& s);

// ---------------------------------------------------------------------------
// builder

class ProgramBuilder {
 public:
  struct Affine {
    std::vector<std::pair<int, double>> terms;
    double constant = 0.0;
  };

  int add_var(double cost = 0.0);
  int add_vars(int k);
  int n_vars() const { return n_; }
  void set_cost(int col, double coef);

  void add_eq(const std::vector<std::pair<int, double>>& terms, double rhs);
  void add_le(const std::vector<std::pair<int, double>>& terms, double rhs);
  void add_ge(const std::vector<std::pair<int, double>>& terms, double rhs);
  void add_box(int col, double lo, double hi);
  // || rows[1..] || <= rows[0]; returns soc block handle
  int add_soc(const std::vector<Affine>& rows);

  int n_inequalities() const { return static_cast<int>(h_lin_.size()); }
  int n_soc_blocks() const { return static_cast<int>(soc_sizes_.size()); }

  ConicProgram build() const;

 private:
  int n_ = 0;
  std::vector<double> cost_;
  std::vector<Eigen::Triplet<double>> a_trip_;
  std::vector<double> b_;
  // linear inequality rows (one nonnegative block)
  std::vector<Eigen::Triplet<double>> g_lin_trip_;
  std::vector<double> h_lin_;
  // soc rows, appended after the nonnegative block
  std::vector<Eigen::Triplet<double>> g_soc_trip_;
  std::vector<double> h_soc_;
  std::vector<int> soc_sizes_;
};

// ---------------------------------------------------------------------------
// backends

struct BackendConfig {
  std::string name = "embedded";  // "embedded" | "external"
  // invoked as: command <problem-file> <solution-file>
  std::string external_command;
  std::string work_dir = ".";
  SolveOptions options;
};

ConicSolution solve_with_backend(const ConicProgram& p, const BackendConfig& cfg);

// plain-text exchange format, see docs/solver_exchange.md
void write_problem_file(const ConicProgram& p, const std::string& path);
ConicProgram read_problem_file(const std::string& path);
void write_solution_file(const ConicSolution& sol, const std::string& path);
ConicSolution read_solution_file(const std::string& path);

}  // namespace forge::socp
