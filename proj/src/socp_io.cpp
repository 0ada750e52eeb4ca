#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "forge/socp.hpp"

namespace forge::socp {

namespace {

void put_sparse(std::ostream& os, const Eigen::SparseMatrix<double>& mat) {
  for (int k = 0; k < mat.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(mat, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

void put_vec(std::ostream& os, const Eigen::VectorXd& v) {
  int nnz = 0;
  for (int i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) ++nnz;
  os << nnz << '\n';
  for (int i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) os << i << ' ' << v[i] << '\n';
}

std::string expect_tag(std::istream& is, const char* tag) {
  std::string t;
  if (!(is >> t) || t != tag) throw IoError(std::string("expected section ") + tag);
  return t;
}

}  // namespace

void write_problem_file(const ConicProgram& p_in, const std::string& path) {
  ConicProgram p = canonicalize(p_in);  // fold var bounds into cone rows
  std::ofstream os(path);
  if (!os) throw IoError("cannot write problem file: " + path);
  os.precision(17);
  os << "FORGE-SOCP 1\n";
  os << "VARS " << p.n_vars << '\n';
  os << "OBJ ";
  put_vec(os, p.objective);
  os << "AEQ " << p.eq_rows() << ' ' << p.eq_a.nonZeros() << '\n';
  put_sparse(os, p.eq_a);
  os << "BEQ ";
  put_vec(os, p.eq_b);
  os << "GCONE " << p.cone_rows() << ' ' << p.cone_g.nonZeros() << '\n';
  put_sparse(os, p.cone_g);
  os << "HCONE ";
  put_vec(os, p.cone_h);
  os << "CONES " << p.cones.size() << '\n';
  for (const auto& c : p.cones)
    os << (c.kind == ConeKind::nonnegative ? 'N' : 'Q') << ' ' << c.size << '\n';
  os << "BOUNDS 0\n";
  os << "END\n";
  if (!os) throw IoError("write failure: " + path);
}

ConicProgram read_problem_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read problem file: " + path);
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "FORGE-SOCP" || version != 1) throw IoError("bad problem file header");

  ConicProgram p;
  expect_tag(is, "VARS");
  is >> p.n_vars;

  auto read_vec = [&](int len) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(len);
    int nnz = 0;
    is >> nnz;
    for (int k = 0; k < nnz; ++k) {
      int i;
      double val;
      is >> i >> val;
      v[i] = val;
    }
    return v;
  };
  auto read_sparse = [&](int rows, int cols, int nnz) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(nnz);
    for (int k = 0; k < nnz; ++k) {
      int r, c;
      double val;
      is >> r >> c >> val;
      t.emplace_back(r, c, val);
    }
    Eigen::SparseMatrix<double> m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  };

  expect_tag(is, "OBJ");
  p.objective = read_vec(p.n_vars);
  expect_tag(is, "AEQ");
  int prows = 0, pnnz = 0;
  is >> prows >> pnnz;
  p.eq_a = read_sparse(prows, p.n_vars, pnnz);
  expect_tag(is, "BEQ");
  p.eq_b = read_vec(prows);
  expect_tag(is, "GCONE");
  int mrows = 0, mnnz = 0;
  is >> mrows >> mnnz;
  p.cone_g = read_sparse(mrows, p.n_vars, mnnz);
  expect_tag(is, "HCONE");
  p.cone_h = read_vec(mrows);
  expect_tag(is, "CONES");
  int ncones = 0;
  is >> ncones;
  for (int k = 0; k < ncones; ++k) {
    char kind;
    int size;
    is >> kind >> size;
    p.cones.push_back({kind == 'N' ? ConeKind::nonnegative : ConeKind::second_order, size});
  }
  expect_tag(is, "BOUNDS");
  int nb = 0;
  is >> nb;
  if (nb > 0) {
    p.var_lower = Eigen::VectorXd::Constant(p.n_vars, -std::numeric_limits<double>::infinity());
    p.var_upper = Eigen::VectorXd::Constant(p.n_vars, std::numeric_limits<double>::infinity());
    for (int k = 0; k < nb; ++k) {
      int i;
      std::string lo, hi;
      is >> i >> lo >> hi;
      if (lo != "-inf") p.var_lower[i] = std::stod(lo);
      if (hi != "inf") p.var_upper[i] = std::stod(hi);
    }
  }
  expect_tag(is, "END");
  if (!is) throw IoError("truncated problem file: " + path);
  p.validate();
  return p;
}

void write_solution_file(const ConicSolution& sol, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write solution file: " + path);
  os.precision(17);
  os << "FORGE-SOL 1\n";
  os << "STATUS " << to_string(sol.status) << '\n';
  os << "OBJ " << sol.obj_value << '\n';
  os << "ITER " << sol.iterations << '\n';
  auto dump = [&](const char* tag, const Eigen::VectorXd& v) {
    os << tag << ' ' << v.size() << '\n';
    for (int i = 0; i < v.size(); ++i) os << v[i] << '\n';
  };
  dump("X", sol.x_primal);
  dump("Y", sol.y_dual);
  dump("Z", sol.z_cone);
  dump("S", sol.s_slack);
  os << "END\n";
}

ConicSolution read_solution_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read solution file: " + path);
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "FORGE-SOL" || version != 1) throw IoError("bad solution file header");
  ConicSolution sol;
  std::string status;
  expect_tag(is, "STATUS");
  is >> status;
  if (status == "optimal")
    sol.status = SolveStatus::optimal;
  else if (status == "primal_infeasible")
    sol.status = SolveStatus::primal_infeasible;
  else if (status == "dual_infeasible")
    sol.status = SolveStatus::dual_infeasible;
  else if (status == "max_iter")
    sol.status = SolveStatus::max_iter;
  else
    sol.status = SolveStatus::numerical;
  expect_tag(is, "OBJ");
  is >> sol.obj_value;
  expect_tag(is, "ITER");
  is >> sol.iterations;
  auto load = [&](const char* tag) {
    expect_tag(is, tag);
    int len;
    is >> len;
    Eigen::VectorXd v(len);
    for (int i = 0; i < len; ++i) is >> v[i];
    return v;
  };
  sol.x_primal = load("X");
  sol.y_dual = load("Y");
  sol.z_cone = load("Z");
  sol.s_slack = load("S");
  expect_tag(is, "END");
  if (!is) throw IoError("truncated solution file: " + path);
  return sol;
}

ConicSolution solve_with_backend(const ConicProgram& p, const BackendConfig& cfg) {
  if (cfg.name == "embedded" || cfg.name.empty()) return solve(p, cfg.options);
  if (cfg.name != "external")
    throw BackendUnavailable("unknown solver backend: " + cfg.name);
  if (cfg.external_command.empty())
    throw BackendUnavailable("external backend selected but no command configured");

  static std::atomic<long> counter{0};
  const long id = counter++;
  std::ostringstream base;
  base << cfg.work_dir << "/forge_xchg_" << id;
  const std::string prob = base.str() + ".prob";
  const std::string solf = base.str() + ".sol";
  write_problem_file(p, prob);
  const std::string cmd = cfg.external_command + " " + prob + " " + solf;
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw BackendUnavailable("external solver failed (rc=" + std::to_string(rc) + ")");
  ConicSolution sol = read_solution_file(solf);
  std::remove(prob.c_str());
  std::remove(solf.c_str());
  if (sol.status == SolveStatus::optimal) sol.residuals = compute_residuals(p, sol);
  return sol;
}

}  // namespace forge::socp
