#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/acpf.hpp"
#include "forge/boundary.hpp"
#include "forge/certify.hpp"
#include "forge/netmodel.hpp"
#include "forge/secure.hpp"
#include "forge/socp.hpp"
#include "forge/tighten.hpp"

namespace forge::pipeline {

struct UncertainSpec {
  int bus_id = 0;
  // either explicit bounds in MW, or a +-fraction of the nominal bus demand
  double p_min_mw = 0.0, p_max_mw = 0.0;
  std::optional<double> demand_fraction;
  double power_factor = 1.0;
};

struct RunConfig {
  std::string case_path;
  std::vector<int> contingency_rows;  // 1-based branch rows
  std::vector<UncertainSpec> uncertain;
  long n1 = 1000;
  long n2 = 10000;
  long n3 = 100000;
  double s_red = 0.25;
  std::uint64_t seed = 1;

  double pf_tol = 1e-8;
  double feas_tol = 1e-6;
  double solver_tol = 1e-7;
  double r_eps = 1e-6;
  double nlp_tol = 1e-6;
  int obbt_max_iters = 3;
  double bt_fixpoint_tol = 1e-4;
  double volume_rel_err = 0.5;
  long sphere_mc_samples = 1000000;
  int compare_iterations = 50;

  // roles kept free; empty = all ("gen_p", "gen_v", "uncertain_p")
  std::vector<std::string> x_dims;

  std::string out_dir = "out";
  int threads = 1;
  std::string solver_backend = "embedded";
  std::string external_solver_command;

  socp::BackendConfig backend() const;
};

RunConfig load_config(const std::string& path);  // throws ConfigError
void save_config(const RunConfig& cfg, const std::string& path);

// the problem context shared by every stage
struct Problem {
  net::Network network;
  net::InputSpace space;
};
Problem setup_problem(const RunConfig& cfg);

struct DatasetRecord {
  Eigen::VectorXd x_normalized;  // all dims
  net::InputVector x_physical;
  bool secure = false;
  std::string stage;
  std::string violation_kind;  // worst violation when insecure
  int violation_contingency = -1;
  double violation_magnitude = 0.0;
  std::uint64_t seed = 0;
};

struct RunReport {
  int dims_free = 0;
  int dims_total = 0;
  double v_bt = 1.0;
  int cuts = 0;
  double v_hp = 1.0;
  double metric = 0.0;  // -log10(v_hp) / dims_free
  double boundary_secure_pct = 0.0;
  double mvn_secure_pct = 0.0;
  double overall_secure_pct = 0.0;
  long total_records = 0;
  std::map<std::string, double> stage_seconds;
};

void save_report(const RunReport& report, const std::string& path);

struct RunResult {
  std::vector<DatasetRecord> records;
  RunReport report;
  certify::Polytope polytope;
  tighten::TightenedBounds tightened;
};

RunResult run_all(const RunConfig& cfg);

// checkpoint helpers for staged runs
void save_bounds(const tighten::TightenedBounds& tb, const net::Network& net,
                 const std::string& path);
tighten::TightenedBounds load_bounds(const Problem& problem, const std::string& path);

// dataset file i/o (CSV schema documented in docs/formats.md)
std::vector<std::string> column_names(const net::Network& net, const net::InputSpace& xs);
void export_dataset(const std::vector<DatasetRecord>& records,
                    const std::vector<std::string>& dim_names, const std::string& path);
std::vector<DatasetRecord> import_dataset(const std::string& path, int n_dims);

// certificate comparison study: writes an iteration/volume trace CSV; the
// input space is restricted to the active-power dims
struct CompareResult {
  std::vector<double> hyperplane_trace;
  std::vector<double> sphere_trace;
  double v_bt = 1.0;
  int hyperplane_cuts = 0;
};
CompareResult compare_certificates(const RunConfig& cfg, const std::string& trace_csv_path);

// re-classifies a random fraction of records; returns the number of labels
// that disagree (0 expected)
struct AuditResult {
  long checked = 0;
  long mismatches = 0;
};
AuditResult audit_dataset(const Problem& problem, const std::vector<DatasetRecord>& records,
                          double fraction, std::uint64_t seed, const RunConfig& cfg);

std::string worst_violation_kind(const std::vector<acpf::Violation>& violations,
                                 acpf::Violation* worst_out = nullptr);

}  // namespace forge::pipeline
