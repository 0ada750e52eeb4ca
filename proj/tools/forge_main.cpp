#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "forge/boundary.hpp"
#include "forge/certify.hpp"
#include "forge/pipeline.hpp"
#include "forge/rng.hpp"
#include "forge/secure.hpp"
#include "forge/socp.hpp"
#include "forge/tighten.hpp"

using namespace forge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

pipeline::RunConfig load_cfg(const std::string& path, const std::string& out_override,
                             int threads_override, long seed_override) {
  pipeline::RunConfig cfg = pipeline::load_config(path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (threads_override > 0) cfg.threads = threads_override;
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (const char* env = std::getenv("FORGE_SOLVER_BACKEND")) {
    std::string v(env);
    if (v.rfind("external:", 0) == 0) {
      cfg.solver_backend = "external";
      cfg.external_solver_command = v.substr(9);
    } else if (!v.empty()) {
      cfg.solver_backend = v;
    }
  }
  return cfg;
}

tighten::TightenedBounds bounds_for(const pipeline::RunConfig& cfg,
                                    const pipeline::Problem& problem, bool allow_compute) {
  const std::string path = cfg.out_dir + "/bounds.json";
  if (std::filesystem::exists(path)) return pipeline::load_bounds(problem, path);
  if (!allow_compute) throw IoError("run the tighten stage first: missing " + path);
  tighten::TightenOptions topt;
  topt.max_iters = cfg.obbt_max_iters;
  topt.fixpoint_tol = cfg.bt_fixpoint_tol;
  topt.feas_tol = cfg.feas_tol;
  topt.threads = cfg.threads;
  topt.backend = cfg.backend();
  auto tb = tighten::tighten(problem.network, problem.space, topt);
  std::filesystem::create_directories(cfg.out_dir);
  pipeline::save_bounds(tb, problem.network, path);
  return tb;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: security-labeled operating-point dataset builder"};
  app.require_subcommand(1);

  std::string config_path, out_override, dataset_path, polytope_path, problem_path, solution_path;
  int threads_override = 0;
  long seed_override = -1;
  double audit_fraction = 0.01;
  double volume_rel_err = 0.2;

  app.add_option("--config", config_path, "path to the JSON run configuration")
      ->envname("FORGE_CONFIG");
  app.add_option("--out", out_override, "output directory override");
  app.add_option("--threads", threads_override, "parallelism degree override");
  app.add_option("--seed", seed_override, "master seed override");

  auto* validate = app.add_subcommand("validate", "parse the case and report the input space");
  auto* tighten_cmd = app.add_subcommand("tighten", "optimization-based bound tightening");
  auto* certify_cmd = app.add_subcommand("certify", "accumulate infeasibility certificates");
  auto* boundary_cmd = app.add_subcommand("boundary", "security boundary identification");
  auto* secure_cmd = app.add_subcommand("secure", "interior sampling from the fitted normal");
  auto* run_all_cmd = app.add_subcommand("run-all", "full pipeline");
  auto* volume_cmd = app.add_subcommand("volume", "estimate the volume of a polytope file");
  volume_cmd->add_option("--polytope", polytope_path, "polytope file")->required();
  volume_cmd->add_option("--rel-err", volume_rel_err, "relative error target");
  auto* compare_cmd =
      app.add_subcommand("compare-certificates", "hyperplane vs hypersphere volume traces");
  auto* audit_cmd = app.add_subcommand("audit", "re-classify a sample of dataset records");
  audit_cmd->add_option("--dataset", dataset_path, "dataset CSV (defaults to out/dataset.csv)");
  audit_cmd->add_option("--fraction", audit_fraction, "fraction of records to re-check");
  auto* solve_cmd = app.add_subcommand("solve-file", "solve a conic problem file");
  solve_cmd->add_option("problem", problem_path, "problem file")->required();
  solve_cmd->add_option("solution", solution_path, "solution file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve_cmd->parsed()) {
      socp::ConicProgram prog = socp::read_problem_file(problem_path);
      socp::ConicSolution sol = socp::solve(prog);
      socp::write_solution_file(sol, solution_path);
      std::printf("%s obj %.12g iters %d\n", socp::to_string(sol.status).c_str(), sol.obj_value,
                  sol.iterations);
      return kExitOk;
    }
    if (volume_cmd->parsed()) {
      certify::Polytope poly = certify::read_polytope(polytope_path);
      certify::VolumeOptions vo;
      vo.rel_err_target = volume_rel_err;
      auto est = certify::estimate_volume(poly, vo);
      std::printf("volume %.6e (dims %d, phases %d, samples %ld)\n", est.value, poly.dim(),
                  est.n_phases, est.n_samples);
      return kExitOk;
    }

    if (config_path.empty()) {
      std::fprintf(stderr, "error: --config is required for this command\n");
      return kExitConfig;
    }
    pipeline::RunConfig cfg;
    try {
      cfg = load_cfg(config_path, out_override, threads_override, seed_override);
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kExitConfig;
    }
    pipeline::Problem problem = pipeline::setup_problem(cfg);

    if (validate->parsed()) {
      const auto& n = problem.network;
      std::printf("case: %s\n", cfg.case_path.c_str());
      std::printf("buses %d branches %zu generators %zu uncertain %zu contingencies %d\n",
                  n.n_buses(), n.branches.size(), n.generators.size(), n.uncertain.size(),
                  n.contingencies.size());
      std::printf("input dims %d (free %d)\n", problem.space.size(), problem.space.free_count());
      return kExitOk;
    }
    if (tighten_cmd->parsed()) {
      tighten::TightenOptions topt;
      topt.max_iters = cfg.obbt_max_iters;
      topt.fixpoint_tol = cfg.bt_fixpoint_tol;
      topt.feas_tol = cfg.feas_tol;
      topt.threads = cfg.threads;
      topt.backend = cfg.backend();
      auto tb = tighten::tighten(problem.network, problem.space, topt);
      std::filesystem::create_directories(cfg.out_dir);
      pipeline::save_bounds(tb, problem.network, cfg.out_dir + "/bounds.json");
      std::printf("passes %d  volume fraction %.6e  failures %d\n", tb.iterations_used, tb.v_bt,
                  tb.subproblem_failures);
      return kExitOk;
    }
    if (certify_cmd->parsed()) {
      auto tb = bounds_for(cfg, problem, true);
      certify::CertifyOptions copt;
      copt.n1 = static_cast<int>(cfg.n1);
      copt.seed = derive_seed(cfg.seed, 1);
      copt.r_eps = cfg.r_eps;
      copt.feas_tol = cfg.feas_tol;
      copt.backend = cfg.backend();
      auto [poly, stats] =
          certify::accumulate_certificates(problem.network, tb.space, tb.bounds, copt);
      std::filesystem::create_directories(cfg.out_dir);
      certify::write_polytope(poly, cfg.out_dir + "/polytope.txt");
      certify::write_polytope_meta(poly, stats, cfg.out_dir + "/polytope_meta.json");
      std::printf("iterations %d cuts %d feasible draws %d%s\n", stats.iterations, stats.cuts,
                  stats.feasible_draws, stats.region_empty ? " (region empty)" : "");
      return kExitOk;
    }
    if (boundary_cmd->parsed()) {
      auto tb = bounds_for(cfg, problem, false);
      certify::Polytope poly = certify::read_polytope(cfg.out_dir + "/polytope.txt");
      qcrelax::BuildOptions bo;
      bo.feas_tol = cfg.feas_tol;
      auto qc = qcrelax::build_qc(problem.network, tb.space, tb.bounds, bo);
      boundary::BoundaryOptions bopt;
      bopt.n2 = static_cast<int>(cfg.n2);
      bopt.seed = derive_seed(cfg.seed, 4);
      bopt.threads = cfg.threads;
      bopt.classify.feas_tol = cfg.feas_tol;
      bopt.classify.pf.pf_tol = cfg.pf_tol;
      bopt.projection.feas_tol = cfg.feas_tol;
      bopt.projection.nlp_tol = cfg.nlp_tol;
      bopt.qc_warm_start = &qc;
      auto bres = boundary::identify_boundary(problem.network, tb.space, poly, bopt);
      std::vector<pipeline::DatasetRecord> records;
      for (const auto& s : bres.samples) {
        pipeline::DatasetRecord r;
        r.x_physical = s.secure_raw ? s.x_final : s.x_raw;
        r.x_normalized = tb.space.normalize(r.x_physical);
        r.secure = s.secure_raw;
        r.stage = s.secure_raw ? (s.stage == acpf::Stage::direct ? "boundary_direct"
                                                                 : "boundary_q_adjusted")
                               : "boundary_infeasible";
        r.seed = s.seed;
        if (!s.secure_raw) {
          acpf::Violation worst;
          r.violation_kind = pipeline::worst_violation_kind(s.violations, &worst);
          r.violation_contingency = worst.contingency;
          r.violation_magnitude = worst.magnitude;
        }
        records.push_back(r);
        if (s.x_projected) {
          pipeline::DatasetRecord pr;
          pr.x_physical = *s.x_projected;
          pr.x_normalized = tb.space.normalize(pr.x_physical);
          pr.secure = true;
          pr.stage = "boundary_projected";
          pr.seed = s.seed;
          records.push_back(pr);
        }
      }
      const auto names = pipeline::column_names(problem.network, tb.space);
      pipeline::export_dataset(records, names, cfg.out_dir + "/dataset_boundary.csv");
      std::printf("samples %d secure %.1f%% projections %d/%d\n", cfg.n2 > 0 ? (int)cfg.n2 : 0,
                  100.0 * bres.secure_fraction, bres.projections_succeeded,
                  bres.projections_attempted);
      return kExitOk;
    }
    if (secure_cmd->parsed() || run_all_cmd->parsed() || compare_cmd->parsed() ||
        audit_cmd->parsed()) {
      if (compare_cmd->parsed()) {
        std::filesystem::create_directories(cfg.out_dir);
        auto res = pipeline::compare_certificates(cfg, cfg.out_dir + "/certificate_trace.csv");
        std::printf("tightened volume %.6e\n", res.v_bt);
        if (!res.hyperplane_trace.empty() && !res.sphere_trace.empty())
          std::printf("final volumes: hyperplane %.6e  hypersphere %.6e  (cuts %d)\n",
                      res.hyperplane_trace.back(), res.sphere_trace.back(), res.hyperplane_cuts);
        return kExitOk;
      }
      if (audit_cmd->parsed()) {
        const std::string path =
            dataset_path.empty() ? cfg.out_dir + "/dataset.csv" : dataset_path;
        auto records = pipeline::import_dataset(path, problem.space.size());
        auto res = pipeline::audit_dataset(problem, records, audit_fraction,
                                           derive_seed(cfg.seed, 99), cfg);
        std::printf("audited %ld records, %ld mismatches\n", res.checked, res.mismatches);
        return res.mismatches == 0 ? kExitOk : kExitStage;
      }
      if (secure_cmd->parsed()) {
        auto tb = bounds_for(cfg, problem, false);
        auto records = pipeline::import_dataset(cfg.out_dir + "/dataset_boundary.csv",
                                                problem.space.size());
        std::vector<Eigen::VectorXd> feasible;
        const auto free = tb.space.free_indices();
        for (const auto& r : records) {
          if (!r.secure) continue;
          Eigen::VectorXd y(free.size());
          for (size_t k = 0; k < free.size(); ++k) y[k] = r.x_normalized[free[k]];
          feasible.push_back(y);
        }
        auto model = secure::fit_mvn(feasible);
        model.s_red = cfg.s_red;
        secure::SecureOptions sopt;
        sopt.n3 = cfg.n3;
        sopt.seed = derive_seed(cfg.seed, 5);
        sopt.threads = cfg.threads;
        sopt.classify.feas_tol = cfg.feas_tol;
        sopt.classify.pf.pf_tol = cfg.pf_tol;
        auto draws = secure::sample_secure(problem.network, tb.space, model, sopt);
        long secure_count = 0;
        for (const auto& s : draws) {
          pipeline::DatasetRecord r;
          r.x_physical = s.x;
          r.x_normalized = tb.space.normalize(s.x);
          r.secure = s.secure;
          if (s.secure) ++secure_count;
          r.stage = s.out_of_box
                        ? "mvn_out_of_box"
                        : (s.secure ? (s.stage == acpf::Stage::direct ? "mvn_direct"
                                                                      : "mvn_q_adjusted")
                                    : "mvn_infeasible");
          r.seed = s.seed;
          acpf::Violation worst;
          if (!s.secure && !s.violations.empty()) {
            r.violation_kind = pipeline::worst_violation_kind(s.violations, &worst);
            r.violation_contingency = worst.contingency;
            r.violation_magnitude = worst.magnitude;
          }
          records.push_back(r);
        }
        const auto names = pipeline::column_names(problem.network, tb.space);
        pipeline::export_dataset(records, names, cfg.out_dir + "/dataset.csv");
        std::printf("drew %ld, secure %.1f%%, dataset %zu records\n", cfg.n3,
                    draws.empty() ? 0.0 : 100.0 * secure_count / draws.size(), records.size());
        return kExitOk;
      }
      // run-all
      auto res = pipeline::run_all(cfg);
      std::printf("dims %d  v_bt %.3e  cuts %d  v_hp %.3e  metric %.1f%%\n", res.report.dims_free,
                  res.report.v_bt, res.report.cuts, res.report.v_hp, 100.0 * res.report.metric);
      std::printf("boundary secure %.1f%%  interior secure %.1f%%  overall %.1f%%  records %ld\n",
                  res.report.boundary_secure_pct, res.report.mvn_secure_pct,
                  res.report.overall_secure_pct, res.report.total_records);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitStage;
  }
  return kExitOk;
}
