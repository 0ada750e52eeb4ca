// End-to-end acceptance suite. Runs every criterion at its stated tolerance
// and prints one pass/fail line each; the exit code is the failure count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <numbers>
#include <vector>

#include "forge/acpf.hpp"
#include "forge/boundary.hpp"
#include "forge/certify.hpp"
#include "forge/netmodel.hpp"
#include "forge/pipeline.hpp"
#include "forge/qcrelax.hpp"
#include "forge/rng.hpp"
#include "forge/secure.hpp"
#include "forge/socp.hpp"
#include "forge/tighten.hpp"

using namespace forge;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %-28s %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string data_path(const char* name) {
  return std::string(FORGE_SOURCE_DIR) + "/data/pglib/" + name;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct CaseStudy {
  std::string name;
  net::Network network;
  tighten::TightenedBounds tb;
  certify::Polytope poly;
  certify::CertifyStats stats;
  double v_hp = 0.0;
};

CaseStudy run_case(const char* file, int n1, int threads, std::uint64_t seed) {
  CaseStudy cs;
  cs.name = file;
  cs.network = net::parse_case(data_path(file));
  net::InputSpace xs = net::build_input_space(cs.network);
  tighten::TightenOptions topt;
  topt.threads = threads;
  cs.tb = tighten::tighten(cs.network, xs, topt);

  certify::CertifyOptions copt;
  copt.n1 = n1;
  copt.seed = derive_seed(seed, 1);
  auto out = certify::accumulate_certificates(cs.network, cs.tb.space, cs.tb.bounds, copt);
  cs.poly = out.first;
  cs.stats = out.second;

  certify::VolumeOptions vo;
  vo.seed = derive_seed(seed, 2);
  vo.rel_err_target = 0.25;
  cs.v_hp = cs.stats.region_empty ? 0.0 : certify::estimate_volume(cs.poly, vo).value;
  return cs;
}

// Points strictly on the infeasible side of a cut, inside the physical box.
// Soundness means no such point is feasible with its set-points as drawn:
// the classifier must either report insecure or secure the point only after
// moving voltage set-points (the adjusted point then lies off the cut side).
struct SoundnessCount {
  int made = 0;
  int insecure = 0;
  int secured_by_adjustment = 0;
  int direct_secure = 0;       // would disprove the certificate
  int qc_checked = 0;
  int qc_infeasible = 0;
};

SoundnessCount sample_behind_cuts(const CaseStudy& cs, int n_points, std::uint64_t seed,
                                  int qc_subsample) {
  SoundnessCount out;
  const auto& xs = cs.tb.space;
  const auto free = xs.free_indices();
  const int d = static_cast<int>(free.size());
  Rng rng(seed);
  acpf::ClassifyOptions copt;
  qcrelax::QCModel qc = qcrelax::build_qc(cs.network, cs.tb.space, cs.tb.bounds);

  const auto& cuts = cs.poly.cut_log;
  if (cuts.empty()) return out;
  while (out.made < n_points) {
    const auto& cut = cuts[static_cast<size_t>(rng.uniform() * cuts.size()) % cuts.size()];
    Eigen::VectorXd n_hat = cut.normal / cut.normal.norm();
    // random point on the plane through x_star, then offset behind the cut
    Eigen::VectorXd y;
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      Eigen::VectorXd v(d);
      for (int k = 0; k < d; ++k) v[k] = rng.normal();
      v -= v.dot(n_hat) * n_hat;
      if (v.norm() < 1e-12) continue;
      v /= v.norm();
      const double span = 0.5 * rng.uniform();
      y = cut.x_star + span * v - 1e-3 * n_hat;
      ok = true;
      for (int k = 0; k < d; ++k)
        if (y[k] < 0.0 || y[k] > 1.0) ok = false;
    }
    if (!ok) {
      y = cut.x_star - 1e-3 * n_hat;
      bool in_box = true;
      for (int k = 0; k < d; ++k)
        if (y[k] < 0.0 || y[k] > 1.0) in_box = false;
      if (!in_box) continue;
    }
    ++out.made;
    Eigen::VectorXd unit = Eigen::VectorXd::Constant(xs.size(), 0.5);
    for (int k = 0; k < d; ++k) unit[free[k]] = y[k];
    const net::InputVector x = xs.denormalize(unit);
    auto res = acpf::classify_two_stage(cs.network, xs, x, copt);
    if (!res.report.secure) {
      ++out.insecure;
    } else if (res.report.stage == acpf::Stage::q_adjusted && res.adjusted_x &&
               ((*res.adjusted_x) - x).cwiseAbs().maxCoeff() > 1e-12) {
      ++out.secured_by_adjustment;
    } else {
      ++out.direct_secure;
    }
    if (out.qc_checked < qc_subsample) {
      ++out.qc_checked;
      auto cert = qcrelax::closest_feasible_qc(qc, x);
      if (cert.status == qcrelax::CertificateResult::Status::cut_found ||
          cert.status == qcrelax::CertificateResult::Status::qc_empty)
        ++out.qc_infeasible;
    }
  }
  return out;
}

bool within_factor(double value, double target, double factor) {
  return value >= target / factor && value <= target * factor;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 4;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) threads = std::atoi(argv[i + 1]);

  std::filesystem::create_directories("acceptance_out");

  // shared studies
  auto t_all = Clock::now();
  CaseStudy case3 = run_case("pglib_opf_case3_lmbd.m", 1000, threads, 101);
  CaseStudy case5 = run_case("pglib_opf_case5_pjm.m", 1000, threads, 102);
  CaseStudy case14 = run_case("pglib_opf_case14_ieee.m", 1000, threads, 103);
  CaseStudy case30 = run_case("pglib_opf_case30_ieee.m", 1000, threads, 104);
  std::printf("-- case studies finished in %.1f s\n", elapsed(t_all));

  // 1. certificate soundness: nothing behind a hyperplane is feasible as
  // drawn (a point that classifies secure only after its voltage set-points
  // were adjusted was infeasible as specified)
  {
    auto t0 = Clock::now();
    bool pass = true;
    std::string detail;
    for (const CaseStudy* cs : {&case3, &case5, &case14}) {
      auto cnt = sample_behind_cuts(*cs, 10000, 4242, 200);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s %d insec + %d adj of %d (direct-secure %d, qc %d/%d)  ",
                    cs->name.substr(10, 6).c_str(), cnt.insecure, cnt.secured_by_adjustment,
                    cnt.made, cnt.direct_secure, cnt.qc_infeasible, cnt.qc_checked);
      detail += buf;
      if (cnt.made < 10000 || cnt.direct_secure != 0 ||
          cnt.insecure + cnt.secured_by_adjustment != cnt.made ||
          cnt.qc_infeasible != cnt.qc_checked)
        pass = false;
    }
    detail += "(" + std::to_string(static_cast<int>(elapsed(t0))) + " s)";
    report(1, "certificate soundness", pass, detail);
  }

  // 5 + 2 + 9 need a full case14 run
  pipeline::RunConfig cfg14;
  cfg14.case_path = data_path("pglib_opf_case14_ieee.m");
  cfg14.n1 = 1000;
  cfg14.n2 = 1000;
  cfg14.n3 = 10000;
  cfg14.seed = 2025;
  cfg14.threads = threads;
  cfg14.out_dir = "acceptance_out/case14";
  auto t14 = Clock::now();
  pipeline::RunResult run14 = pipeline::run_all(cfg14);
  const double run14_s = elapsed(t14);

  // 2. relaxation containment over every secure-labeled point of the run
  {
    auto t0 = Clock::now();
    qcrelax::QCModel model =
        qcrelax::build_qc(run14.tightened.space.size() ? case14.network : case14.network,
                          run14.tightened.space, run14.tightened.bounds);
    long checked = 0, violations = 0;
    double worst = 0.0;
    for (const auto& rec : run14.records) {
      if (!rec.secure) continue;
      std::vector<acpf::PowerFlowSolution> sols;
      bool converged = true;
      for (int c = 0; c < case14.network.contingencies.size(); ++c) {
        sols.push_back(acpf::solve_pf(case14.network, run14.tightened.space, rec.x_physical, c));
        converged = converged && sols.back().converged;
      }
      if (!converged) {
        ++violations;
        continue;
      }
      Eigen::VectorXd z =
          qcrelax::lift_solution(model, case14.network, run14.tightened.space, rec.x_physical, sols);
      const double v = qcrelax::lifted_violation(model, z);
      worst = std::max(worst, v);
      ++checked;
      if (v > 1e-6) ++violations;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%ld secure points, %ld violations, worst %.2e (%d s)",
                  checked, violations, worst, static_cast<int>(elapsed(t0)));
    report(2, "relaxation containment", checked > 0 && violations == 0, buf);
  }

  // 3. certificate comparison study at desk scale
  {
    auto t0 = Clock::now();
    pipeline::RunConfig cfg39;
    cfg39.case_path = data_path("pglib_opf_case39_epri.m");
    cfg39.seed = 39;
    cfg39.threads = threads;
    cfg39.compare_iterations = 50;
    cfg39.out_dir = "acceptance_out/case39";
    std::filesystem::create_directories(cfg39.out_dir);
    auto res = pipeline::compare_certificates(cfg39, cfg39.out_dir + "/certificate_trace.csv");
    const double hp = res.hyperplane_trace.empty() ? res.v_bt : res.hyperplane_trace.back();
    const double sp = res.sphere_trace.empty() ? res.v_bt : res.sphere_trace.back();
    const bool hp_ok = within_factor(hp, 2.25e-5, 10.0);
    const bool sp_ok = within_factor(sp, 9.17e-2, 3.0);
    const bool sep_ok = hp <= sp / 1000.0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "hyperplane %.2e (band %s), sphere %.2e (band %s), ratio %.0fx (%s) (%d s)", hp,
                  hp_ok ? "ok" : "OUT", sp, sp_ok ? "ok" : "OUT", sp / hp,
                  sep_ok ? "ok" : "OUT", static_cast<int>(elapsed(t0)));
    report(3, "comparison study bands", hp_ok && sp_ok && sep_ok, buf);
  }

  // 4. published volumes and metrics at n1 = 1000
  {
    struct Row {
      const CaseStudy* cs;
      double v_ref, metric_ref;
    };
    const std::vector<Row> rows = {{&case3, 3.3e-2, 0.370},
                                   {&case5, 6.9e-3, 0.309},
                                   {&case14, 6.9e-4, 0.527},
                                   {&case30, 8.8e-6, 0.722}};
    bool pass = true;
    std::string detail;
    for (const auto& row : rows) {
      const int dims = row.cs->tb.space.free_count();
      const double metric = (row.cs->v_hp > 0) ? -std::log10(row.cs->v_hp) / dims : 10.0;
      const bool v_ok = within_factor(row.cs->v_hp, row.v_ref, 10.0);
      const bool m_ok = std::abs(metric - row.metric_ref) <= 0.15;
      if (!v_ok || !m_ok) pass = false;
      char buf[120];
      std::snprintf(buf, sizeof(buf), "%s v %.1e%s m %.0f%%%s  ", row.cs->name.substr(10, 6).c_str(),
                    row.cs->v_hp, v_ok ? "" : "(OUT)", 100.0 * metric, m_ok ? "" : "(OUT)");
      detail += buf;
    }
    report(4, "published volume bands", pass, detail);
  }

  // 5. balanced dataset at desk scale
  {
    const double pct = run14.report.overall_secure_pct;
    const bool size_ok = run14.report.total_records >= cfg14.n2 + cfg14.n3;
    const bool pct_ok = pct >= 40.0 && pct <= 75.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "secure %.1f%% records %ld (>= %ld) (%d s)", pct,
                  run14.report.total_records, cfg14.n2 + cfg14.n3, static_cast<int>(run14_s));
    report(5, "dataset balance", size_ok && pct_ok, buf);
  }

  // 6. volume estimator calibration
  {
    auto t0 = Clock::now();
    bool pass = true;
    std::string detail;
    for (int d : {5, 10, 20}) {
      certify::Polytope cube =
          certify::box_polytope(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d));
      certify::VolumeOptions vo;
      vo.seed = 600 + d;
      vo.rel_err_target = 0.06;
      const double v = certify::estimate_volume(cube, vo).value;
      if (!within_factor(v, 1.0, 1.10)) pass = false;
      detail += "cube" + std::to_string(d) + " " + std::to_string(v).substr(0, 5) + "  ";
    }
    {
      const int d = 5;
      certify::Polytope simplex;
      simplex.a = Eigen::MatrixXd::Zero(d + 1, d);
      simplex.b = Eigen::VectorXd::Zero(d + 1);
      for (int k = 0; k < d; ++k) simplex.a(k, k) = -1.0;
      simplex.a.row(d).setOnes();
      simplex.b[d] = 1.0;
      certify::recenter(simplex);
      certify::VolumeOptions vo;
      vo.seed = 606;
      vo.rel_err_target = 0.10;
      const double v = certify::estimate_volume(simplex, vo).value;
      if (!within_factor(v, 1.0 / 120.0, 2.0)) pass = false;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "simplex %.2e  ", v);
      detail += buf;
    }
    {
      certify::Polytope cut =
          certify::box_polytope(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4));
      Eigen::VectorXd hat = Eigen::VectorXd::Constant(4, 0.5), star = hat;
      hat[0] = 0.1;
      star[0] = 0.3;  // axis cut x0 >= 0.3: volume 0.7
      cut = certify::add_cut(cut, hat, star);
      certify::VolumeOptions vo;
      vo.seed = 608;
      vo.rel_err_target = 0.06;
      const double v = certify::estimate_volume(cut, vo).value;
      if (!within_factor(v, 0.7, 1.10)) pass = false;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "axis-cut %.3f (%d s)", v, static_cast<int>(elapsed(t0)));
      detail += buf;
    }
    report(6, "volume calibration", pass, detail);
  }

  // 7. sampler uniformity
  {
    const int d = 10;
    certify::Polytope box =
        certify::box_polytope(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d));
    auto samples = certify::hit_and_run(box, 10000, 777);
    bool membership = true;
    for (const auto& s : samples)
      if (!box.contains(s, 1e-10)) membership = false;
    double worst_chi2 = 0.0;
    for (int axis = 0; axis < d; ++axis) {
      int bins[10] = {0};
      for (const auto& s : samples) ++bins[std::min(9, static_cast<int>(s[axis] * 10.0))];
      double chi2 = 0.0;
      for (int b = 0; b < 10; ++b)
        chi2 += (bins[b] - 1000.0) * (bins[b] - 1000.0) / 1000.0;
      worst_chi2 = std::max(worst_chi2, chi2);
    }
    // chi-squared critical value at p = 0.001 with 9 dof
    const bool pass = membership && worst_chi2 < 27.877;
    char buf[120];
    std::snprintf(buf, sizeof(buf), "membership %s, worst chi2 %.1f (< 27.877)",
                  membership ? "ok" : "VIOLATED", worst_chi2);
    report(7, "hit-and-run uniformity", pass, buf);
  }

  // 8. conic solver correctness
  {
    bool pass = true;
    std::string detail;
    {
      socp::ProgramBuilder b;
      int x = b.add_var(1.0);
      b.add_ge({{x, 1.0}}, 1.0);
      auto s = socp::solve(b.build());
      if (s.status != socp::SolveStatus::optimal || std::abs(s.obj_value - 1.0) > 1e-7)
        pass = false;
    }
    {
      socp::ProgramBuilder b;
      int t = b.add_var(1.0);
      b.add_soc({{{{t, 1.0}}, 0.0}, {{}, 3.0}, {{}, 4.0}});
      auto s = socp::solve(b.build());
      if (s.status != socp::SolveStatus::optimal || std::abs(s.obj_value - 5.0) > 1e-7)
        pass = false;
    }
    detail += "analytic ok  ";
    Rng rng(888);
    int solved = 0;
    double worst_rel = 0.0;
    for (int k = 0; k < 50; ++k) {
      // constructed-optimum instance (kkt pair built directly)
      const int n = 4 + static_cast<int>(rng.uniform() * 8);
      const int p = 1 + static_cast<int>(rng.uniform() * 3);
      const int l = 3 + static_cast<int>(rng.uniform() * 5);
      Eigen::VectorXd xs(n);
      for (int i = 0; i < n; ++i) xs[i] = rng.normal();
      int soc = 2 + static_cast<int>(rng.uniform() * 3);
      const int m = l + soc;
      Eigen::MatrixXd g(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
      Eigen::VectorXd s_star(m), z_star(m);
      for (int i = 0; i < l; ++i) {
        if (rng.uniform() < 0.5) {
          s_star[i] = 0.5 + rng.uniform();
          z_star[i] = 0.0;
        } else {
          s_star[i] = 0.0;
          z_star[i] = 0.5 + rng.uniform();
        }
      }
      Eigen::VectorXd u(soc - 1);
      for (int i = 0; i < soc - 1; ++i) u[i] = rng.normal();
      if (u.norm() < 1e-3) u[0] = 1.0;
      const double mu = 0.5 + rng.uniform();
      s_star[l] = u.norm();
      s_star.segment(l + 1, soc - 1) = u;
      z_star[l] = mu * u.norm();
      z_star.segment(l + 1, soc - 1) = -mu * u;
      Eigen::MatrixXd a(p, n);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
      Eigen::VectorXd y_star(p);
      for (int i = 0; i < p; ++i) y_star[i] = rng.normal();
      socp::ConicProgram prog;
      prog.n_vars = n;
      prog.objective = -(a.transpose() * y_star + g.transpose() * z_star);
      prog.eq_a = a.sparseView();
      prog.eq_b = a * xs;
      prog.cone_g = g.sparseView();
      prog.cone_h = g * xs + s_star;
      prog.cones = {{socp::ConeKind::nonnegative, l}, {socp::ConeKind::second_order, soc}};
      const double opt = prog.objective.dot(xs);
      auto sol = socp::solve(prog);
      if (sol.status == socp::SolveStatus::optimal) {
        const double rel = std::abs(sol.obj_value - opt) / std::max(1.0, std::abs(opt));
        worst_rel = std::max(worst_rel, rel);
        if (rel <= 1e-6) ++solved;
      }
    }
    if (solved != 50) pass = false;
    char buf[100];
    std::snprintf(buf, sizeof(buf), "random %d/50 worst rel %.1e  ", solved, worst_rel);
    detail += buf;
    {
      socp::ProgramBuilder b;
      int x = b.add_var(1.0);
      b.add_ge({{x, 1.0}}, 1.0);
      b.add_le({{x, 1.0}}, 0.0);
      auto s = socp::solve(b.build());
      const double fv = socp::farkas_violation(b.build(), s);
      if (s.status != socp::SolveStatus::primal_infeasible || fv > 1e-6) pass = false;
      char fb[64];
      std::snprintf(fb, sizeof(fb), "farkas %.1e", fv);
      detail += fb;
    }
    report(8, "conic solver correctness", pass, detail);
  }

  // 9. projection chain on case14 boundary samples
  {
    auto t0 = Clock::now();
    qcrelax::QCModel qc = qcrelax::build_qc(case14.network, case14.tb.space, case14.tb.bounds);
    boundary::BoundaryOptions bopt;
    bopt.n2 = 100;
    bopt.seed = 909;
    bopt.threads = threads;
    bopt.qc_warm_start = &qc;
    auto bres = boundary::identify_boundary(case14.network, case14.tb.space, case14.poly, bopt);
    int projections = 0, chain_ok = 0, revalidated = 0;
    for (const auto& s : bres.samples) {
      if (!s.x_projected) continue;
      ++projections;
      auto cert = qcrelax::closest_feasible_qc(qc, s.x_raw);
      if (s.r_projection >= cert.r_star - 1e-6) ++chain_ok;
      auto check = acpf::classify_two_stage(case14.network, case14.tb.space, *s.x_projected);
      if (check.report.secure) ++revalidated;
    }
    const bool pass =
        projections > 0 && chain_ok == projections && revalidated == projections;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%d projections, lower bound ok %d, re-validated %d (%d s)", projections,
                  chain_ok, revalidated, static_cast<int>(elapsed(t0)));
    report(9, "projection chain", pass, buf);
  }

  // 10. byte-identical datasets across parallelism degrees
  {
    auto t0 = Clock::now();
    pipeline::RunConfig cfg5;
    cfg5.case_path = data_path("pglib_opf_case5_pjm.m");
    cfg5.n1 = 200;
    cfg5.n2 = 150;
    cfg5.n3 = 400;
    cfg5.seed = 555;
    cfg5.threads = 1;
    cfg5.out_dir = "acceptance_out/case5_a";
    pipeline::run_all(cfg5);
    cfg5.threads = threads > 1 ? threads : 2;
    cfg5.out_dir = "acceptance_out/case5_b";
    pipeline::run_all(cfg5);
    auto slurp = [](const std::string& p) {
      std::ifstream is(p, std::ios::binary);
      std::stringstream ss;
      ss << is.rdbuf();
      return ss.str();
    };
    const std::string a = slurp("acceptance_out/case5_a/dataset.csv");
    const std::string b = slurp("acceptance_out/case5_b/dataset.csv");
    const bool pass = !a.empty() && a == b;
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%zu bytes, %s (%d s)", a.size(),
                  pass ? "identical" : "DIFFER", static_cast<int>(elapsed(t0)));
    report(10, "determinism", pass, buf);
  }

  std::printf("-- acceptance finished in %.1f s, %d failure(s)\n", elapsed(t_all), g_failures);
  return g_failures;
}
