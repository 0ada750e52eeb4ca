#include "forge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "forge/rng.hpp"

namespace forge::pipeline {

namespace {

using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string dim_name(const net::Network& net, const net::InputDim& d) {
  switch (d.role) {
    case net::InputRole::gen_p_excl_slack:
      return "gen_p_" + std::to_string(d.element + 1);
    case net::InputRole::gen_v:
      return "gen_v_" + std::to_string(net.buses[d.element].id);
    case net::InputRole::uncertain_p:
      return "uncertain_p_" + std::to_string(d.element + 1);
  }
  return "dim";
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string role_name(net::InputRole role) {
  switch (role) {
    case net::InputRole::gen_p_excl_slack:
      return "gen_p";
    case net::InputRole::gen_v:
      return "gen_v";
    case net::InputRole::uncertain_p:
      return "uncertain_p";
  }
  return "";
}

std::string stage_suffix(acpf::Stage stage) {
  switch (stage) {
    case acpf::Stage::direct:
      return "direct";
    case acpf::Stage::q_adjusted:
      return "q_adjusted";
    case acpf::Stage::none:
      return "infeasible";
  }
  return "infeasible";
}

std::vector<long long> dedup_key(const Eigen::VectorXd& x_norm) {
  std::vector<long long> key(x_norm.size());
  for (int i = 0; i < x_norm.size(); ++i) key[i] = std::llround(x_norm[i] * 1e9);
  return key;
}

struct KeyHash {
  size_t operator()(const std::vector<long long>& k) const {
    size_t h = 1469598103934665603ULL;
    for (long long v : k) {
      h ^= static_cast<size_t>(v);
      h *= 1099511628211ULL;
    }
    return h;
  }
};

}  // namespace

std::string worst_violation_kind(const std::vector<acpf::Violation>& violations,
                                 acpf::Violation* worst_out) {
  if (violations.empty()) return "";
  const acpf::Violation* worst = &violations.front();
  for (const auto& v : violations)
    if (v.magnitude > worst->magnitude) worst = &v;
  if (worst_out) *worst_out = *worst;
  switch (worst->kind) {
    case acpf::ConstraintKind::v_bound: return "v_bound";
    case acpf::ConstraintKind::gen_p: return "gen_p";
    case acpf::ConstraintKind::gen_q: return "gen_q";
    case acpf::ConstraintKind::flow_from: return "flow_from";
    case acpf::ConstraintKind::flow_to: return "flow_to";
    case acpf::ConstraintKind::angle_diff: return "angle_diff";
    case acpf::ConstraintKind::uncertain_bound: return "uncertain_bound";
  }
  return "";
}

socp::BackendConfig RunConfig::backend() const {
  socp::BackendConfig b;
  b.name = solver_backend;
  b.external_command = external_solver_command;
  b.work_dir = out_dir;
  b.options.tol = solver_tol;
  return b;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.case_path = j.at("case_path").get<std::string>();
    cfg.contingency_rows = j.value("contingencies", std::vector<int>{});
    if (j.contains("uncertain")) {
      for (const auto& u : j["uncertain"]) {
        UncertainSpec spec;
        spec.bus_id = u.at("bus").get<int>();
        if (u.contains("demand_fraction"))
          spec.demand_fraction = u["demand_fraction"].get<double>();
        else {
          spec.p_min_mw = u.at("p_min_mw").get<double>();
          spec.p_max_mw = u.at("p_max_mw").get<double>();
        }
        spec.power_factor = u.value("power_factor", 1.0);
        cfg.uncertain.push_back(spec);
      }
    }
    cfg.n1 = j.value("n1", cfg.n1);
    cfg.n2 = j.value("n2", cfg.n2);
    cfg.n3 = j.value("n3", cfg.n3);
    cfg.s_red = j.value("s_red", cfg.s_red);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.pf_tol = j.value("pf_tol", cfg.pf_tol);
    cfg.feas_tol = j.value("feas_tol", cfg.feas_tol);
    cfg.solver_tol = j.value("solver_tol", cfg.solver_tol);
    cfg.r_eps = j.value("r_eps", cfg.r_eps);
    cfg.nlp_tol = j.value("nlp_tol", cfg.nlp_tol);
    cfg.obbt_max_iters = j.value("obbt_max_iters", cfg.obbt_max_iters);
    cfg.bt_fixpoint_tol = j.value("bt_fixpoint_tol", cfg.bt_fixpoint_tol);
    cfg.volume_rel_err = j.value("volume_rel_err", cfg.volume_rel_err);
    cfg.sphere_mc_samples = j.value("sphere_mc_samples", cfg.sphere_mc_samples);
    cfg.compare_iterations = j.value("compare_iterations", cfg.compare_iterations);
    cfg.x_dims = j.value("x_dims", std::vector<std::string>{});
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.solver_backend = j.value("solver_backend", cfg.solver_backend);
    cfg.external_solver_command = j.value("external_solver_command", std::string{});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  if (cfg.n1 < 0 || cfg.n2 < 0 || cfg.n3 < 0) throw ConfigError("sample counts must be >= 0");
  if (!(cfg.s_red > 0.0 && cfg.s_red <= 1.0)) throw ConfigError("s_red must lie in (0, 1]");
  for (const auto& name : cfg.x_dims)
    if (name != "gen_p" && name != "gen_v" && name != "uncertain_p")
      throw ConfigError("unknown x_dims entry: " + name);
  return cfg;
}

void save_config(const RunConfig& cfg, const std::string& path) {
  json j;
  j["case_path"] = cfg.case_path;
  j["contingencies"] = cfg.contingency_rows;
  json unc = json::array();
  for (const auto& u : cfg.uncertain) {
    json e;
    e["bus"] = u.bus_id;
    if (u.demand_fraction)
      e["demand_fraction"] = *u.demand_fraction;
    else {
      e["p_min_mw"] = u.p_min_mw;
      e["p_max_mw"] = u.p_max_mw;
    }
    e["power_factor"] = u.power_factor;
    unc.push_back(e);
  }
  j["uncertain"] = unc;
  j["n1"] = cfg.n1;
  j["n2"] = cfg.n2;
  j["n3"] = cfg.n3;
  j["s_red"] = cfg.s_red;
  j["seed"] = cfg.seed;
  j["pf_tol"] = cfg.pf_tol;
  j["feas_tol"] = cfg.feas_tol;
  j["solver_tol"] = cfg.solver_tol;
  j["r_eps"] = cfg.r_eps;
  j["nlp_tol"] = cfg.nlp_tol;
  j["obbt_max_iters"] = cfg.obbt_max_iters;
  j["bt_fixpoint_tol"] = cfg.bt_fixpoint_tol;
  j["volume_rel_err"] = cfg.volume_rel_err;
  j["sphere_mc_samples"] = cfg.sphere_mc_samples;
  j["compare_iterations"] = cfg.compare_iterations;
  j["x_dims"] = cfg.x_dims;
  j["out_dir"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  j["solver_backend"] = cfg.solver_backend;
  j["external_solver_command"] = cfg.external_solver_command;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config: " + path);
  os << j.dump(2) << '\n';
}

Problem setup_problem(const RunConfig& cfg) {
  Problem p;
  p.network = net::parse_case(cfg.case_path);
  for (const auto& u : cfg.uncertain) {
    net::UncertainInjection inj;
    inj.bus = p.network.bus_index(u.bus_id);
    if (u.demand_fraction) {
      const double pd = p.network.buses[inj.bus].p_demand;
      inj.p_min = -*u.demand_fraction * pd;
      inj.p_max = *u.demand_fraction * pd;
    } else {
      inj.p_min = u.p_min_mw / p.network.base_mva;
      inj.p_max = u.p_max_mw / p.network.base_mva;
    }
    inj.power_factor = u.power_factor;
    p.network.uncertain.push_back(inj);
  }
  if (!cfg.contingency_rows.empty()) net::set_contingencies(p.network, cfg.contingency_rows);

  p.space = net::build_input_space(p.network);
  if (!cfg.x_dims.empty()) {
    std::vector<int> keep;
    for (int i = 0; i < p.space.size(); ++i)
      for (const auto& name : cfg.x_dims)
        if (role_name(p.space.dims[i].role) == name) keep.push_back(i);
    p.space = net::restrict_dims(p.space, keep, net::reference_point(p.network, p.space));
  }
  return p;
}

// ---------------------------------------------------------------------------
// dataset I/O

std::vector<std::string> column_names(const net::Network& net, const net::InputSpace& xs) {
  std::vector<std::string> names;
  for (const auto& d : xs.dims) names.push_back(dim_name(net, d));
  return names;
}

void export_dataset(const std::vector<DatasetRecord>& records,
                    const std::vector<std::string>& dim_names, const std::string& path) {
  std::ofstream os(path, std::ios::binary);  // binary: LF endings everywhere
  if (!os) throw IoError("cannot write dataset: " + path);
  os << "index";
  for (const auto& n : dim_names) os << ',' << n;
  for (const auto& n : dim_names) os << ",x_phys_" << n;
  os << ",label,stage,violation_kind,violation_contingency,violation_magnitude,seed\n";
  long idx = 0;
  for (const auto& r : records) {
    os << idx++;
    for (int i = 0; i < r.x_normalized.size(); ++i) os << ',' << format_double(r.x_normalized[i]);
    for (int i = 0; i < r.x_physical.size(); ++i) os << ',' << format_double(r.x_physical[i]);
    os << ',' << (r.secure ? 1 : 0) << ',' << r.stage << ',' << r.violation_kind << ','
       << r.violation_contingency << ',' << format_double(r.violation_magnitude) << ','
       << r.seed << '\n';
  }
  if (!os) throw IoError("dataset write failure: " + path);
}

std::vector<DatasetRecord> import_dataset(const std::string& path, int n_dims) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read dataset: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty dataset file: " + path);
  std::vector<DatasetRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const size_t expect = 1 + 2 * n_dims + 6;
    if (cells.size() != expect) throw IoError("dataset row has wrong column count");
    DatasetRecord r;
    r.x_normalized.resize(n_dims);
    r.x_physical.resize(n_dims);
    for (int i = 0; i < n_dims; ++i) r.x_normalized[i] = std::stod(cells[1 + i]);
    for (int i = 0; i < n_dims; ++i) r.x_physical[i] = std::stod(cells[1 + n_dims + i]);
    size_t at = 1 + 2 * n_dims;
    r.secure = cells[at++] == "1";
    r.stage = cells[at++];
    r.violation_kind = cells[at++];
    r.violation_contingency = std::stoi(cells[at++]);
    r.violation_magnitude = std::stod(cells[at++]);
    r.seed = std::stoull(cells[at]);
    out.push_back(std::move(r));
  }
  return out;
}

void save_report(const RunReport& report, const std::string& path) {
  json j;
  j["dims_free"] = report.dims_free;
  j["dims_total"] = report.dims_total;
  j["v_bt"] = report.v_bt;
  j["cuts"] = report.cuts;
  j["v_hp"] = report.v_hp;
  if (std::isfinite(report.metric))
    j["neg_log10_volume_per_dim"] = report.metric;
  else
    j["neg_log10_volume_per_dim"] = nullptr;
  j["boundary_secure_pct"] = report.boundary_secure_pct;
  j["mvn_secure_pct"] = report.mvn_secure_pct;
  j["overall_secure_pct"] = report.overall_secure_pct;
  j["total_records"] = report.total_records;
  j["stage_seconds"] = report.stage_seconds;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write report: " + path);
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// orchestration

RunResult run_all(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  RunResult result;
  auto& report = result.report;

  Problem problem = setup_problem(cfg);
  const net::Network& netw = problem.network;
  report.dims_total = problem.space.size();

  // bound tightening
  auto t0 = std::chrono::steady_clock::now();
  tighten::TightenOptions topt;
  topt.max_iters = cfg.obbt_max_iters;
  topt.fixpoint_tol = cfg.bt_fixpoint_tol;
  topt.feas_tol = cfg.feas_tol;
  topt.threads = cfg.threads;
  topt.backend = cfg.backend();
  result.tightened = tighten::tighten(netw, problem.space, topt);
  const net::InputSpace& xs = result.tightened.space;
  report.dims_free = xs.free_count();
  report.v_bt = result.tightened.v_bt;
  report.stage_seconds["tighten"] = seconds_since(t0);
  save_bounds(result.tightened, netw, cfg.out_dir + "/bounds.json");

  // certificates
  t0 = std::chrono::steady_clock::now();
  certify::CertifyOptions copt;
  copt.n1 = static_cast<int>(cfg.n1);
  copt.seed = derive_seed(cfg.seed, 1);
  copt.r_eps = cfg.r_eps;
  copt.feas_tol = cfg.feas_tol;
  copt.backend = cfg.backend();
  copt.volume.rel_err_target = cfg.volume_rel_err;
  copt.volume.seed = derive_seed(cfg.seed, 2);
  auto [poly, cstats] = certify::accumulate_certificates(netw, xs, result.tightened.bounds, copt);
  result.polytope = poly;
  report.cuts = cstats.cuts;
  report.stage_seconds["certify"] = seconds_since(t0);
  certify::write_polytope(poly, cfg.out_dir + "/polytope.txt");
  certify::write_polytope_meta(poly, cstats, cfg.out_dir + "/polytope_meta.json");

  // volume of the unclassified region
  t0 = std::chrono::steady_clock::now();
  if (cstats.region_empty) {
    report.v_hp = 0.0;
    report.metric = std::numeric_limits<double>::infinity();
  } else {
    certify::VolumeOptions vo;
    vo.rel_err_target = cfg.volume_rel_err;
    vo.seed = derive_seed(cfg.seed, 3);
    report.v_hp = certify::estimate_volume(poly, vo).value;
    report.metric = (report.v_hp > 0.0 && report.dims_free > 0)
                        ? -std::log10(report.v_hp) / report.dims_free
                        : std::numeric_limits<double>::infinity();
  }
  report.stage_seconds["volume"] = seconds_since(t0);

  std::vector<DatasetRecord> records;
  auto to_unit_free = [&](const net::InputVector& x) { return xs.normalize(x); };
  auto push_record = [&](const net::InputVector& x_phys, bool secure, const std::string& stage,
                         const std::vector<acpf::Violation>& violations, std::uint64_t seed) {
    DatasetRecord r;
    r.x_physical = x_phys;
    r.x_normalized = to_unit_free(x_phys);
    r.secure = secure;
    r.stage = stage;
    if (!secure && !violations.empty()) {
      acpf::Violation worst;
      r.violation_kind = worst_violation_kind(violations, &worst);
      r.violation_contingency = worst.contingency;
      r.violation_magnitude = worst.magnitude;
    }
    r.seed = seed;
    records.push_back(std::move(r));
  };

  // boundary stage
  t0 = std::chrono::steady_clock::now();
  boundary::BoundaryResult bres;
  qcrelax::QCModel qc_model;
  if (cfg.n2 > 0 && !cstats.region_empty) {
    qcrelax::BuildOptions bo;
    bo.feas_tol = cfg.feas_tol;
    qc_model = qcrelax::build_qc(netw, xs, result.tightened.bounds, bo);
    boundary::BoundaryOptions bopt;
    bopt.n2 = static_cast<int>(cfg.n2);
    bopt.seed = derive_seed(cfg.seed, 4);
    bopt.threads = cfg.threads;
    bopt.classify.feas_tol = cfg.feas_tol;
    bopt.classify.pf.pf_tol = cfg.pf_tol;
    bopt.projection.feas_tol = cfg.feas_tol;
    bopt.projection.nlp_tol = cfg.nlp_tol;
    bopt.qc_warm_start = &qc_model;
    bres = boundary::identify_boundary(netw, xs, poly, bopt);
    for (const auto& s : bres.samples) {
      if (s.secure_raw) {
        push_record(s.x_final, true, std::string("boundary_") + stage_suffix(s.stage), {},
                    s.seed);
      } else {
        push_record(s.x_raw, false, "boundary_infeasible", s.violations, s.seed);
        if (s.x_projected)
          push_record(*s.x_projected, true, "boundary_projected", {}, s.seed);
      }
    }
  }
  report.boundary_secure_pct = 100.0 * bres.secure_fraction;
  report.stage_seconds["boundary"] = seconds_since(t0);
  const auto names = column_names(netw, xs);
  export_dataset(records, names, cfg.out_dir + "/dataset_boundary.csv");

  // interior sampling
  t0 = std::chrono::steady_clock::now();
  long mvn_secure = 0, mvn_total = 0;
  if (cfg.n3 > 0) {
    std::vector<Eigen::VectorXd> feasible_points;
    const auto free = xs.free_indices();
    for (const auto& r : records) {
      if (!r.secure) continue;
      Eigen::VectorXd y(free.size());
      for (size_t k = 0; k < free.size(); ++k) y[k] = r.x_normalized[free[k]];
      feasible_points.push_back(y);
    }
    if (feasible_points.size() >= 2) {
      secure::MvnModel model = secure::fit_mvn(feasible_points);
      model.s_red = cfg.s_red;
      secure::SecureOptions sopt;
      sopt.n3 = cfg.n3;
      sopt.seed = derive_seed(cfg.seed, 5);
      sopt.threads = cfg.threads;
      sopt.classify.feas_tol = cfg.feas_tol;
      sopt.classify.pf.pf_tol = cfg.pf_tol;
      auto draws = secure::sample_secure(netw, xs, model, sopt);
      for (const auto& s : draws) {
        ++mvn_total;
        if (s.secure) ++mvn_secure;
        std::string stage = s.out_of_box ? "mvn_out_of_box"
                                         : std::string("mvn_") + stage_suffix(s.stage);
        if (!s.secure && !s.out_of_box && s.stage == acpf::Stage::none) stage = "mvn_infeasible";
        push_record(s.x, s.secure, stage, s.violations, s.seed);
      }
    }
  }
  report.mvn_secure_pct = mvn_total ? 100.0 * mvn_secure / mvn_total : 0.0;
  report.stage_seconds["secure"] = seconds_since(t0);

  // dedup preserving first occurrence
  std::unordered_map<std::vector<long long>, int, KeyHash> seen;
  std::vector<DatasetRecord> unique;
  unique.reserve(records.size());
  for (auto& r : records) {
    auto key = dedup_key(r.x_normalized);
    if (seen.emplace(std::move(key), 1).second) unique.push_back(std::move(r));
  }
  result.records = std::move(unique);

  long secure_total = 0;
  for (const auto& r : result.records)
    if (r.secure) ++secure_total;
  report.total_records = static_cast<long>(result.records.size());
  report.overall_secure_pct =
      report.total_records ? 100.0 * secure_total / report.total_records : 0.0;

  export_dataset(result.records, names, cfg.out_dir + "/dataset.csv");
  save_report(report, cfg.out_dir + "/report.json");
  return result;
}

// ---------------------------------------------------------------------------
// certificate comparison study

CompareResult compare_certificates(const RunConfig& cfg, const std::string& trace_csv_path) {
  RunConfig study = cfg;
  study.x_dims.clear();  // restriction handled below with free complements
  Problem problem = setup_problem(study);
  {
    // active-power dims only; voltage set-points stay free in the relaxation
    std::vector<int> keep;
    for (int i = 0; i < problem.space.size(); ++i)
      if (problem.space.dims[i].role == net::InputRole::gen_p_excl_slack) keep.push_back(i);
    problem.space = net::exclude_dims(problem.space, keep);
  }

  tighten::TightenOptions topt;
  topt.max_iters = study.obbt_max_iters;
  topt.fixpoint_tol = study.bt_fixpoint_tol;
  topt.feas_tol = study.feas_tol;
  topt.threads = study.threads;
  topt.backend = study.backend();
  auto tb = tighten::tighten(problem.network, problem.space, topt);

  CompareResult res;
  res.v_bt = tb.v_bt;

  certify::CertifyOptions copt;
  copt.n1 = study.compare_iterations;
  copt.seed = derive_seed(study.seed, 11);
  copt.r_eps = study.r_eps;
  copt.feas_tol = study.feas_tol;
  copt.backend = study.backend();
  copt.volume_trace = true;
  copt.volume.rel_err_target = study.volume_rel_err;
  copt.volume.seed = derive_seed(study.seed, 12);
  copt.consecutive_feasible_cap = study.compare_iterations + 1;  // run all iterations
  auto [poly, cstats] = certify::accumulate_certificates(problem.network, tb.space, tb.bounds, copt);
  res.hyperplane_trace = cstats.volume_trace;
  res.hyperplane_cuts = cstats.cuts;

  auto [spheres, sstats] =
      certify::hypersphere_baseline(problem.network, tb.space, tb.bounds,
                                    study.compare_iterations, derive_seed(study.seed, 13),
                                    study.sphere_mc_samples, study.backend(), study.feas_tol,
                                    study.r_eps);
  res.sphere_trace = sstats.volume_trace;

  std::ofstream os(trace_csv_path, std::ios::binary);
  if (!os) throw IoError("cannot write trace: " + trace_csv_path);
  os << "iteration,hyperplane_volume,hypersphere_volume\n";
  os << 0 << ',' << format_double(res.v_bt) << ',' << format_double(res.v_bt) << '\n';
  const size_t rows = std::max(res.hyperplane_trace.size(), res.sphere_trace.size());
  for (size_t i = 0; i < rows; ++i) {
    const double hp = i < res.hyperplane_trace.size() ? res.hyperplane_trace[i]
                                                      : res.hyperplane_trace.back();
    const double sp = i < res.sphere_trace.size() ? res.sphere_trace[i] : res.sphere_trace.back();
    os << (i + 1) << ',' << format_double(hp) << ',' << format_double(sp) << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// checkpoints

void save_bounds(const tighten::TightenedBounds& tb, const net::Network& netw,
                 const std::string& path) {
  json j;
  j["v_bt"] = tb.v_bt;
  j["iterations_used"] = tb.iterations_used;
  j["v_min"] = std::vector<double>(tb.bounds.v_min.data(), tb.bounds.v_min.data() + netw.n_buses());
  j["v_max"] = std::vector<double>(tb.bounds.v_max.data(), tb.bounds.v_max.data() + netw.n_buses());
  j["theta_min"] = tb.bounds.theta_min;
  j["theta_max"] = tb.bounds.theta_max;
  std::vector<double> bt_lo, bt_hi;
  for (const auto& d : tb.space.dims) {
    bt_lo.push_back(d.bt_lo);
    bt_hi.push_back(d.bt_hi);
  }
  j["x_bt_lo"] = bt_lo;
  j["x_bt_hi"] = bt_hi;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write bounds checkpoint: " + path);
  os << j.dump(2) << '\n';
}

tighten::TightenedBounds load_bounds(const Problem& problem, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing bounds checkpoint: " + path);
  json j;
  is >> j;
  tighten::TightenedBounds tb;
  tb.bounds = qcrelax::default_bounds(problem.network);
  tb.space = problem.space;
  const auto v_min = j.at("v_min").get<std::vector<double>>();
  const auto v_max = j.at("v_max").get<std::vector<double>>();
  for (int k = 0; k < problem.network.n_buses(); ++k) {
    tb.bounds.v_min[k] = v_min.at(k);
    tb.bounds.v_max[k] = v_max.at(k);
  }
  tb.bounds.theta_min = j.at("theta_min").get<std::vector<double>>();
  tb.bounds.theta_max = j.at("theta_max").get<std::vector<double>>();
  const auto bt_lo = j.at("x_bt_lo").get<std::vector<double>>();
  const auto bt_hi = j.at("x_bt_hi").get<std::vector<double>>();
  for (int d = 0; d < tb.space.size(); ++d) {
    tb.space.dims[d].bt_lo = bt_lo.at(d);
    tb.space.dims[d].bt_hi = bt_hi.at(d);
  }
  tb.v_bt = j.value("v_bt", tb.space.tightened_volume_fraction());
  tb.iterations_used = j.value("iterations_used", 0);
  return tb;
}

// ---------------------------------------------------------------------------
// audit

AuditResult audit_dataset(const Problem& problem, const std::vector<DatasetRecord>& records,
                          double fraction, std::uint64_t seed, const RunConfig& cfg) {
  AuditResult res;
  if (records.empty()) return res;
  Rng rng(seed);
  acpf::ClassifyOptions copt;
  copt.feas_tol = cfg.feas_tol;
  copt.pf.pf_tol = cfg.pf_tol;
  const net::InputSpace& xs = problem.space;
  for (size_t i = 0; i < records.size(); ++i) {
    if (rng.uniform() > fraction) continue;
    const auto& r = records[i];
    ++res.checked;
    bool expected_secure = r.secure;
    bool reclassified;
    if (r.stage == "mvn_out_of_box") {
      bool inside = true;
      for (int k = 0; k < xs.size(); ++k) {
        if (xs.dims[k].frozen) continue;
        if (r.x_physical[k] < xs.dims[k].lo - 1e-12 || r.x_physical[k] > xs.dims[k].hi + 1e-12)
          inside = false;
      }
      reclassified = inside;  // out-of-box points must actually be outside
    } else {
      auto cls = acpf::classify_two_stage(problem.network, xs, r.x_physical, copt);
      reclassified = cls.report.secure;
    }
    if (reclassified != expected_secure) ++res.mismatches;
  }
  return res;
}

}  // namespace forge::pipeline
