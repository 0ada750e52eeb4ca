#include "forge/certify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

namespace forge::certify {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double unit_ball_log_volume(int d) {
  return 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
}

}  // namespace

bool Polytope::contains(const Eigen::VectorXd& x, double tol) const {
  if (rows() == 0) return true;
  return ((a * x - b).array() <= tol).all();
}

Polytope box_polytope(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const int d = static_cast<int>(lo.size());
  Polytope p;
  p.a = Eigen::MatrixXd::Zero(2 * d, d);
  p.b = Eigen::VectorXd::Zero(2 * d);
  for (int k = 0; k < d; ++k) {
    p.a(k, k) = 1.0;
    p.b[k] = hi[k];
    p.a(d + k, k) = -1.0;
    p.b[d + k] = -lo[k];
  }
  p.n_box_rows = 2 * d;
  recenter(p);
  return p;
}

void recenter(Polytope& p) {
  const int d = p.dim();
  const int m = p.rows();
  if (d == 0) {
    p.interior.resize(0);
    p.cheb_radius = 0.0;
    return;
  }
  socp::ProgramBuilder b;
  const int c0 = b.add_vars(d);
  const int r = b.add_var(-1.0);  // maximize radius
  for (int i = 0; i < m; ++i) {
    std::vector<std::pair<int, double>> terms;
    const double an = p.a.row(i).norm();
    for (int k = 0; k < d; ++k)
      if (p.a(i, k) != 0.0) terms.push_back({c0 + k, p.a(i, k)});
    terms.push_back({r, an});
    b.add_le(terms, p.b[i]);
  }
  b.add_ge({{r, 1.0}}, 0.0);
  // keep the center column bounded for robustness
  for (int k = 0; k < d; ++k) b.add_box(c0 + k, -10.0, 10.0);

  auto sol = socp::solve(b.build());
  if (sol.status != socp::SolveStatus::optimal)
    throw EmptyPolytope("chebyshev center solve failed: " + socp::to_string(sol.status));
  p.cheb_radius = sol.x_primal[r];
  p.interior = sol.x_primal.head(d);
  if (p.cheb_radius <= 1e-6) throw EmptyPolytope("polytope has no interior");
}

Polytope add_cut(const Polytope& p, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& x_star,
                 int iteration) {
  Polytope q = p;
  Eigen::VectorXd n = x_star - x_hat;
  const int m = p.rows();
  q.a.conservativeResize(m + 1, p.dim());
  q.b.conservativeResize(m + 1);
  q.a.row(m) = -n.transpose();
  q.b[m] = -n.dot(x_star);
  Polytope::Cut cut;
  cut.x_hat = x_hat;
  cut.x_star = x_star;
  cut.normal = n;
  cut.iteration = iteration;
  q.cut_log.push_back(std::move(cut));
  recenter(q);  // throws EmptyPolytope when the interior vanishes
  return q;
}

void prune_redundant_rows(Polytope& p) {
  const int d = p.dim();
  std::vector<int> keep;
  for (int i = 0; i < p.rows(); ++i) {
    if (i < p.n_box_rows) {
      keep.push_back(i);
      continue;
    }
    // maximize a_i x subject to all other rows
    socp::ProgramBuilder b;
    const int x0 = b.add_vars(d);
    for (int k = 0; k < d; ++k) b.set_cost(x0 + k, -p.a(i, k));
    for (int j = 0; j < p.rows(); ++j) {
      if (j == i) continue;
      std::vector<std::pair<int, double>> terms;
      for (int k = 0; k < d; ++k)
        if (p.a(j, k) != 0.0) terms.push_back({x0 + k, p.a(j, k)});
      b.add_le(terms, p.b[j]);
    }
    auto sol = socp::solve(b.build());
    const double mx = (sol.status == socp::SolveStatus::optimal) ? -sol.obj_value : kInf;
    if (mx > p.b[i] + 1e-9) keep.push_back(i);  // row still binds somewhere
  }
  if (static_cast<int>(keep.size()) == p.rows()) return;
  Eigen::MatrixXd a(keep.size(), d);
  Eigen::VectorXd b2(keep.size());
  for (size_t r = 0; r < keep.size(); ++r) {
    a.row(r) = p.a.row(keep[r]);
    b2[r] = p.b[keep[r]];
  }
  p.a = std::move(a);
  p.b = std::move(b2);
}

// ---------------------------------------------------------------------------
// hit and run

namespace {

// chord of {t : a (x + t u) <= b}; returns false when empty
bool row_chord(const Polytope& p, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double& t_lo,
               double& t_hi) {
  t_lo = -kInf;
  t_hi = kInf;
  const Eigen::VectorXd ax = p.a * x;
  const Eigen::VectorXd au = p.a * u;
  for (int i = 0; i < p.rows(); ++i) {
    const double slack = p.b[i] - ax[i];
    if (au[i] > 1e-14) {
      t_hi = std::min(t_hi, slack / au[i]);
    } else if (au[i] < -1e-14) {
      t_lo = std::max(t_lo, slack / au[i]);
    } else if (slack < -1e-12) {
      return false;
    }
  }
  return t_lo <= t_hi && std::isfinite(t_lo) && std::isfinite(t_hi);
}

Eigen::VectorXd random_direction(int d, Rng& rng) {
  Eigen::VectorXd u(d);
  double n2 = 0.0;
  do {
    for (int k = 0; k < d; ++k) u[k] = rng.normal();
    n2 = u.norm();
  } while (n2 < 1e-12);
  return u / n2;
}

}  // namespace

HitAndRunChain::HitAndRunChain(const Polytope& p, std::uint64_t seed, const HitAndRunOptions& opt)
    : p_(&p), state_(p.interior), rng_(seed) {
  const int d = p.dim();
  thin_ = (opt.thin > 0) ? opt.thin : std::max(1, d);
  const int burn = (opt.burn_in >= 0) ? opt.burn_in : 50 * d;
  if (p.cheb_radius <= 0.0) throw DegeneratePolytope("chain started on a degenerate polytope");
  for (int i = 0; i < burn; ++i) step();
}

void HitAndRunChain::reset(const Polytope& p) {
  p_ = &p;
  state_ = p.interior;
  const int burn = 50 * p.dim();
  for (int i = 0; i < burn; ++i) step();
}

void HitAndRunChain::step() {
  const int d = p_->dim();
  if (d == 0) return;
  for (int attempt = 0; attempt < 16; ++attempt) {
    const Eigen::VectorXd u = random_direction(d, rng_);
    double t_lo, t_hi;
    if (!row_chord(*p_, state_, u, t_lo, t_hi)) continue;
    const double span = t_hi - t_lo;
    if (span <= 1e-14) continue;
    const double eps = 1e-12 * std::max(1.0, span);
    const double t = t_lo + eps + (span - 2 * eps) * rng_.uniform();
    state_ += t * u;
    return;
  }
  // direction sampling kept failing; stay put rather than leave the polytope
}

Eigen::VectorXd HitAndRunChain::draw() {
  for (int i = 0; i < thin_; ++i) step();
  return state_;
}

std::vector<Eigen::VectorXd> hit_and_run(const Polytope& p, int n_samples, std::uint64_t seed,
                                         const HitAndRunOptions& opt) {
  if (p.cheb_radius <= 0.0) throw DegeneratePolytope("polytope has no interior to sample");
  HitAndRunChain chain(p, seed, opt);
  std::vector<Eigen::VectorXd> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) out.push_back(chain.draw());
  return out;
}

// ---------------------------------------------------------------------------
// volume

namespace {

// hit-and-run step inside polytope-intersect-ball around `center`;
// `ax` caches p.a * x and is kept in sync
void step_in_ball(const Polytope& p, const Eigen::VectorXd& center, double radius,
                  Eigen::VectorXd& x, Eigen::VectorXd& ax, Rng& rng) {
  const int d = p.dim();
  for (int attempt = 0; attempt < 16; ++attempt) {
    const Eigen::VectorXd u = random_direction(d, rng);
    const Eigen::VectorXd au = p.a * u;
    double t_lo = -kInf, t_hi = kInf;
    bool ok = true;
    for (int i = 0; i < p.rows(); ++i) {
      const double slack = p.b[i] - ax[i];
      if (au[i] > 1e-14) {
        t_hi = std::min(t_hi, slack / au[i]);
      } else if (au[i] < -1e-14) {
        t_lo = std::max(t_lo, slack / au[i]);
      } else if (slack < -1e-12) {
        ok = false;
        break;
      }
    }
    if (!ok || t_lo > t_hi) continue;
    // clip by the sphere |x + t u - c| = r
    const Eigen::VectorXd w = x - center;
    const double bq = w.dot(u);
    const double cq = w.squaredNorm() - radius * radius;
    const double disc = bq * bq - cq;
    if (disc <= 0.0) continue;
    const double sq = std::sqrt(disc);
    t_lo = std::max(t_lo, -bq - sq);
    t_hi = std::min(t_hi, -bq + sq);
    const double span = t_hi - t_lo;
    if (span <= 1e-14) continue;
    const double t = t_lo + span * rng.uniform();
    x += t * u;
    ax += t * au;
    return;
  }
}

}  // namespace

VolumeEstimate estimate_volume(const Polytope& p_in, const VolumeOptions& opt) {
  VolumeEstimate est;
  est.rel_err_target = opt.rel_err_target;
  const int d = p_in.dim();
  if (d == 0) {
    est.value = 1.0;
    return est;
  }
  if (p_in.cheb_radius <= 0.0) throw DegeneratePolytope("volume of a degenerate polytope");

  Rng rng(derive_seed(opt.seed, 0x766f6cULL));

  // rounding: map through the sample covariance so elongated bodies mix well
  Polytope p = p_in;
  double log_det = 0.0;
  for (int round = 0; round < opt.rounding_rounds; ++round) {
    const int n_round = std::max(2000, 40 * d);
    auto samples = hit_and_run(p, n_round, derive_seed(opt.seed, 0xb0b0ULL + round));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : samples) {
      const Eigen::VectorXd w = s - mean;
      cov += w * w.transpose();
    }
    cov /= static_cast<double>(samples.size() - 1);
    cov += 1e-12 * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) break;
    Eigen::MatrixXd l = llt.matrixL();
    // x = mean + L y  =>  rows become (a L) y <= b - a mean
    p.b -= p.a * mean;
    p.a = p.a * l;
    for (int k = 0; k < d; ++k) log_det += std::log(l(k, k));
    recenter(p);
  }

  // enclosing radius from per-axis extremes
  Eigen::VectorXd lo(d), hi(d);
  for (int k = 0; k < d; ++k) {
    socp::ProgramBuilder b;
    const int x0 = b.add_vars(d);
    for (int i = 0; i < p.rows(); ++i) {
      std::vector<std::pair<int, double>> terms;
      for (int j = 0; j < d; ++j)
        if (p.a(i, j) != 0.0) terms.push_back({x0 + j, p.a(i, j)});
      b.add_le(terms, p.b[i]);
    }
    socp::ConicProgram prog = b.build();
    prog.objective.setZero();
    prog.objective[x0 + k] = 1.0;
    auto s_lo = socp::solve(prog);
    prog.objective[x0 + k] = -1.0;
    auto s_hi = socp::solve(prog);
    if (s_lo.status != socp::SolveStatus::optimal || s_hi.status != socp::SolveStatus::optimal)
      throw DegeneratePolytope("axis extent solve failed during volume estimation");
    lo[k] = s_lo.obj_value;
    hi[k] = -s_hi.obj_value;
  }
  const Eigen::VectorXd& c = p.interior;
  double r_enclose = 0.0;
  for (int k = 0; k < d; ++k) {
    const double w = std::max(std::abs(hi[k] - c[k]), std::abs(c[k] - lo[k]));
    r_enclose += w * w;
  }
  r_enclose = std::sqrt(r_enclose) * (1.0 + 1e-9);
  const double r0 = p.cheb_radius * 0.95;

  // phase radii in geometric progression ratio 2^(1/d)
  std::vector<double> radii{r0};
  while (radii.back() < r_enclose)
    radii.push_back(std::min(r_enclose, radii.back() * std::pow(2.0, 1.0 / d)));
  const int m = static_cast<int>(radii.size()) - 1;
  est.n_phases = m;

  long n_per_phase = opt.min_samples_per_phase;
  if (m > 0) {
    const double needed = std::pow(1.42 * std::sqrt(static_cast<double>(m)) / opt.rel_err_target, 2.0);
    n_per_phase = std::clamp<long>(static_cast<long>(needed),
                                   opt.min_samples_per_phase, opt.max_samples_per_phase);
  }

  double log_vol = unit_ball_log_volume(d) + d * std::log(r0) + log_det;
  Eigen::VectorXd x = c;
  Eigen::VectorXd ax = p.a * x;
  for (int i = m; i >= 1; --i) {
    // sample K_i = P cap B(c, radii[i]); count the fraction inside B(c, radii[i-1])
    long inside = 0;
    const int thin = std::max(1, d);
    for (long s = 0; s < n_per_phase; ++s) {
      for (int t = 0; t < thin; ++t) step_in_ball(p, c, radii[i], x, ax, rng);
      if ((x - c).norm() <= radii[i - 1]) ++inside;
    }
    est.n_samples += n_per_phase;
    const double phi = std::max(1e-12, static_cast<double>(inside) / n_per_phase);
    log_vol += std::log(1.0 / phi);
    // continue the chain from a point valid for the next (smaller) ball
    if ((x - c).norm() > radii[i - 1]) {
      x = c;
      ax = p.a * x;
    }
  }
  est.value = std::exp(log_vol);
  return est;
}

// ---------------------------------------------------------------------------
// certificate accumulation

namespace {

Eigen::VectorXd free_components(const net::InputSpace& xs, const Eigen::VectorXd& full_unit) {
  const auto free = xs.free_indices();
  Eigen::VectorXd out(free.size());
  for (size_t k = 0; k < free.size(); ++k) out[k] = full_unit[free[k]];
  return out;
}

net::InputVector physical_from_free(const net::InputSpace& xs, const Eigen::VectorXd& free_unit) {
  Eigen::VectorXd full_unit = Eigen::VectorXd::Constant(xs.size(), 0.5);
  const auto free = xs.free_indices();
  for (size_t k = 0; k < free.size(); ++k) full_unit[free[k]] = free_unit[k];
  return xs.denormalize(full_unit);
}

}  // namespace

std::pair<Polytope, CertifyStats> accumulate_certificates(const net::Network& net,
                                                          const net::InputSpace& xs,
                                                          const qcrelax::RelaxationBounds& bounds,
                                                          const CertifyOptions& opt) {
  qcrelax::BuildOptions bo;
  bo.feas_tol = opt.feas_tol;
  qcrelax::QCModel model = qcrelax::build_qc(net, xs, bounds, bo);

  Polytope poly = box_polytope(xs.bt_lo_normalized(), xs.bt_hi_normalized());
  CertifyStats stats;

  HitAndRunChain chain(poly, derive_seed(opt.seed, 0xa1ULL));
  int consecutive_feasible = 0;
  int cuts_since_prune = 0;

  for (int k = 0; k < opt.n1; ++k) {
    stats.iterations = k + 1;
    const Eigen::VectorXd probe_free = chain.draw();
    const net::InputVector x_hat = physical_from_free(xs, probe_free);

    auto cert = qcrelax::closest_feasible_qc(model, x_hat, opt.backend, opt.r_eps);
    switch (cert.status) {
      case qcrelax::CertificateResult::Status::cut_found: {
        const Eigen::VectorXd star_free = free_components(xs, cert.x_star_unit);
        try {
          poly = add_cut(poly, probe_free, star_free, k);
        } catch (const EmptyPolytope&) {
          stats.region_empty = true;
          break;
        }
        ++stats.cuts;
        ++cuts_since_prune;
        consecutive_feasible = 0;
        if (opt.prune_every > 0 && cuts_since_prune >= opt.prune_every) {
          prune_redundant_rows(poly);
          recenter(poly);
          cuts_since_prune = 0;
        }
        chain.reset(poly);
        break;
      }
      case qcrelax::CertificateResult::Status::feasible_point:
        ++stats.feasible_draws;
        ++consecutive_feasible;
        break;
      case qcrelax::CertificateResult::Status::qc_empty:
        stats.region_empty = true;
        break;
      case qcrelax::CertificateResult::Status::solver_failure:
        // skip the probe; the polytope stays valid
        break;
    }
    if (stats.region_empty) break;
    if (opt.volume_trace) {
      VolumeOptions vo = opt.volume;
      vo.seed = derive_seed(opt.seed, 0x7601ULL + k);
      stats.volume_trace.push_back(stats.region_empty ? 0.0 : estimate_volume(poly, vo).value);
    }
    if (consecutive_feasible >= opt.consecutive_feasible_cap) break;
  }
  return {poly, stats};
}

// ---------------------------------------------------------------------------
// hypersphere baseline

std::pair<SphereSet, SphereStats> hypersphere_baseline(const net::Network& net,
                                                       const net::InputSpace& xs,
                                                       const qcrelax::RelaxationBounds& bounds,
                                                       int n_iter, std::uint64_t seed,
                                                       long mc_samples,
                                                       const socp::BackendConfig& backend,
                                                       double feas_tol, double r_eps) {
  qcrelax::BuildOptions bo;
  bo.feas_tol = feas_tol;
  qcrelax::QCModel model = qcrelax::build_qc(net, xs, bounds, bo);

  const Eigen::VectorXd lo = xs.bt_lo_normalized();
  const Eigen::VectorXd hi = xs.bt_hi_normalized();
  const int d = static_cast<int>(lo.size());
  double box_vol = 1.0;
  for (int k = 0; k < d; ++k) box_vol *= (hi[k] - lo[k]);

  // one fixed Monte Carlo panel, covered flags updated incrementally
  Rng mc(derive_seed(seed, 0x5bULL));
  Eigen::MatrixXd panel(mc_samples, d);
  for (long s = 0; s < mc_samples; ++s)
    for (int k = 0; k < d; ++k) panel(s, k) = lo[k] + (hi[k] - lo[k]) * mc.uniform();
  std::vector<char> covered(mc_samples, 0);
  long n_covered = 0;

  SphereSet set;
  SphereStats stats;
  Rng draw(derive_seed(seed, 0xd7ULL));
  for (int it = 0; it < n_iter; ++it) {
    stats.iterations = it + 1;
    Eigen::VectorXd x_free(d);
    for (int k = 0; k < d; ++k) x_free[k] = lo[k] + (hi[k] - lo[k]) * draw.uniform();
    const net::InputVector x_hat = physical_from_free(xs, x_free);
    auto cert = qcrelax::closest_feasible_qc(model, x_hat, backend, r_eps);
    if (cert.status == qcrelax::CertificateResult::Status::cut_found) {
      SphereSet::Ball ball;
      ball.center = x_free;
      ball.radius = cert.r_star;
      set.balls.push_back(ball);
      const double r2 = ball.radius * ball.radius;
      for (long s = 0; s < mc_samples; ++s) {
        if (covered[s]) continue;
        if ((panel.row(s).transpose() - ball.center).squaredNorm() <= r2) {
          covered[s] = 1;
          ++n_covered;
        }
      }
    } else if (cert.status == qcrelax::CertificateResult::Status::qc_empty) {
      stats.volume_trace.push_back(0.0);
      break;
    }
    const double uncovered = 1.0 - static_cast<double>(n_covered) / mc_samples;
    stats.volume_trace.push_back(box_vol * uncovered);
  }
  return {set, stats};
}

double sphere_uncovered_volume(const SphereSet& spheres, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi, long mc_samples, std::uint64_t seed) {
  const int d = static_cast<int>(lo.size());
  double box_vol = 1.0;
  for (int k = 0; k < d; ++k) box_vol *= (hi[k] - lo[k]);
  Rng rng(seed);
  long uncovered = 0;
  Eigen::VectorXd x(d);
  for (long s = 0; s < mc_samples; ++s) {
    for (int k = 0; k < d; ++k) x[k] = lo[k] + (hi[k] - lo[k]) * rng.uniform();
    bool inside = false;
    for (const auto& ball : spheres.balls)
      if ((x - ball.center).squaredNorm() <= ball.radius * ball.radius) {
        inside = true;
        break;
      }
    if (!inside) ++uncovered;
  }
  return box_vol * static_cast<double>(uncovered) / mc_samples;
}

// ---------------------------------------------------------------------------
// export

void write_polytope(const Polytope& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write polytope file: " + path);
  os.precision(17);
  os << p.rows() << ' ' << p.dim() << ' ' << p.n_box_rows << '\n';
  for (int i = 0; i < p.rows(); ++i) {
    for (int k = 0; k < p.dim(); ++k) os << p.a(i, k) << ' ';
    os << "<= " << p.b[i] << '\n';
  }
}

Polytope read_polytope(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read polytope file: " + path);
  int rows = 0, d = 0, box_rows = 0;
  is >> rows >> d >> box_rows;
  Polytope p;
  p.a = Eigen::MatrixXd::Zero(rows, d);
  p.b = Eigen::VectorXd::Zero(rows);
  p.n_box_rows = box_rows;
  std::string le;
  for (int i = 0; i < rows; ++i) {
    for (int k = 0; k < d; ++k) is >> p.a(i, k);
    is >> le >> p.b[i];
    if (le != "<=") throw IoError("bad polytope row in " + path);
  }
  if (!is) throw IoError("truncated polytope file: " + path);
  recenter(p);
  return p;
}

void write_polytope_meta(const Polytope& p, const CertifyStats& stats, const std::string& path) {
  nlohmann::json j;
  j["rows"] = p.rows();
  j["dim"] = p.dim();
  j["box_rows"] = p.n_box_rows;
  j["chebyshev_radius"] = p.cheb_radius;
  j["iterations"] = stats.iterations;
  j["cuts"] = stats.cuts;
  j["feasible_draws"] = stats.feasible_draws;
  j["region_empty"] = stats.region_empty;
  j["volume_trace"] = stats.volume_trace;
  nlohmann::json cuts = nlohmann::json::array();
  for (const auto& cut : p.cut_log) {
    nlohmann::json c;
    c["iteration"] = cut.iteration;
    c["x_hat"] = std::vector<double>(cut.x_hat.data(), cut.x_hat.data() + cut.x_hat.size());
    c["x_star"] = std::vector<double>(cut.x_star.data(), cut.x_star.data() + cut.x_star.size());
    cuts.push_back(c);
  }
  j["cut_log"] = cuts;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write polytope metadata: " + path);
  os << j.dump(2) << '\n';
}

}  // namespace forge::certify
