#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "forge/netmodel.hpp"
#include "forge/qcrelax.hpp"
#include "forge/rng.hpp"
#include "forge/socp.hpp"

namespace forge::certify {

// A x <= b in normalized free-dimension coordinates. The leading 2d rows are
// the box of the tightened bounds.
struct Polytope {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd interior;  // strictly feasible (Chebyshev center)
  double cheb_radius = 0.0;
  int n_box_rows = 0;

  struct Cut {
    Eigen::VectorXd x_hat;   // probe (normalized free coords)
    Eigen::VectorXd x_star;  // projection
    Eigen::VectorXd normal;  // x_star - x_hat
    int iteration = 0;
  };
  std::vector<Cut> cut_log;

  int dim() const { return static_cast<int>(a.cols()); }
  int rows() const { return static_cast<int>(a.rows()); }
  bool contains(const Eigen::VectorXd& x, double tol = 1e-10) const;
};

Polytope box_polytope(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

// recomputes the Chebyshev center; throws EmptyPolytope when the interior is gone
void recenter(Polytope& p);

// appends the half-space n'(x - x_star) >= 0 with n = x_star - x_hat
Polytope add_cut(const Polytope& p, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& x_star,
                 int iteration = 0);

// drops cut rows that are implied by the remaining rows
void prune_redundant_rows(Polytope& p);

struct HitAndRunOptions {
  int burn_in = -1;  // default 50 * dim
  int thin = -1;     // default dim
};

std::vector<Eigen::VectorXd> hit_and_run(const Polytope& p, int n_samples, std::uint64_t seed,
                                         const HitAndRunOptions& opt = {});

// persistent chain for the certification loop
class HitAndRunChain {
 public:
  HitAndRunChain(const Polytope& p, std::uint64_t seed, const HitAndRunOptions& opt = {});
  void reset(const Polytope& p);  // after cuts: restart at the new center
  Eigen::VectorXd draw();         // advances `thin` steps

 private:
  const Polytope* p_ = nullptr;
  Eigen::VectorXd state_;
  Rng rng_;
  int thin_ = 1;
  void step();
};

struct VolumeOptions {
  double rel_err_target = 0.5;
  std::uint64_t seed = 1234;
  int min_samples_per_phase = 10000;
  int max_samples_per_phase = 200000;
  int rounding_rounds = 1;
};

struct VolumeEstimate {
  double value = 0.0;  // normalized units (unit cube = 1)
  double rel_err_target = 0.0;
  int n_phases = 0;
  long n_samples = 0;
};

VolumeEstimate estimate_volume(const Polytope& p, const VolumeOptions& opt = {});

// ---------------------------------------------------------------------------
// certificate accumulation over the relaxation

struct CertifyOptions {
  int n1 = 1000;
  std::uint64_t seed = 1;
  double r_eps = 1e-6;
  int consecutive_feasible_cap = 200;
  int prune_every = 100;
  bool volume_trace = false;  // estimate after every iteration
  VolumeOptions volume;
  socp::BackendConfig backend;
  double feas_tol = 1e-6;
};

struct CertifyStats {
  int iterations = 0;
  int cuts = 0;
  int feasible_draws = 0;
  bool region_empty = false;      // the whole tightened box is insecure
  std::vector<double> volume_trace;
};

// Iteratively samples the unclassified polytope, projects each probe onto the
// relaxation, and accumulates separating half-spaces from nonzero-distance
// projections. xs must carry the tightened bounds; `bounds` the matching
// voltage/angle bounds.
std::pair<Polytope, CertifyStats> accumulate_certificates(const net::Network& net,
                                                          const net::InputSpace& xs,
                                                          const qcrelax::RelaxationBounds& bounds,
                                                          const CertifyOptions& opt = {});

// ---------------------------------------------------------------------------
// hypersphere baseline

struct SphereSet {
  struct Ball {
    Eigen::VectorXd center;  // normalized free coords
    double radius = 0.0;
  };
  std::vector<Ball> balls;
};

struct SphereStats {
  std::vector<double> volume_trace;  // uncovered volume after each iteration
  int iterations = 0;
};

// rejection-style baseline: uniform draws over the tightened box; infeasible
// draws contribute balls of their projection radius. Volumes by Monte Carlo.
std::pair<SphereSet, SphereStats> hypersphere_baseline(const net::Network& net,
                                                       const net::InputSpace& xs,
                                                       const qcrelax::RelaxationBounds& bounds,
                                                       int n_iter, std::uint64_t seed,
                                                       long mc_samples = 1000000,
                                                       const socp::BackendConfig& backend = {},
                                                       double feas_tol = 1e-6,
                                                       double r_eps = 1e-6);

// uncovered fraction of the box times the box volume (normalized units)
double sphere_uncovered_volume(const SphereSet& spheres, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi, long mc_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// export

void write_polytope(const Polytope& p, const std::string& path);
Polytope read_polytope(const std::string& path);
void write_polytope_meta(const Polytope& p, const CertifyStats& stats, const std::string& path);

}  // namespace forge::certify
