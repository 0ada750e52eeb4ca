#include <doctest.h>

#include <cmath>
#include <map>

#include "forge/acpf.hpp"
#include "forge/netmodel.hpp"
#include "forge/qcrelax.hpp"
#include "forge/rng.hpp"
#include "test_helpers.hpp"

using namespace forge;
using namespace forge::qcrelax;
using forge::net::InputSpace;
using forge::net::InputVector;
using forge::net::Network;

namespace {

// lossless two-bus toy whose relaxed input set in the one free dimension
// (generator P at bus 2) is exactly [0.5, 1]: the slack absorbs between
// -1 and 0 while the bus-2 load fixes total injection at 0.5
struct Toy {
  Network net;
  InputSpace xs;
  int p_dim = -1;
};

Toy make_projection_toy() {
  test::TwoBusSpec s;
  s.r = 0.0;
  s.x = 0.1;
  s.p_load = 0.5;
  s.q_load = 0.0;
  s.slack_p_min = -1.0;
  s.slack_p_max = 0.0;
  s.second_gen = true;
  s.g2_p_min = 0.0;
  s.g2_p_max = 1.0;
  Toy toy;
  toy.net = test::make_two_bus(s);
  InputSpace full = net::build_input_space(toy.net);
  std::vector<int> keep;
  for (int i = 0; i < full.size(); ++i)
    if (full.dims[i].role == net::InputRole::gen_p_excl_slack) keep.push_back(i);
  REQUIRE(keep.size() == 1);
  toy.xs = net::restrict_dims(full, keep, net::reference_point(toy.net, full));
  toy.p_dim = keep[0];
  return toy;
}

net::InputVector case14_secure_point(const Network& n, const InputSpace& xs) {
  net::InputVector x = net::reference_point(n, xs);
  const std::map<int, double> vmap = {{1, 1.06}, {2, 1.04}, {3, 1.00}, {6, 1.02}, {8, 1.04}};
  for (int i = 0; i < xs.size(); ++i) {
    const auto& d = xs.dims[i];
    if (d.role == net::InputRole::gen_v) x[i] = vmap.at(n.buses[d.element].id);
    if (d.role == net::InputRole::gen_p_excl_slack && !d.frozen) x[i] = 0.59;
  }
  return x;
}

}  // namespace

TEST_CASE("two-bus toy has the expected variable counts per block") {
  Toy toy = make_projection_toy();
  QCModel m = build_qc(toy.net, toy.xs, default_bounds(toy.net));
  const auto& vm = m.vars;
  REQUIRE(vm.n_cont == 1);
  int n_wkk = 0, n_wpair = 0, n_l = 0, n_flow = 0;
  for (int k = 0; k < vm.n_bus; ++k)
    if (vm.w_kk[0][k] >= 0) ++n_wkk;
  for (int bi = 0; bi < vm.n_branch; ++bi) {
    if (vm.w_re[0][bi] >= 0 && vm.w_im[0][bi] >= 0) ++n_wpair;
    if (vm.l_cur[0][bi] >= 0) ++n_l;
    for (int col : {vm.p_from[0][bi], vm.q_from[0][bi], vm.p_to[0][bi], vm.q_to[0][bi]})
      if (col >= 0) ++n_flow;
  }
  CHECK(n_wkk == 2);
  CHECK(n_wpair == 1);
  CHECK(n_l == 1);
  CHECK(n_flow == 4);
}

TEST_CASE("projection onto the toy set matches the grid oracle") {
  Toy toy = make_projection_toy();
  QCModel m = build_qc(toy.net, toy.xs, default_bounds(toy.net));

  // oracle: scan the hand-derived set {p : 0.5 - p in [-1, 0]} over the box
  auto member = [](double p) { return 0.5 - p <= 0.0 + 1e-12 && 0.5 - p >= -1.0 - 1e-12; };
  const double hat = 0.2;
  double best = 1e9, best_p = 0.0;
  for (double p = 0.0; p <= 1.0 + 1e-12; p += 1e-4) {
    if (!member(p)) continue;
    if (std::abs(p - hat) < best) {
      best = std::abs(p - hat);
      best_p = p;
    }
  }
  CHECK(best_p == doctest::Approx(0.5).epsilon(1e-3));

  InputVector x_hat = net::reference_point(toy.net, toy.xs);
  x_hat[toy.p_dim] = hat;
  auto res = closest_feasible_qc(m, x_hat);
  REQUIRE(res.status == CertificateResult::Status::cut_found);
  CHECK(res.x_star[toy.p_dim] == doctest::Approx(best_p).epsilon(1e-4));
  CHECK(res.r_star == doctest::Approx(0.3).epsilon(1e-4));

  // a point inside the set projects onto itself
  x_hat[toy.p_dim] = 0.7;
  auto inside = closest_feasible_qc(m, x_hat);
  CHECK(inside.status == CertificateResult::Status::feasible_point);
  CHECK(inside.r_star <= 1e-6);
}

TEST_CASE("unreachable demand is cut on the aggregate capacity face") {
  test::TwoBusSpec s;
  s.r = 0.0;
  s.x = 0.1;
  s.p_load = 0.5;
  s.q_load = 0.0;
  s.slack_p_min = 0.0;
  s.slack_p_max = 1.0;
  Network n = test::make_two_bus(s);
  net::UncertainInjection u;
  u.bus = 1;
  u.p_min = -2.0;
  u.p_max = 0.0;
  n.uncertain.push_back(u);

  InputSpace full = net::build_input_space(n);
  std::vector<int> keep;
  for (int i = 0; i < full.size(); ++i)
    if (full.dims[i].role == net::InputRole::uncertain_p) keep.push_back(i);
  InputSpace xs = net::restrict_dims(full, keep, net::reference_point(n, full));
  QCModel m = build_qc(n, xs, default_bounds(n));

  InputVector x_hat = net::reference_point(n, xs);
  x_hat[keep[0]] = -2.0;  // net demand 2.5 versus 1.0 of capacity
  auto res = closest_feasible_qc(m, x_hat);
  REQUIRE(res.status == CertificateResult::Status::cut_found);
  CHECK(res.x_star[keep[0]] == doctest::Approx(-0.5).epsilon(1e-4));
}

TEST_CASE("angle bounds beyond pi/2 are rejected") {
  Toy toy = make_projection_toy();
  RelaxationBounds rb = default_bounds(toy.net);
  rb.theta_max[0] = 2.0;
  CHECK_THROWS_AS(build_qc(toy.net, toy.xs, rb), BoundDomainError);
}

TEST_CASE("envelope formulas contain the true trigonometric surface") {
  Rng rng(20240711ULL);
  for (int trial = 0; trial < 10000; ++trial) {
    const double vl = 0.9 + 0.05 * rng.uniform();
    const double vu = vl + 0.05 + 0.15 * rng.uniform();
    double tl = -1.5 * rng.uniform();
    double tu = 1.5 * rng.uniform();
    if (trial % 3 == 0) tl = 0.05;          // asymmetric positive window
    if (trial % 5 == 0) tu = -0.02;         // asymmetric negative window
    if (tl > tu) std::swap(tl, tu);
    const double vi = vl + (vu - vl) * rng.uniform();
    const double vj = vl + (vu - vl) * rng.uniform();
    const double th = tl + (tu - tl) * rng.uniform();

    // square envelope
    const double w = vi * vi;
    CHECK(w >= vi * vi - 1e-12);
    CHECK(w <= (vl + vu) * vi - vl * vu + 1e-12);

    // bilinear envelope
    const double prod = vi * vj;
    CHECK(prod >= vl * vj + vl * vi - vl * vl - 1e-12);
    CHECK(prod >= vu * vj + vu * vi - vu * vu - 1e-12);
    CHECK(prod <= vl * vj + vu * vi - vl * vu + 1e-12);
    CHECK(prod <= vu * vj + vl * vi - vu * vl + 1e-12);

    // cosine envelope
    const double tm = std::max(std::abs(tl), std::abs(tu));
    if (tm > 1e-9 && tu - tl > 1e-9) {
      const double kc = (1.0 - std::cos(tm)) / (tm * tm);
      CHECK(std::cos(th) <= 1.0 - kc * th * th + 1e-12);
      const double slope_c = (std::cos(tu) - std::cos(tl)) / (tu - tl);
      CHECK(std::cos(th) >= std::cos(tl) + slope_c * (th - tl) - 1e-12);

      // sine envelope
      const double ch = std::cos(tm / 2.0), sh = std::sin(tm / 2.0);
      CHECK(std::sin(th) <= ch * (th - tm / 2.0) + sh + 1e-12);
      CHECK(std::sin(th) >= ch * (th + tm / 2.0) - sh - 1e-12);
      const double slope_s = (std::sin(tu) - std::sin(tl)) / (tu - tl);
      if (tl >= 0.0) CHECK(std::sin(th) >= std::sin(tl) + slope_s * (th - tl) - 1e-12);
      if (tu <= 0.0) CHECK(std::sin(th) <= std::sin(tl) + slope_s * (th - tl) + 1e-12);
    }
  }
}

TEST_CASE("secure case14 points lift inside the relaxation") {
  Network n = net::parse_case(test::data_path("pglib_opf_case14_ieee.m"));
  InputSpace xs = net::build_input_space(n);
  QCModel m = build_qc(n, xs, default_bounds(n));

  InputVector x = case14_secure_point(n, xs);
  auto res = acpf::classify_two_stage(n, xs, x);
  REQUIRE(res.report.secure);

  std::vector<acpf::PowerFlowSolution> sols;
  for (int c = 0; c < n.contingencies.size(); ++c) sols.push_back(acpf::solve_pf(n, xs, x, c));
  Eigen::VectorXd z = lift_solution(m, n, xs, x, sols);
  CHECK(lifted_violation(m, z) <= 1e-6);

  // the same point is recognized as feasible by the projection
  auto cert = closest_feasible_qc(m, x);
  CHECK(cert.status == CertificateResult::Status::feasible_point);
}

TEST_CASE("case39 builds one block per configured contingency") {
  Network n = net::parse_case(test::data_path("pglib_opf_case39_epri.m"));
  net::set_contingencies(n, {7, 22, 24, 36, 43});
  InputSpace xs = net::build_input_space(n);
  QCModel m = build_qc(n, xs, default_bounds(n));
  CHECK(m.vars.n_cont == 6);
  // outaged branch has no flow variables in its block
  const int outaged = n.contingencies.outages[1];
  CHECK(m.vars.p_from[1][outaged] == -1);
  CHECK(m.vars.p_from[0][outaged] >= 0);
}

TEST_CASE("projection is locally (hence globally) optimal") {
  Network n = net::parse_case(test::data_path("pglib_opf_case14_ieee.m"));
  InputSpace xs = net::build_input_space(n);
  QCModel m = build_qc(n, xs, default_bounds(n));

  // an infeasible probe: all voltages high, gen 2 at zero output
  InputVector x_hat = case14_secure_point(n, xs);
  for (int i = 0; i < xs.size(); ++i)
    if (xs.dims[i].role == net::InputRole::gen_v) x_hat[i] = 1.06;
  auto res = closest_feasible_qc(m, x_hat);
  REQUIRE(res.status == CertificateResult::Status::cut_found);

  Rng rng(5150ULL);
  const Eigen::VectorXd hat_unit = xs.normalize(x_hat);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 20; ++trial) {
    InputVector x_probe = res.x_star;
    for (int i = 0; i < xs.size(); ++i) {
      if (xs.dims[i].frozen) continue;
      x_probe[i] += 1e-4 * rng.normal() * (xs.dims[i].hi - xs.dims[i].lo);
      x_probe[i] = std::clamp(x_probe[i], xs.dims[i].lo, xs.dims[i].hi);
    }
    auto probe = closest_feasible_qc(m, x_probe);
    if (probe.status != CertificateResult::Status::feasible_point) continue;  // left the set
    ++checked;
    const double dist = (xs.normalize(x_probe) - hat_unit).norm();
    CHECK(dist >= res.r_star - 1e-6);
  }
  CHECK(checked >= 5);
}

TEST_CASE("restricting to a feasible point yields zero radius") {
  Network n = net::parse_case(test::data_path("pglib_opf_case14_ieee.m"));
  InputSpace full = net::build_input_space(n);
  InputVector secure = case14_secure_point(n, full);

  std::vector<int> p_dims;
  for (int i = 0; i < full.size(); ++i)
    if (full.dims[i].role == net::InputRole::gen_p_excl_slack && !full.dims[i].frozen)
      p_dims.push_back(i);
  InputSpace xs = net::restrict_dims(full, p_dims, secure);
  QCModel m = build_qc(n, xs, default_bounds(n));
  auto res = closest_feasible_qc(m, secure);
  CHECK(res.status == CertificateResult::Status::feasible_point);
  CHECK(res.r_star <= 1e-6);
}
