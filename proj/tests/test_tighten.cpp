#include <doctest.h>

#include <cmath>

#include "forge/acpf.hpp"
#include "forge/netmodel.hpp"
#include "forge/tighten.hpp"
#include "test_helpers.hpp"

using namespace forge;
using forge::tighten::TightenOptions;
using forge::tighten::obbt_pass;
using forge::net::InputSpace;
using forge::net::InputVector;
using forge::net::Network;

namespace {

// lossless two-bus toy with a binding thermal limit: generation at bus 2
// must cross the 0.8 pu line to serve the bus-1 load
struct LimitToy {
  Network net;
  InputSpace xs;
  int p_dim = -1;
};

LimitToy make_limit_toy() {
  test::TwoBusSpec s;
  s.r = 0.0;
  s.x = 0.1;
  s.p_load = 0.0;
  s.q_load = 0.0;
  s.slack_p_min = -2.0;
  s.slack_p_max = 2.0;
  s.rate = 0.8;
  s.second_gen = true;
  s.g2_p_min = 0.0;
  s.g2_p_max = 2.0;
  LimitToy toy;
  toy.net = test::make_two_bus(s);
  InputSpace full = net::build_input_space(toy.net);
  std::vector<int> keep;
  for (int i = 0; i < full.size(); ++i)
    if (full.dims[i].role == net::InputRole::gen_p_excl_slack) keep.push_back(i);
  toy.xs = net::restrict_dims(full, keep, net::reference_point(toy.net, full));
  toy.p_dim = keep[0];
  return toy;
}

}  // namespace

TEST_CASE("thermal limit caps the reachable dispatch") {
  LimitToy toy = make_limit_toy();

  // grid oracle over the toy set: every dispatch wholly flows over the line,
  // so |p| <= rate is the exact reachability condition
  double reachable_max = 0.0;
  for (double p = 0.0; p <= 2.0 + 1e-12; p += 1e-3)
    if (p <= 0.8) reachable_max = p;
  CHECK(reachable_max == doctest::Approx(0.8).epsilon(2e-3));

  TightenOptions opt;
  opt.max_iters = 1;
  auto tb = tighten::tighten(toy.net, toy.xs, opt);
  CHECK(tb.space.dims[toy.p_dim].bt_hi <= 0.8 + 1e-3);
  CHECK(tb.space.dims[toy.p_dim].bt_hi >= reachable_max - 1e-3);
  CHECK(tb.v_bt <= 0.5);  // box [0,2] shrank to about [0, 0.8]
}

TEST_CASE("a pass after the fixed point changes nothing") {
  LimitToy toy = make_limit_toy();
  TightenOptions opt;
  opt.max_iters = 4;
  auto tb = tighten::tighten(toy.net, toy.xs, opt);
  auto again = obbt_pass(toy.net, tb.space, tb.bounds, opt);
  for (int d = 0; d < tb.space.size(); ++d) {
    CHECK(std::abs(again.space.dims[d].bt_lo - tb.space.dims[d].bt_lo) <= 2e-4);
    CHECK(std::abs(again.space.dims[d].bt_hi - tb.space.dims[d].bt_hi) <= 2e-4);
  }
}

TEST_CASE("impossible demand proves the whole box insecure") {
  test::TwoBusSpec s;
  s.r = 0.0;
  s.x = 0.1;
  s.p_load = 2.5;
  s.q_load = 0.0;
  s.slack_p_min = 0.0;
  s.slack_p_max = 1.0;
  Network n = test::make_two_bus(s);
  InputSpace xs = net::build_input_space(n);
  CHECK_THROWS_AS(tighten::tighten(n, xs), EmptyFeasibleSet);
}

TEST_CASE("bounds are nested and the volume fraction shrinks monotonically") {
  Network n = net::parse_case(test::data_path("pglib_opf_case3_lmbd.m"));
  InputSpace xs = net::build_input_space(n);

  TightenOptions opt;
  opt.max_iters = 1;
  auto pass1 = tighten::tighten(n, xs, opt);
  auto pass2 = obbt_pass(n, pass1.space, pass1.bounds, opt);

  CHECK(pass1.v_bt <= 1.0 + 1e-12);
  CHECK(pass2.v_bt <= pass1.v_bt + 1e-9);
  for (int k = 0; k < n.n_buses(); ++k) {
    CHECK(pass1.bounds.v_min[k] >= n.buses[k].v_min - 1e-9);
    CHECK(pass1.bounds.v_max[k] <= n.buses[k].v_max + 1e-9);
    CHECK(pass2.bounds.v_min[k] >= pass1.bounds.v_min[k] - 1e-9);
    CHECK(pass2.bounds.v_max[k] <= pass1.bounds.v_max[k] + 1e-9);
  }
  for (size_t bi = 0; bi < n.branches.size(); ++bi) {
    CHECK(pass2.bounds.theta_min[bi] >= pass1.bounds.theta_min[bi] - 1e-9);
    CHECK(pass2.bounds.theta_max[bi] <= pass1.bounds.theta_max[bi] + 1e-9);
  }
  // frozen dims contribute factor one
  int frozen = 0;
  for (const auto& d : pass1.space.dims)
    if (d.frozen) ++frozen;
  CHECK(frozen == 1);  // the zero-capability generator at bus 3
}

TEST_CASE("untightened box has unit volume fraction") {
  LimitToy toy = make_limit_toy();
  TightenOptions opt;
  opt.max_iters = 0;
  auto tb = tighten::tighten(toy.net, toy.xs, opt);
  CHECK(tb.v_bt == doctest::Approx(1.0));
}

TEST_CASE("secure points stay inside the tightened box") {
  LimitToy toy = make_limit_toy();
  auto tb = tighten::tighten(toy.net, toy.xs);
  for (double p = 0.05; p <= 2.0; p += 0.1) {
    InputVector x = net::reference_point(toy.net, toy.xs);
    x[toy.p_dim] = p;
    auto res = acpf::classify_two_stage(toy.net, toy.xs, x);
    if (!res.report.secure) continue;
    CHECK(p >= tb.space.dims[toy.p_dim].bt_lo - 1e-6);
    CHECK(p <= tb.space.dims[toy.p_dim].bt_hi + 1e-6);
  }
}
