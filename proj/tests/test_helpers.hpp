#pragma once

#include <string>

#include "forge/netmodel.hpp"

namespace forge::test {

inline std::string data_path(const std::string& name) {
  return std::string(FORGE_SOURCE_DIR) + "/data/pglib/" + name;
}

struct TwoBusSpec {
  double r = 0.01, x = 0.1, b_charge = 0.0;
  double p_load = 0.5, q_load = 0.2;  // at bus 2
  double slack_p_min = -10.0, slack_p_max = 10.0;
  double slack_q_min = -10.0, slack_q_max = 10.0;
  double v_min = 0.9, v_max = 1.1;
  double rate = 0.0;  // 0 = unlimited
  bool second_gen = false;
  double g2_p_min = 0.0, g2_p_max = 1.0;
  double g2_q_min = -10.0, g2_q_max = 10.0;
};

// slack gen at bus 1, load at bus 2, one line; optional second gen at bus 2
inline net::Network make_two_bus(const TwoBusSpec& s = {}) {
  net::Network n;
  n.base_mva = 100.0;
  net::Bus b1;
  b1.id = 1;
  b1.kind = net::BusKind::slack;
  b1.v_min = s.v_min;
  b1.v_max = s.v_max;
  net::Bus b2;
  b2.id = 2;
  b2.kind = s.second_gen ? net::BusKind::pv : net::BusKind::pq;
  b2.p_demand = s.p_load;
  b2.q_demand = s.q_load;
  b2.v_min = s.v_min;
  b2.v_max = s.v_max;
  n.buses = {b1, b2};

  net::Branch br;
  br.from_bus = 0;
  br.to_bus = 1;
  br.r = s.r;
  br.x = s.x;
  br.b_charge = s.b_charge;
  if (s.rate > 0.0) br.s_max = s.rate;
  br.theta_min = -1.0;
  br.theta_max = 1.0;
  n.branches = {br};

  net::Generator g;
  g.bus = 0;
  g.p_min = s.slack_p_min;
  g.p_max = s.slack_p_max;
  g.q_min = s.slack_q_min;
  g.q_max = s.slack_q_max;
  g.v_set = 1.0;
  n.generators = {g};
  if (s.second_gen) {
    net::Generator g2;
    g2.bus = 1;
    g2.p_min = s.g2_p_min;
    g2.p_max = s.g2_p_max;
    g2.q_min = s.g2_q_min;
    g2.q_max = s.g2_q_max;
    g2.v_set = 1.0;
    n.generators.push_back(g2);
  }
  n.validate();
  return n;
}

}  // namespace forge::test
