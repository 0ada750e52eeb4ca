#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "forge/errors.hpp"

namespace forge::net {

enum class BusKind { slack, pv, pq };

struct Bus {
  int id = 0;  // original case-file bus number
  BusKind kind = BusKind::pq;
  double p_demand = 0.0, q_demand = 0.0;  // per-unit
  double shunt_g = 0.0, shunt_b = 0.0;    // per-unit
  double v_min = 0.9, v_max = 1.1;
};

struct Branch {
  int from_bus = 0, to_bus = 0;  // internal indices
  double r = 0.0, x = 0.0;
  double b_charge = 0.0;   // total line charging susceptance
  double tap = 1.0;        // ratio (1 = nominal)
  double shift = 0.0;      // radians
  std::optional<double> s_max;  // per-unit; absent = no thermal limit
  double theta_min = 0.0, theta_max = 0.0;  // radians
  bool in_service = true;
};

struct Generator {
  int bus = 0;  // internal index
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
  double v_set = 1.0;
  double p_start = 0.0;  // case-file dispatch, used as reference point
  bool in_service = true;
};

struct UncertainInjection {
  int bus = 0;  // internal index
  double p_min = 0.0, p_max = 0.0;
  double power_factor = 1.0;  // cos(phi) in (0, 1]

  // q = q_ratio() * p
  double q_ratio() const;
};

// outages[0] is reserved for the intact state (-1)
struct ContingencySet {
  std::vector<int> outages = {-1};
  int size() const { return static_cast<int>(outages.size()); }
};

struct Network {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<UncertainInjection> uncertain;
  ContingencySet contingencies;

  int n_buses() const { return static_cast<int>(buses.size()); }
  int slack_bus() const;
  int bus_index(int bus_id) const;  // original id -> internal, throws InconsistentCase
  std::vector<std::vector<int>> gens_by_bus() const;  // in-service only
  // distinct buses hosting at least one in-service generator, in gen-table order
  std::vector<int> generator_buses() const;
  void validate() const;
};

Network parse_case(const std::string& path);
void write_case(const Network& net, const std::string& path);

// branch admittances, MATPOWER convention:
//   I_f = ff V_f + ft V_t,   I_t = tf V_f + tt V_t
struct BranchAdmittance {
  std::complex<double> ff, ft, tf, tt;
};
BranchAdmittance branch_admittance(const Branch& br);

// bus admittance matrix for contingency c (c = 0 intact)
Eigen::SparseMatrix<std::complex<double>> ybus(const Network& net, int contingency = 0);

// branch indices in service under contingency c
std::vector<int> active_branches(const Network& net, int contingency);

struct NetworkView {
  const Network* net = nullptr;
  int contingency = 0;
  std::vector<int> branches;  // active branch indices
  Eigen::SparseMatrix<std::complex<double>> y;
};

// throws IslandedNetwork if the outage disconnects the grid
NetworkView apply_contingency(const Network& net, int contingency);

// attach contingencies given 1-based branch indices (case-file row order);
// each one is checked for islanding
void set_contingencies(Network& net, const std::vector<int>& branch_rows_1based);

// ---------------------------------------------------------------------------
// input space

enum class InputRole { gen_p_excl_slack, gen_v, uncertain_p };

struct InputDim {
  InputRole role = InputRole::gen_p_excl_slack;
  int element = 0;  // generator index for P, bus index for V, injection index for P_U
  double lo = 0.0, hi = 0.0;        // physical bounds
  double bt_lo = 0.0, bt_hi = 0.0;  // tightened bounds, start equal to physical
  bool frozen = false;              // lo == hi, or pinned by a dimension filter
  double frozen_value = 0.0;
  // false: the quantity stays a free decision in the relaxation but is not a
  // sampled input dimension (projection study)
  bool in_x = true;
};

using InputVector = Eigen::VectorXd;  // physical units, one entry per dim

struct InputSpace {
  std::vector<InputDim> dims;

  int size() const { return static_cast<int>(dims.size()); }
  int free_count() const;
  std::vector<int> free_indices() const;

  // affine map to [0,1] per component; frozen dims map to 0.5
  Eigen::VectorXd normalize(const InputVector& physical) const;
  InputVector denormalize(const Eigen::VectorXd& unit) const;

  // normalized tightened bounds of the free dims (box of the unclassified region)
  Eigen::VectorXd bt_lo_normalized() const;
  Eigen::VectorXd bt_hi_normalized() const;

  // fraction of the original box still inside the tightened bounds
  double tightened_volume_fraction() const;
};

InputSpace build_input_space(const Network& net);

// restricts to the given dims; every other dim is frozen at `pin` (physical)
InputSpace restrict_dims(const InputSpace& xs, const std::vector<int>& keep,
                         const InputVector& pin);

// drops dims from the sampled input while leaving them free in the relaxation
InputSpace exclude_dims(const InputSpace& xs, const std::vector<int>& keep);

// the case-file operating point expressed in input coordinates (clipped to bounds)
InputVector reference_point(const Network& net, const InputSpace& xs);

// pull per-role values out of an input vector
struct InputBinding {
  // per in-service generator: dispatched P (slack entry = NaN placeholder)
  std::vector<double> gen_p;
  // per bus with generators: V set-point
  std::vector<double> bus_v;      // indexed by bus, NaN when no generator
  std::vector<double> uncertain_p;
};
InputBinding bind_input(const Network& net, const InputSpace& xs, const InputVector& x);

}  // namespace forge::net
