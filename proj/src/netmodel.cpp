#include "forge/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <queue>
#include <sstream>

namespace forge::net {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kHalfPi = kPi / 2.0;

std::string strip_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  for (char ch : text) {
    if (ch == '%') in_comment = true;
    if (ch == '\n') in_comment = false;
    out.push_back(in_comment ? ' ' : ch);
  }
  return out;
}

// parses "mpc.<name> = [ rows ];" into a row-major table
std::vector<std::vector<double>> find_matrix(const std::string& text, const std::string& name,
                                             bool required) {
  const std::string key = "mpc." + name;
  size_t pos = text.find(key);
  while (pos != std::string::npos) {
    size_t eq = text.find_first_not_of(" \t", pos + key.size());
    if (eq != std::string::npos && text[eq] == '=') break;
    pos = text.find(key, pos + 1);
  }
  if (pos == std::string::npos) {
    if (required) throw MalformedCase("missing table mpc." + name);
    return {};
  }
  size_t open = text.find('[', pos);
  size_t close = text.find(']', open);
  if (open == std::string::npos || close == std::string::npos)
    throw MalformedCase("unterminated table mpc." + name);

  std::vector<std::vector<double>> rows;
  std::string body = text.substr(open + 1, close - open - 1);
  std::string line;
  std::stringstream ss(body);
  auto flush = [&](const std::string& s) {
    std::stringstream ls(s);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    std::string junk;
    if (ls.clear(), ls >> junk, !junk.empty())
      throw MalformedCase("non-numeric token '" + junk + "' in mpc." + name);
    if (!row.empty()) rows.push_back(std::move(row));
  };
  for (char& ch : body)
    if (ch == ';') ch = '\n';
  std::stringstream lines(body);
  while (std::getline(lines, line)) flush(line);
  return rows;
}

double find_scalar(const std::string& text, const std::string& name) {
  const std::string key = "mpc." + name;
  size_t pos = text.find(key);
  if (pos == std::string::npos) throw MalformedCase("missing scalar mpc." + name);
  size_t eq = text.find('=', pos);
  size_t sc = text.find(';', eq);
  if (eq == std::string::npos || sc == std::string::npos)
    throw MalformedCase("malformed scalar mpc." + name);
  return std::stod(text.substr(eq + 1, sc - eq - 1));
}

}  // namespace

double UncertainInjection::q_ratio() const {
  const double c = power_factor;
  return std::sqrt(std::max(0.0, 1.0 - c * c)) / c;
}

int Network::slack_bus() const {
  for (int i = 0; i < n_buses(); ++i)
    if (buses[i].kind == BusKind::slack) return i;
  throw InconsistentCase("network has no slack bus");
}

int Network::bus_index(int bus_id) const {
  for (int i = 0; i < n_buses(); ++i)
    if (buses[i].id == bus_id) return i;
  throw InconsistentCase("unknown bus id " + std::to_string(bus_id));
}

std::vector<std::vector<int>> Network::gens_by_bus() const {
  std::vector<std::vector<int>> out(buses.size());
  for (int g = 0; g < static_cast<int>(generators.size()); ++g)
    if (generators[g].in_service) out[generators[g].bus].push_back(g);
  return out;
}

std::vector<int> Network::generator_buses() const {
  std::vector<int> out;
  for (const auto& g : generators) {
    if (!g.in_service) continue;
    if (std::find(out.begin(), out.end(), g.bus) == out.end()) out.push_back(g.bus);
  }
  return out;
}

void Network::validate() const {
  int slack_count = 0;
  for (const auto& b : buses) {
    if (!(b.v_min > 0.0)) throw InconsistentCase("bus v_min must be positive");
    if (b.v_min > b.v_max) throw InconsistentCase("bus v_min above v_max");
    if (b.kind == BusKind::slack) ++slack_count;
  }
  if (slack_count == 0) throw InconsistentCase("no slack bus");
  if (slack_count > 1) throw InconsistentCase("duplicate slack bus");
  for (const auto& br : branches) {
    if (br.from_bus == br.to_bus) throw InconsistentCase("branch with equal endpoints");
    if (br.from_bus < 0 || br.from_bus >= n_buses() || br.to_bus < 0 || br.to_bus >= n_buses())
      throw InconsistentCase("branch references unknown bus");
    if (br.theta_min > br.theta_max) throw InconsistentCase("branch angle bounds inverted");
    if (br.s_max && *br.s_max < 0.0) throw InconsistentCase("negative branch rating");
  }
  for (const auto& g : generators) {
    if (g.bus < 0 || g.bus >= n_buses()) throw InconsistentCase("generator references unknown bus");
    if (g.p_min > g.p_max) throw InconsistentCase("generator p bounds inverted");
    if (g.q_min > g.q_max) throw InconsistentCase("generator q bounds inverted");
  }
  for (const auto& u : uncertain) {
    if (u.bus < 0 || u.bus >= n_buses()) throw InconsistentCase("injection references unknown bus");
    if (u.p_min > u.p_max) throw InconsistentCase("injection p bounds inverted");
    if (!(u.power_factor > 0.0 && u.power_factor <= 1.0))
      throw InconsistentCase("power factor outside (0, 1]");
  }
  for (int c = 1; c < contingencies.size(); ++c) {
    const int br = contingencies.outages[c];
    if (br < 0 || br >= static_cast<int>(branches.size()))
      throw InconsistentCase("contingency references unknown branch");
  }
}

Network parse_case(const std::string& path) {
  std::ifstream fs(path);
  if (!fs) throw MalformedCase("cannot open case file: " + path);
  std::stringstream buf;
  buf << fs.rdbuf();
  const std::string text = strip_comments(buf.str());

  Network net;
  net.base_mva = find_scalar(text, "baseMVA");
  if (!(net.base_mva > 0.0)) throw MalformedCase("baseMVA must be positive");
  const double base = net.base_mva;

  auto bus_tab = find_matrix(text, "bus", true);
  auto gen_tab = find_matrix(text, "gen", true);
  auto br_tab = find_matrix(text, "branch", true);
  find_matrix(text, "gencost", false);  // read and ignored

  std::map<int, int> id2idx;
  for (const auto& row : bus_tab) {
    if (row.size() < 13) throw MalformedCase("bus row needs 13 columns");
    Bus b;
    b.id = static_cast<int>(row[0]);
    const int type = static_cast<int>(row[1]);
    if (type == 3)
      b.kind = BusKind::slack;
    else if (type == 2)
      b.kind = BusKind::pv;
    else if (type == 1)
      b.kind = BusKind::pq;
    else
      throw InconsistentCase("unsupported bus type " + std::to_string(type));
    b.p_demand = row[2] / base;
    b.q_demand = row[3] / base;
    b.shunt_g = row[4] / base;
    b.shunt_b = row[5] / base;
    b.v_max = row[11];
    b.v_min = row[12];
    if (id2idx.count(b.id)) throw InconsistentCase("duplicate bus id");
    id2idx[b.id] = net.n_buses();
    net.buses.push_back(b);
  }

  for (const auto& row : gen_tab) {
    if (row.size() < 10) throw MalformedCase("gen row needs 10 columns");
    Generator g;
    const int bus_id = static_cast<int>(row[0]);
    if (!id2idx.count(bus_id))
      throw InconsistentCase("gen references unknown bus " + std::to_string(bus_id));
    g.bus = id2idx[bus_id];
    g.p_start = row[1] / base;
    g.q_max = row[3] / base;
    g.q_min = row[4] / base;
    g.v_set = row[5];
    g.in_service = row[7] > 0.0;
    g.p_max = row[8] / base;
    g.p_min = row[9] / base;
    net.generators.push_back(g);
  }

  for (const auto& row : br_tab) {
    if (row.size() < 11) throw MalformedCase("branch row needs 11 columns");
    Branch br;
    const int f = static_cast<int>(row[0]), t = static_cast<int>(row[1]);
    if (!id2idx.count(f) || !id2idx.count(t))
      throw InconsistentCase("branch references unknown bus");
    br.from_bus = id2idx[f];
    br.to_bus = id2idx[t];
    br.r = row[2];
    br.x = row[3];
    br.b_charge = row[4];
    if (row[5] > 0.0) br.s_max = row[5] / base;  // 0 encodes unlimited
    br.tap = (row[8] != 0.0) ? row[8] : 1.0;
    br.shift = row[9] * kPi / 180.0;
    br.in_service = row[10] > 0.0;
    double amin = -90.0, amax = 90.0;
    if (row.size() >= 13 && !(row[11] == 0.0 && row[12] == 0.0)) {
      amin = row[11];
      amax = row[12];
    }
    br.theta_min = std::max(amin * kPi / 180.0, -kHalfPi);
    br.theta_max = std::min(amax * kPi / 180.0, kHalfPi);
    net.branches.push_back(br);
  }

  net.validate();
  return net;
}

void write_case(const Network& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write case file: " + path);
  os.precision(17);
  const double base = net.base_mva;
  os << "function mpc = exported_case\n";
  os << "mpc.version = '2';\n";
  os << "mpc.baseMVA = " << base << ";\n";
  os << "mpc.bus = [\n";
  for (const auto& b : net.buses) {
    int type = b.kind == BusKind::slack ? 3 : (b.kind == BusKind::pv ? 2 : 1);
    os << '\t' << b.id << '\t' << type << '\t' << b.p_demand * base << '\t' << b.q_demand * base
       << '\t' << b.shunt_g * base << '\t' << b.shunt_b * base << "\t1\t1.0\t0.0\t0.0\t1\t"
       << b.v_max << '\t' << b.v_min << ";\n";
  }
  os << "];\n";
  os << "mpc.gen = [\n";
  for (const auto& g : net.generators) {
    os << '\t' << net.buses[g.bus].id << '\t' << g.p_start * base << "\t0.0\t" << g.q_max * base
       << '\t' << g.q_min * base << '\t' << g.v_set << '\t' << base << '\t'
       << (g.in_service ? 1 : 0) << '\t' << g.p_max * base << '\t' << g.p_min * base << ";\n";
  }
  os << "];\n";
  os << "mpc.branch = [\n";
  for (const auto& br : net.branches) {
    os << '\t' << net.buses[br.from_bus].id << '\t' << net.buses[br.to_bus].id << '\t' << br.r
       << '\t' << br.x << '\t' << br.b_charge << '\t' << (br.s_max ? *br.s_max * base : 0.0)
       << "\t0.0\t0.0\t" << (br.tap == 1.0 ? 0.0 : br.tap) << '\t' << br.shift * 180.0 / kPi
       << '\t' << (br.in_service ? 1 : 0) << '\t' << br.theta_min * 180.0 / kPi << '\t'
       << br.theta_max * 180.0 / kPi << ";\n";
  }
  os << "];\n";
}

BranchAdmittance branch_admittance(const Branch& br) {
  const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
  const std::complex<double> jbc(0.0, br.b_charge / 2.0);
  const double tau = br.tap;
  const std::complex<double> shift = std::polar(1.0, br.shift);
  BranchAdmittance a;
  a.ff = (ys + jbc) / (tau * tau);
  a.ft = -ys / (tau * std::conj(shift));
  a.tf = -ys / (tau * shift);
  a.tt = ys + jbc;
  return a;
}

std::vector<int> active_branches(const Network& net, int contingency) {
  std::vector<int> out;
  const int outaged =
      (contingency > 0 && contingency < net.contingencies.size())
          ? net.contingencies.outages[contingency]
          : -1;
  if (contingency < 0 || contingency >= net.contingencies.size())
    throw InconsistentCase("contingency index out of range");
  for (int i = 0; i < static_cast<int>(net.branches.size()); ++i)
    if (net.branches[i].in_service && i != outaged) out.push_back(i);
  return out;
}

Eigen::SparseMatrix<std::complex<double>> ybus(const Network& net, int contingency) {
  const int n = net.n_buses();
  std::vector<Eigen::Triplet<std::complex<double>>> t;
  for (int i = 0; i < n; ++i)
    t.emplace_back(i, i, std::complex<double>(net.buses[i].shunt_g, net.buses[i].shunt_b));
  for (int bi : active_branches(net, contingency)) {
    const Branch& br = net.branches[bi];
    const auto a = branch_admittance(br);
    t.emplace_back(br.from_bus, br.from_bus, a.ff);
    t.emplace_back(br.from_bus, br.to_bus, a.ft);
    t.emplace_back(br.to_bus, br.from_bus, a.tf);
    t.emplace_back(br.to_bus, br.to_bus, a.tt);
  }
  Eigen::SparseMatrix<std::complex<double>> y(n, n);
  y.setFromTriplets(t.begin(), t.end());
  return y;
}

namespace {

bool connected_without(const Network& net, int excluded_branch) {
  const int n = net.n_buses();
  if (n == 0) return true;
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < static_cast<int>(net.branches.size()); ++i) {
    if (!net.branches[i].in_service || i == excluded_branch) continue;
    adj[net.branches[i].from_bus].push_back(net.branches[i].to_bus);
    adj[net.branches[i].to_bus].push_back(net.branches[i].from_bus);
  }
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  return count == n;
}

}  // namespace

NetworkView apply_contingency(const Network& net, int contingency) {
  NetworkView view;
  view.net = &net;
  view.contingency = contingency;
  if (contingency > 0) {
    const int br = net.contingencies.outages.at(contingency);
    if (!connected_without(net, br))
      throw IslandedNetwork("outage of branch " + std::to_string(br + 1) +
                            " disconnects the network");
  }
  view.branches = active_branches(net, contingency);
  view.y = ybus(net, contingency);
  return view;
}

void set_contingencies(Network& net, const std::vector<int>& branch_rows_1based) {
  ContingencySet cs;
  for (int row : branch_rows_1based) {
    const int idx = row - 1;
    if (idx < 0 || idx >= static_cast<int>(net.branches.size()))
      throw InconsistentCase("contingency branch row out of range: " + std::to_string(row));
    if (!net.branches[idx].in_service)
      throw InconsistentCase("contingency branch is out of service");
    if (!connected_without(net, idx))
      throw IslandedNetwork("contingency " + std::to_string(row) + " islands the network");
    cs.outages.push_back(idx);
  }
  net.contingencies = cs;
}

// ---------------------------------------------------------------------------
// input space

int InputSpace::free_count() const {
  int n = 0;
  for (const auto& d : dims)
    if (!d.frozen && d.in_x) ++n;
  return n;
}

std::vector<int> InputSpace::free_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (!dims[i].frozen && dims[i].in_x) out.push_back(i);
  return out;
}

Eigen::VectorXd InputSpace::normalize(const InputVector& physical) const {
  Eigen::VectorXd out(size());
  for (int i = 0; i < size(); ++i) {
    const auto& d = dims[i];
    out[i] = d.frozen ? 0.5 : (physical[i] - d.lo) / (d.hi - d.lo);
  }
  return out;
}

InputVector InputSpace::denormalize(const Eigen::VectorXd& unit) const {
  InputVector out(size());
  for (int i = 0; i < size(); ++i) {
    const auto& d = dims[i];
    out[i] = d.frozen ? d.frozen_value : d.lo + unit[i] * (d.hi - d.lo);
  }
  return out;
}

Eigen::VectorXd InputSpace::bt_lo_normalized() const {
  const auto free = free_indices();
  Eigen::VectorXd out(free.size());
  for (size_t k = 0; k < free.size(); ++k) {
    const auto& d = dims[free[k]];
    out[k] = (d.bt_lo - d.lo) / (d.hi - d.lo);
  }
  return out;
}

Eigen::VectorXd InputSpace::bt_hi_normalized() const {
  const auto free = free_indices();
  Eigen::VectorXd out(free.size());
  for (size_t k = 0; k < free.size(); ++k) {
    const auto& d = dims[free[k]];
    out[k] = (d.bt_hi - d.lo) / (d.hi - d.lo);
  }
  return out;
}

double InputSpace::tightened_volume_fraction() const {
  double v = 1.0;
  for (const auto& d : dims) {
    if (d.frozen || !d.in_x) continue;  // only sampled dims count
    v *= (d.bt_hi - d.bt_lo) / (d.hi - d.lo);
  }
  return v;
}

InputSpace build_input_space(const Network& net) {
  const int slack = net.slack_bus();
  bool slack_has_gen = false;
  for (const auto& g : net.generators)
    if (g.in_service && g.bus == slack) slack_has_gen = true;
  if (!slack_has_gen) throw NoSlackGenerator("slack bus hosts no in-service generator");

  InputSpace xs;
  auto push = [&xs](InputRole role, int element, double lo, double hi) {
    InputDim d;
    d.role = role;
    d.element = element;
    d.lo = lo;
    d.hi = hi;
    d.bt_lo = lo;
    d.bt_hi = hi;
    if (hi - lo < 1e-12) {
      d.frozen = true;
      d.frozen_value = 0.5 * (lo + hi);
    }
    xs.dims.push_back(d);
  };

  for (int g = 0; g < static_cast<int>(net.generators.size()); ++g) {
    const auto& gen = net.generators[g];
    if (!gen.in_service || gen.bus == slack) continue;
    push(InputRole::gen_p_excl_slack, g, gen.p_min, gen.p_max);
  }
  for (int bus : net.generator_buses())
    push(InputRole::gen_v, bus, net.buses[bus].v_min, net.buses[bus].v_max);
  for (int u = 0; u < static_cast<int>(net.uncertain.size()); ++u)
    push(InputRole::uncertain_p, u, net.uncertain[u].p_min, net.uncertain[u].p_max);
  return xs;
}

InputSpace restrict_dims(const InputSpace& xs, const std::vector<int>& keep,
                         const InputVector& pin) {
  InputSpace out = xs;
  std::vector<char> kept(xs.size(), 0);
  for (int k : keep) kept.at(k) = 1;
  for (int i = 0; i < out.size(); ++i) {
    if (kept[i] || out.dims[i].frozen) continue;
    auto& d = out.dims[i];
    d.frozen = true;
    d.frozen_value = std::clamp(pin[i], d.lo, d.hi);
    d.bt_lo = d.frozen_value;
    d.bt_hi = d.frozen_value;
  }
  return out;
}

InputSpace exclude_dims(const InputSpace& xs, const std::vector<int>& keep) {
  InputSpace out = xs;
  std::vector<char> kept(xs.size(), 0);
  for (int k : keep) kept.at(k) = 1;
  for (int i = 0; i < out.size(); ++i)
    if (!kept[i]) out.dims[i].in_x = false;
  return out;
}

InputVector reference_point(const Network& net, const InputSpace& xs) {
  InputVector x(xs.size());
  for (int i = 0; i < xs.size(); ++i) {
    const auto& d = xs.dims[i];
    double v = 0.0;
    switch (d.role) {
      case InputRole::gen_p_excl_slack:
        v = net.generators[d.element].p_start;
        break;
      case InputRole::gen_v: {
        v = net.buses[d.element].v_min;
        for (const auto& g : net.generators)
          if (g.in_service && g.bus == d.element) {
            v = g.v_set;
            break;
          }
        break;
      }
      case InputRole::uncertain_p:
        v = 0.5 * (d.lo + d.hi);
        break;
    }
    x[i] = d.frozen ? d.frozen_value : std::clamp(v, d.lo, d.hi);
  }
  return x;
}

InputBinding bind_input(const Network& net, const InputSpace& xs, const InputVector& x) {
  InputBinding b;
  b.gen_p.assign(net.generators.size(), std::numeric_limits<double>::quiet_NaN());
  b.bus_v.assign(net.buses.size(), std::numeric_limits<double>::quiet_NaN());
  b.uncertain_p.assign(net.uncertain.size(), 0.0);
  for (int i = 0; i < xs.size(); ++i) {
    const auto& d = xs.dims[i];
    const double v = d.frozen ? d.frozen_value : x[i];
    switch (d.role) {
      case InputRole::gen_p_excl_slack:
        b.gen_p[d.element] = v;
        break;
      case InputRole::gen_v:
        b.bus_v[d.element] = v;
        break;
      case InputRole::uncertain_p:
        b.uncertain_p[d.element] = v;
        break;
    }
  }
  return b;
}

}  // namespace forge::net
