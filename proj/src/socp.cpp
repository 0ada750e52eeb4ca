#include "forge/socp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace forge::socp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool finite(double v) { return std::isfinite(v); }

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// ConicProgram

void ConicProgram::validate() const {
  if (n_vars <= 0) throw IllFormedProgram("program has no variables");
  if (objective.size() != n_vars) throw IllFormedProgram("objective length != n_vars");
  if (eq_a.rows() != eq_b.size()) throw IllFormedProgram("eq_a rows != eq_b length");
  if (cone_g.rows() != cone_h.size()) throw IllFormedProgram("cone_g rows != cone_h length");
  if (eq_a.rows() > 0 && eq_a.cols() != n_vars) throw IllFormedProgram("eq_a cols != n_vars");
  if (cone_g.rows() > 0 && cone_g.cols() != n_vars) throw IllFormedProgram("cone_g cols != n_vars");
  long total = 0;
  for (const auto& c : cones) {
    if (c.size <= 0) throw IllFormedProgram("cone block with nonpositive size");
    if (c.kind == ConeKind::second_order && c.size < 2)
      throw IllFormedProgram("second-order cone needs size >= 2");
    total += c.size;
  }
  if (total != cone_g.rows()) throw IllFormedProgram("cone sizes do not cover cone_g rows");
  if (var_lower.size() != var_upper.size())
    throw IllFormedProgram("var bound vectors differ in length");
  if (var_lower.size() != 0 && var_lower.size() != n_vars)
    throw IllFormedProgram("var bound length != n_vars");
}

int ConicProgram::cone_start(int block) const {
  int row = 0;
  for (int i = 0; i < block; ++i) row += cones[i].size;
  return row;
}

ConicProgram canonicalize(const ConicProgram& p) {
  p.validate();
  ConicProgram q = p;
  if (p.var_lower.size() == 0) return q;

  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> extra_h;
  for (int j = 0; j < p.n_vars; ++j) {
    double lo = p.var_lower[j], hi = p.var_upper[j];
    if (finite(lo) && finite(hi) && lo > hi) throw IllFormedProgram("lower bound above upper");
    if (finite(hi)) {  // x_j <= hi
      trips.emplace_back(static_cast<int>(extra_h.size()), j, 1.0);
      extra_h.push_back(hi);
    }
    if (finite(lo)) {  // -x_j <= -lo
      trips.emplace_back(static_cast<int>(extra_h.size()), j, -1.0);
      extra_h.push_back(-lo);
    }
  }
  const int m0 = p.cone_rows();
  const int me = static_cast<int>(extra_h.size());
  Eigen::SparseMatrix<double> gb(me, p.n_vars);
  gb.setFromTriplets(trips.begin(), trips.end());

  Eigen::SparseMatrix<double> g(m0 + me, p.n_vars);
  std::vector<Eigen::Triplet<double>> all;
  all.reserve(p.cone_g.nonZeros() + gb.nonZeros());
  for (int k = 0; k < p.cone_g.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.cone_g, k); it; ++it)
      all.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int k = 0; k < gb.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(gb, k); it; ++it)
      all.emplace_back(static_cast<int>(it.row()) + m0, static_cast<int>(it.col()), it.value());
  g.setFromTriplets(all.begin(), all.end());

  Eigen::VectorXd h(m0 + me);
  h.head(m0) = p.cone_h;
  for (int i = 0; i < me; ++i) h[m0 + i] = extra_h[i];

  q.cone_g = std::move(g);
  q.cone_h = std::move(h);
  q.cones.push_back({ConeKind::nonnegative, me});
  q.var_lower.resize(0);
  q.var_upper.resize(0);
  return q;
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::primal_infeasible: return "primal_infeasible";
    case SolveStatus::dual_infeasible: return "dual_infeasible";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::numerical: return "numerical";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ProgramBuilder

int ProgramBuilder::add_var(double cost) {
  cost_.push_back(cost);
  return n_++;
}

int ProgramBuilder::add_vars(int k) {
  int first = n_;
  for (int i = 0; i < k; ++i) add_var(0.0);
  return first;
}

void ProgramBuilder::set_cost(int col, double coef) { cost_.at(col) = coef; }

void ProgramBuilder::add_eq(const std::vector<std::pair<int, double>>& terms, double rhs) {
  int row = static_cast<int>(b_.size());
  for (auto [c, v] : terms)
    if (v != 0.0) a_trip_.emplace_back(row, c, v);
  b_.push_back(rhs);
}

void ProgramBuilder::add_le(const std::vector<std::pair<int, double>>& terms, double rhs) {
  int row = static_cast<int>(h_lin_.size());
  for (auto [c, v] : terms)
    if (v != 0.0) g_lin_trip_.emplace_back(row, c, v);
  h_lin_.push_back(rhs);
}

void ProgramBuilder::add_ge(const std::vector<std::pair<int, double>>& terms, double rhs) {
  std::vector<std::pair<int, double>> neg(terms);
  for (auto& t : neg) t.second = -t.second;
  add_le(neg, -rhs);
}

void ProgramBuilder::add_box(int col, double lo, double hi) {
  if (finite(hi)) add_le({{col, 1.0}}, hi);
  if (finite(lo)) add_ge({{col, 1.0}}, lo);
}

int ProgramBuilder::add_soc(const std::vector<Affine>& rows) {
  if (rows.size() < 2) throw IllFormedProgram("soc block needs >= 2 rows");
  int base = static_cast<int>(h_soc_.size());
  for (const auto& r : rows) {
    int row = base++;
    // s = h - Gx must equal the affine row:  h = constant, G = -terms
    for (auto [c, v] : r.terms)
      if (v != 0.0) g_soc_trip_.emplace_back(row, c, -v);
    h_soc_.push_back(r.constant);
  }
  soc_sizes_.push_back(static_cast<int>(rows.size()));
  return static_cast<int>(soc_sizes_.size()) - 1;
}

ConicProgram ProgramBuilder::build() const {
  ConicProgram p;
  p.n_vars = n_;
  p.objective = Eigen::Map<const Eigen::VectorXd>(cost_.data(), n_);

  p.eq_a.resize(static_cast<int>(b_.size()), n_);
  p.eq_a.setFromTriplets(a_trip_.begin(), a_trip_.end());
  p.eq_b = Eigen::Map<const Eigen::VectorXd>(b_.data(), static_cast<long>(b_.size()));

  const int m_lin = static_cast<int>(h_lin_.size());
  const int m_soc = static_cast<int>(h_soc_.size());
  std::vector<Eigen::Triplet<double>> g;
  g.reserve(g_lin_trip_.size() + g_soc_trip_.size());
  g.insert(g.end(), g_lin_trip_.begin(), g_lin_trip_.end());
  for (const auto& t : g_soc_trip_) g.emplace_back(t.row() + m_lin, t.col(), t.value());
  p.cone_g.resize(m_lin + m_soc, n_);
  p.cone_g.setFromTriplets(g.begin(), g.end());

  p.cone_h.resize(m_lin + m_soc);
  for (int i = 0; i < m_lin; ++i) p.cone_h[i] = h_lin_[i];
  for (int i = 0; i < m_soc; ++i) p.cone_h[m_lin + i] = h_soc_[i];

  if (m_lin > 0) p.cones.push_back({ConeKind::nonnegative, m_lin});
  for (int s : soc_sizes_) p.cones.push_back({ConeKind::second_order, s});
  return p;
}

// ---------------------------------------------------------------------------
// cone utilities (canonical row order, product cone)

namespace {

struct ConeLayout {
  std::vector<ConeBlock> blocks;
  std::vector<int> start;
  int rows = 0;
  int degree = 0;  // nonneg rows count 1 each, each soc block counts 1

  explicit ConeLayout(const std::vector<ConeBlock>& b) : blocks(b) {
    for (const auto& c : blocks) {
      start.push_back(rows);
      rows += c.size;
      degree += (c.kind == ConeKind::nonnegative) ? c.size : 1;
    }
  }
};

// stable near the boundary: evaluated as (t - |u|)(t + |u|)
double soc_res(const Eigen::Ref<const Eigen::VectorXd>& u) {
  const double nrm = u.tail(u.size() - 1).norm();
  return (u[0] - nrm) * (u[0] + nrm);
}

// unit element e of the product cone
Eigen::VectorXd cone_unit(const ConeLayout& L) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(L.rows);
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    if (L.blocks[i].kind == ConeKind::nonnegative)
      e.segment(L.start[i], L.blocks[i].size).setOnes();
    else
      e[L.start[i]] = 1.0;
  }
  return e;
}

// margin to the cone boundary (>0 strictly inside)
double cone_margin_impl(const ConeLayout& L, const Eigen::VectorXd& s) {
  double m = kInf;
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    auto seg = s.segment(L.start[i], L.blocks[i].size);
    if (L.blocks[i].kind == ConeKind::nonnegative) {
      if (seg.size() > 0) m = std::min(m, seg.minCoeff());
    } else {
      m = std::min(m, seg[0] - seg.tail(seg.size() - 1).norm());
    }
  }
  return (m == kInf) ? 0.0 : m;
}

// max step alpha so that u + alpha*d stays in the cone (u strictly inside)
double max_step(const ConeLayout& L, const Eigen::VectorXd& u, const Eigen::VectorXd& d) {
  double alpha = kInf;
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    const int s0 = L.start[i], sz = L.blocks[i].size;
    if (L.blocks[i].kind == ConeKind::nonnegative) {
      for (int k = 0; k < sz; ++k)
        if (d[s0 + k] < 0.0) alpha = std::min(alpha, -u[s0 + k] / d[s0 + k]);
    } else {
      auto uu = u.segment(s0, sz);
      auto dd = d.segment(s0, sz);
      const double a = soc_res(dd);
      const double b = 2.0 * (uu[0] * dd[0] - uu.tail(sz - 1).dot(dd.tail(sz - 1)));
      const double c = soc_res(uu);
      double blk = kInf;
      if (a >= 0.0 && b >= 0.0) {
        blk = kInf;  // stays inside for all alpha > 0
      } else {
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) {
          blk = kInf;
        } else {
          const double sq = std::sqrt(disc);
          // smallest positive root of a t^2 + b t + c = 0
          double r1, r2;
          if (a == 0.0) {
            r1 = r2 = (b != 0.0) ? -c / b : kInf;
          } else {
            const double q = -0.5 * (b + (b >= 0 ? sq : -sq));
            r1 = q / a;
            r2 = (q != 0.0) ? c / q : kInf;
          }
          blk = kInf;
          if (r1 > 0.0) blk = std::min(blk, r1);
          if (r2 > 0.0) blk = std::min(blk, r2);
        }
      }
      if (dd[0] < 0.0) blk = std::min(blk, -uu[0] / dd[0]);
      alpha = std::min(alpha, blk);
    }
  }
  return alpha;
}

// Jordan product u o v
void jordan_prod(const ConeLayout& L, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                 Eigen::VectorXd& out) {
  out.resize(L.rows);
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    const int s0 = L.start[i], sz = L.blocks[i].size;
    if (L.blocks[i].kind == ConeKind::nonnegative) {
      out.segment(s0, sz) = u.segment(s0, sz).cwiseProduct(v.segment(s0, sz));
    } else {
      auto uu = u.segment(s0, sz);
      auto vv = v.segment(s0, sz);
      out[s0] = uu.dot(vv);
      out.segment(s0 + 1, sz - 1) = uu[0] * vv.tail(sz - 1) + vv[0] * uu.tail(sz - 1);
    }
  }
}

// Jordan division x = lambda \ w  (solve lambda o x = w)
void jordan_div(const ConeLayout& L, const Eigen::VectorXd& lam, const Eigen::VectorXd& w,
                Eigen::VectorXd& out) {
  out.resize(L.rows);
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    const int s0 = L.start[i], sz = L.blocks[i].size;
    if (L.blocks[i].kind == ConeKind::nonnegative) {
      out.segment(s0, sz) = w.segment(s0, sz).cwiseQuotient(lam.segment(s0, sz));
    } else {
      auto l = lam.segment(s0, sz);
      auto ww = w.segment(s0, sz);
      const double det = l[0] * l[0] - l.tail(sz - 1).squaredNorm();
      const double x0 = (l[0] * ww[0] - l.tail(sz - 1).dot(ww.tail(sz - 1))) / det;
      out[s0] = x0;
      out.segment(s0 + 1, sz - 1) = (ww.tail(sz - 1) - x0 * l.tail(sz - 1)) / l[0];
    }
  }
}

// Nesterov-Todd scaling state per cone block
struct Scaling {
  // nonneg: w_i = sqrt(s_i / z_i)
  Eigen::VectorXd w_diag;
  // soc blocks: eta and normalized point wbar per block
  std::vector<double> eta;
  std::vector<Eigen::VectorXd> wbar;
};

void update_scaling(const ConeLayout& L, const Eigen::VectorXd& s, const Eigen::VectorXd& z,
                    Scaling& W, Eigen::VectorXd& lambda) {
  W.w_diag.resize(L.rows);
  W.eta.assign(L.blocks.size(), 1.0);
  W.wbar.assign(L.blocks.size(), Eigen::VectorXd());
  lambda.resize(L.rows);
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    const int s0 = L.start[i], sz = L.blocks[i].size;
    if (L.blocks[i].kind == ConeKind::nonnegative) {
      for (int k = 0; k < sz; ++k) {
        const double wi = std::sqrt(s[s0 + k] / z[s0 + k]);
        W.w_diag[s0 + k] = wi;
        lambda[s0 + k] = std::sqrt(s[s0 + k] * z[s0 + k]);
      }
    } else {
      auto ss = s.segment(s0, sz);
      auto zz = z.segment(s0, sz);
      const double rs = soc_res(ss), rz = soc_res(zz);
      const double sn = std::sqrt(rs), zn = std::sqrt(rz);
      Eigen::VectorXd sb = ss / sn, zb = zz / zn;
      const double gamma = std::sqrt((1.0 + sb.dot(zb)) / 2.0);
      Eigen::VectorXd wb(sz);
      wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
      wb.tail(sz - 1) = (sb.tail(sz - 1) - zb.tail(sz - 1)) / (2.0 * gamma);
      W.eta[i] = std::sqrt(sn / zn);
      W.wbar[i] = wb;
      // lambda = W z (scaled point)
      const double a = wb[0];
      auto b = wb.tail(sz - 1);
      const double zb0 = zb[0];
      auto zb1 = zb.tail(sz - 1);
      Eigen::VectorXd lb(sz);
      lb[0] = a * zb0 + b.dot(zb1);
      lb.tail(sz - 1) = zb1 + (zb0 + b.dot(zb1) / (1.0 + a)) * b;
      lambda.segment(s0, sz) = std::sqrt(sn * zn) * lb;
    }
  }
}

// v -> W v  (or W^{-1} v with inverse=true); W symmetric
void apply_scaling(const ConeLayout& L, const Scaling& W, const Eigen::VectorXd& v, bool inverse,
                   Eigen::VectorXd& out) {
  out.resize(L.rows);
  for (size_t i = 0; i < L.blocks.size(); ++i) {
    const int s0 = L.start[i], sz = L.blocks[i].size;
    if (L.blocks[i].kind == ConeKind::nonnegative) {
      for (int k = 0; k < sz; ++k) {
        const double w = W.w_diag[s0 + k];
        out[s0 + k] = inverse ? v[s0 + k] / w : v[s0 + k] * w;
      }
    } else {
      const auto& wb = W.wbar[i];
      const double a = wb[0];
      auto b = wb.tail(sz - 1);
      auto vv = v.segment(s0, sz);
      const double bv = b.dot(vv.tail(sz - 1));
      Eigen::VectorXd r(sz);
      if (!inverse) {
        r[0] = a * vv[0] + bv;
        r.tail(sz - 1) = vv.tail(sz - 1) + (vv[0] + bv / (1.0 + a)) * b;
        r *= W.eta[i];
      } else {
        r[0] = a * vv[0] - bv;
        r.tail(sz - 1) = vv.tail(sz - 1) + (-vv[0] + bv / (1.0 + a)) * b;
        r /= W.eta[i];
      }
      out.segment(s0, sz) = r;
    }
  }
}

// Ruiz-style equilibration of the stacked [A; G]. Rows of an soc block share
// one scale so the cone is preserved.
struct Equilibration {
  Eigen::VectorXd col;     // variable scaling d: x = d .* x_scaled
  Eigen::VectorXd row_a;   // equality row scaling
  Eigen::VectorXd row_g;   // cone row scaling
  double cost_scale = 1.0;
};

Equilibration equilibrate(Eigen::SparseMatrix<double>& A, Eigen::SparseMatrix<double>& G,
                          Eigen::VectorXd& b, Eigen::VectorXd& h, Eigen::VectorXd& c,
                          const ConeLayout& L) {
  const int n = static_cast<int>(c.size());
  const int p = static_cast<int>(A.rows());
  const int m = static_cast<int>(G.rows());
  Equilibration E;
  E.col = Eigen::VectorXd::Ones(n);
  E.row_a = Eigen::VectorXd::Ones(p);
  E.row_g = Eigen::VectorXd::Ones(m);

  for (int pass = 0; pass < 3; ++pass) {
    Eigen::VectorXd cmax = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd ra = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd rg = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
        const double v = std::abs(it.value());
        cmax[it.col()] = std::max(cmax[it.col()], v);
        ra[it.row()] = std::max(ra[it.row()], v);
      }
    for (int k = 0; k < G.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(G, k); it; ++it) {
        const double v = std::abs(it.value());
        cmax[it.col()] = std::max(cmax[it.col()], v);
        rg[it.row()] = std::max(rg[it.row()], v);
      }
    // uniform scale within each soc block
    for (size_t i = 0; i < L.blocks.size(); ++i) {
      if (L.blocks[i].kind != ConeKind::second_order) continue;
      const int s0 = L.start[i], sz = L.blocks[i].size;
      double mx = 0.0;
      for (int k = 0; k < sz; ++k) mx = std::max(mx, rg[s0 + k]);
      for (int k = 0; k < sz; ++k) rg[s0 + k] = mx;
    }
    auto scale = [](double v) { return (v > 0.0) ? 1.0 / std::sqrt(v) : 1.0; };
    Eigen::VectorXd dc = cmax.unaryExpr(scale);
    Eigen::VectorXd da = ra.unaryExpr(scale);
    Eigen::VectorXd dg = rg.unaryExpr(scale);

    Eigen::SparseMatrix<double> at = da.asDiagonal() * A * dc.asDiagonal();
    A.swap(at);
    Eigen::SparseMatrix<double> gt = dg.asDiagonal() * G * dc.asDiagonal();
    G.swap(gt);
    b = b.cwiseProduct(da);
    h = h.cwiseProduct(dg);
    c = c.cwiseProduct(dc);
    E.col = E.col.cwiseProduct(dc);
    E.row_a = E.row_a.cwiseProduct(da);
    E.row_g = E.row_g.cwiseProduct(dg);
  }
  const double cn = inf_norm(c);
  if (cn > 0.0) {
    E.cost_scale = cn;
    c /= cn;
  }
  return E;
}

// KKT system assembly/factorization:
//   [ dI   A'   G'  ]
//   [ A   -dI   0   ]
//   [ G    0   -W'W - dI ]
class KktSolver {
 public:
  KktSolver(const Eigen::SparseMatrix<double>& A, const Eigen::SparseMatrix<double>& G,
            const ConeLayout& L)
      : A_(A), G_(G), L_(L), n_(static_cast<int>(A.cols())), p_(static_cast<int>(A.rows())),
        m_(static_cast<int>(G.rows())) {
    dim_ = n_ + p_ + m_;
  }

  bool factor(const Scaling& W, double delta) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(A_.nonZeros() * 2 + G_.nonZeros() * 2 + dim_ + m_ * 8);
    for (int i = 0; i < n_; ++i) t.emplace_back(i, i, delta);
    for (int i = 0; i < p_; ++i) t.emplace_back(n_ + i, n_ + i, -delta);
    for (int k = 0; k < A_.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it) {
        t.emplace_back(n_ + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        t.emplace_back(static_cast<int>(it.col()), n_ + static_cast<int>(it.row()), it.value());
      }
    for (int k = 0; k < G_.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(G_, k); it; ++it) {
        t.emplace_back(n_ + p_ + static_cast<int>(it.row()), static_cast<int>(it.col()),
                       it.value());
        t.emplace_back(static_cast<int>(it.col()), n_ + p_ + static_cast<int>(it.row()),
                       it.value());
      }
    // -W'W block
    for (size_t i = 0; i < L_.blocks.size(); ++i) {
      const int s0 = n_ + p_ + L_.start[i], sz = L_.blocks[i].size;
      if (L_.blocks[i].kind == ConeKind::nonnegative) {
        for (int k = 0; k < sz; ++k) {
          const double w = W.w_diag[L_.start[i] + k];
          t.emplace_back(s0 + k, s0 + k, -w * w - delta);
        }
      } else {
        const double e2 = W.eta[i] * W.eta[i];
        const auto& wb = W.wbar[i];
        // -eta^2 (2 wbar wbar' - J) = eta^2 J - 2 eta^2 wbar wbar'
        // always emit the full block so the factor pattern is stable
        for (int r = 0; r < sz; ++r) {
          for (int cidx = 0; cidx < sz; ++cidx) {
            double v = -2.0 * e2 * wb[r] * wb[cidx];
            if (r == cidx) v += (r == 0) ? e2 : -e2;
            if (r == cidx) v -= delta;
            t.emplace_back(s0 + r, s0 + cidx, v);
          }
        }
      }
    }
    K_.resize(dim_, dim_);
    K_.setFromTriplets(t.begin(), t.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(K_);
      analyzed_ = true;
    }
    ldlt_.factorize(K_);
    return ldlt_.info() == Eigen::Success;
  }

  // solve with iterative refinement against the unregularized system
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, const Scaling& W) const {
    Eigen::VectorXd x = ldlt_.solve(rhs);
    for (int it = 0; it < 2; ++it) {
      Eigen::VectorXd r = rhs - multiply_unreg(x, W);
      x += ldlt_.solve(r);
    }
    return x;
  }

  int n() const { return n_; }
  int p() const { return p_; }
  int m() const { return m_; }

 private:
  Eigen::VectorXd multiply_unreg(const Eigen::VectorXd& u, const Scaling& W) const {
    Eigen::VectorXd ux = u.head(n_), uy = u.segment(n_, p_), uz = u.tail(m_);
    Eigen::VectorXd rx = A_.transpose() * uy + G_.transpose() * uz;
    Eigen::VectorXd ry = A_ * ux;
    Eigen::VectorXd wz, wwz;
    apply_scaling(L_, W, uz, false, wz);
    apply_scaling(L_, W, wz, false, wwz);
    Eigen::VectorXd rz = G_ * ux - wwz;
    Eigen::VectorXd out(dim_);
    out << rx, ry, rz;
    return out;
  }

  const Eigen::SparseMatrix<double>& A_;
  const Eigen::SparseMatrix<double>& G_;
  ConeLayout L_;
  int n_, p_, m_, dim_ = 0;
  Eigen::SparseMatrix<double> K_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool analyzed_ = false;
};

struct Iterate {
  Eigen::VectorXd x, y, z, s;
  double tau = 1.0, kappa = 1.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// the embedded homogeneous self-dual interior-point method

namespace {

ConicSolution solve_once(const ConicProgram& prog_in, const SolveOptions& opt,
                         double delta0, double init_inflate) {
  ConicProgram prog = canonicalize(prog_in);
  if (prog.cone_rows() == 0)
    throw IllFormedProgram("program needs at least one cone row (add bounds or inequalities)");

  Eigen::SparseMatrix<double> A = prog.eq_a;
  Eigen::SparseMatrix<double> G = prog.cone_g;
  Eigen::VectorXd b = prog.eq_b;
  Eigen::VectorXd h = prog.cone_h;
  Eigen::VectorXd c = prog.objective;
  ConeLayout L(prog.cones);
  const int n = prog.n_vars;
  const int p = prog.eq_rows();
  const int m = prog.cone_rows();

  Equilibration E = equilibrate(A, G, b, h, c, L);

  const double bnorm = std::max(1.0, inf_norm(b));
  const double hnorm = std::max(1.0, inf_norm(h));
  const double cnorm = std::max(1.0, inf_norm(c));

  KktSolver kkt(A, G, L);
  Scaling W;
  Eigen::VectorXd lambda;
  const Eigen::VectorXd e = cone_unit(L);

  ConicSolution sol;
  sol.status = SolveStatus::numerical;

  // identity scaling for initialization
  W.w_diag = Eigen::VectorXd::Ones(m);
  W.eta.assign(L.blocks.size(), 1.0);
  W.wbar.assign(L.blocks.size(), Eigen::VectorXd());
  for (size_t i = 0; i < L.blocks.size(); ++i)
    if (L.blocks[i].kind == ConeKind::second_order) {
      W.wbar[i] = Eigen::VectorXd::Zero(L.blocks[i].size);
      W.wbar[i][0] = 1.0;
    }

  double delta = delta0;
  if (!kkt.factor(W, delta)) {
    for (int tr = 0; tr < 4 && !kkt.factor(W, delta *= 100); ++tr) {
    }
  }

  Iterate it;
  {
    Eigen::VectorXd rhs(n + p + m);
    rhs.setZero();
    rhs.segment(n, p) = b;
    rhs.tail(m) = h;
    Eigen::VectorXd u = kkt.solve(rhs, W);
    it.x = u.head(n);
    Eigen::VectorXd st = -u.tail(m);
    const double alpha_p = -cone_margin_impl(L, st);
    it.s = (alpha_p < 0.0) ? st : (st + (init_inflate + alpha_p) * e);

    rhs.setZero();
    rhs.head(n) = -c;
    u = kkt.solve(rhs, W);
    it.y = u.segment(n, p);
    Eigen::VectorXd zt = u.tail(m);
    const double alpha_d = -cone_margin_impl(L, zt);
    it.z = (alpha_d < 0.0) ? zt : (zt + (init_inflate + alpha_d) * e);
  }
  it.tau = 1.0;
  it.kappa = 1.0;

  const int nu = L.degree + 1;
  double best_pres = kInf;

  auto residual_norms = [&](const Iterate& q, double& pres, double& dres, double& gap,
                            double& pcost, double& dcost) {
    Eigen::VectorXd rx = A.transpose() * q.y + G.transpose() * q.z + c * q.tau;
    Eigen::VectorXd ry = A * q.x - b * q.tau;
    Eigen::VectorXd rz = G * q.x + q.s - h * q.tau;
    pcost = c.dot(q.x) / q.tau;
    dcost = -(b.dot(q.y) + h.dot(q.z)) / q.tau;
    pres = std::max(inf_norm(ry) / (q.tau * bnorm), inf_norm(rz) / (q.tau * hnorm));
    dres = inf_norm(rx) / (q.tau * cnorm);
    gap = q.s.dot(q.z) / (q.tau * q.tau);
  };

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    sol.iterations = iter;

    double pres, dres, gap, pcost, dcost;
    residual_norms(it, pres, dres, gap, pcost, dcost);
    best_pres = std::min(best_pres, pres);
    if (opt.verbose)
      std::fprintf(stderr, "it %3d pres %9.2e dres %9.2e gap %9.2e tau %8.2e kap %8.2e\n", iter,
                   pres, dres, gap, it.tau, it.kappa);

    const double relgap = std::abs(pcost - dcost) / std::max({1.0, std::abs(pcost), std::abs(dcost)});
    if (pres <= opt.tol && dres <= opt.tol && (relgap <= opt.tol || gap <= opt.tol)) {
      sol.status = SolveStatus::optimal;
      sol.x_primal = it.x / it.tau;
      sol.y_dual = it.y / it.tau;
      sol.z_cone = it.z / it.tau;
      sol.s_slack = it.s / it.tau;
      break;
    }

    // infeasibility certificates (scaled space checks, verified later)
    const double by_hz = b.dot(it.y) + h.dot(it.z);
    if (by_hz < -1e-12) {
      Eigen::VectorXd ry_c = (A.transpose() * it.y + G.transpose() * it.z) / (-by_hz);
      if (inf_norm(ry_c) <= opt.tol * 0.1 ||
          (it.tau <= 1e-10 && inf_norm(ry_c) <= opt.tol)) {
        sol.status = SolveStatus::primal_infeasible;
        sol.y_dual = it.y / (-by_hz);
        sol.z_cone = it.z / (-by_hz);
        sol.x_primal = Eigen::VectorXd::Zero(n);
        sol.s_slack = Eigen::VectorXd::Zero(m);
        break;
      }
    }
    const double ctx = c.dot(it.x);
    if (ctx < -1e-12) {
      double vr = std::max(inf_norm(A * it.x) / (-ctx),
                           inf_norm(G * it.x + it.s) / (-ctx));
      if (vr <= opt.tol * 0.1 || (it.tau <= 1e-10 && vr <= opt.tol)) {
        sol.status = SolveStatus::dual_infeasible;
        sol.x_primal = it.x / (-ctx);
        sol.s_slack = it.s / (-ctx);
        sol.y_dual = Eigen::VectorXd::Zero(p);
        sol.z_cone = Eigen::VectorXd::Zero(m);
        break;
      }
    }

    update_scaling(L, it.s, it.z, W, lambda);
    delta = delta0;
    bool ok = kkt.factor(W, delta);
    while (!ok && delta < 1e-2) ok = kkt.factor(W, delta *= 100);
    if (!ok) {
      sol.status = SolveStatus::numerical;
      break;
    }

    const double mu = (it.s.dot(it.z) + it.tau * it.kappa) / nu;

    // cached solve for the tau elimination
    Eigen::VectorXd rhs1(n + p + m);
    rhs1.head(n) = -c;
    rhs1.segment(n, p) = b;
    rhs1.tail(m) = h;
    const Eigen::VectorXd u1 = kkt.solve(rhs1, W);
    const Eigen::VectorXd x1 = u1.head(n), y1 = u1.segment(n, p), z1 = u1.tail(m);

    // residuals of the homogeneous system
    Eigen::VectorXd rx = A.transpose() * it.y + G.transpose() * it.z + c * it.tau;
    Eigen::VectorXd ry = A * it.x - b * it.tau;
    Eigen::VectorXd rz = G * it.x + it.s - h * it.tau;
    const double rtau = it.kappa + c.dot(it.x) + b.dot(it.y) + h.dot(it.z);

    Eigen::VectorXd lam_lam;
    jordan_prod(L, lambda, lambda, lam_lam);

    auto direction = [&](double sigma, const Eigen::VectorXd* corr_cone, double corr_tk,
                         Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& dz,
                         Eigen::VectorXd& ds, double& dtau, double& dkappa) {
      Eigen::VectorXd d = -lam_lam;
      if (corr_cone) d -= *corr_cone;
      d += sigma * mu * e;
      Eigen::VectorXd dst;  // = W dz + W^{-1} ds target
      jordan_div(L, lambda, d, dst);
      Eigen::VectorXd w_dst;
      apply_scaling(L, W, dst, false, w_dst);

      const double f = 1.0 - sigma;
      Eigen::VectorXd rhs2(n + p + m);
      rhs2.head(n) = -f * rx;
      rhs2.segment(n, p) = -f * ry;
      rhs2.tail(m) = -f * rz - w_dst;
      const Eigen::VectorXd u2 = kkt.solve(rhs2, W);
      const Eigen::VectorXd x2 = u2.head(n), y2 = u2.segment(n, p), z2 = u2.tail(m);

      const double rhs_tk = (-it.tau * it.kappa - corr_tk + sigma * mu) / it.tau;
      const double denom = -it.kappa / it.tau + c.dot(x1) + b.dot(y1) + h.dot(z1);
      dtau = (-f * rtau - rhs_tk - (c.dot(x2) + b.dot(y2) + h.dot(z2))) / denom;
      dx = x2 + dtau * x1;
      dy = y2 + dtau * y1;
      dz = z2 + dtau * z1;
      // ds = W (dst - W dz)
      Eigen::VectorXd wdz;
      apply_scaling(L, W, dz, false, wdz);
      Eigen::VectorXd tmp = dst - wdz;
      apply_scaling(L, W, tmp, false, ds);
      dkappa = rhs_tk - (it.kappa / it.tau) * dtau;
    };

    // predictor
    Eigen::VectorXd dx_a, dy_a, dz_a, ds_a;
    double dtau_a, dkap_a;
    direction(0.0, nullptr, 0.0, dx_a, dy_a, dz_a, ds_a, dtau_a, dkap_a);

    auto step_limit = [&](const Eigen::VectorXd& ds, const Eigen::VectorXd& dz, double dtau,
                          double dkap) {
      double a = std::min(max_step(L, it.s, ds), max_step(L, it.z, dz));
      if (dtau < 0.0) a = std::min(a, -it.tau / dtau);
      if (dkap < 0.0) a = std::min(a, -it.kappa / dkap);
      return std::min(a, 10.0);
    };

    const double alpha_aff = std::min(1.0, step_limit(ds_a, dz_a, dtau_a, dkap_a));
    const double rho =
        ((it.s + alpha_aff * ds_a).dot(it.z + alpha_aff * dz_a) +
         (it.tau + alpha_aff * dtau_a) * (it.kappa + alpha_aff * dkap_a)) /
        (it.s.dot(it.z) + it.tau * it.kappa);
    double sigma = std::pow(std::clamp(rho, 0.0, 1.0), 3.0);

    // corrector: (W^{-1} ds_a) o (W dz_a)
    Eigen::VectorXd wi_ds, w_dz, corr;
    apply_scaling(L, W, ds_a, true, wi_ds);
    apply_scaling(L, W, dz_a, false, w_dz);
    jordan_prod(L, wi_ds, w_dz, corr);

    Eigen::VectorXd dx, dy, dz, ds;
    double dtau, dkap;
    direction(sigma, &corr, dtau_a * dkap_a, dx, dy, dz, ds, dtau, dkap);

    double alpha = 0.99 * step_limit(ds, dz, dtau, dkap);
    alpha = std::min(alpha, 1.0);
    const bool dir_finite = dx.allFinite() && dy.allFinite() && dz.allFinite() &&
                            ds.allFinite() && finite(dtau) && finite(dkap);
    if (!dir_finite || !finite(alpha) || alpha <= 1e-14) {
      sol.status = SolveStatus::numerical;
      break;
    }

    // keep the iterate strictly inside the cone: the fraction-to-boundary
    // step can still graze it in floating point
    bool stepped = false;
    for (int bt = 0; bt < 40 && !stepped; ++bt) {
      Iterate cand = it;
      cand.x += alpha * dx;
      cand.y += alpha * dy;
      cand.z += alpha * dz;
      cand.s += alpha * ds;
      cand.tau += alpha * dtau;
      cand.kappa += alpha * dkap;
      if (cand.tau > 0.0 && cand.kappa > 0.0 && cand.s.allFinite() && cand.z.allFinite() &&
          cone_margin_impl(L, cand.s) > 0.0 && cone_margin_impl(L, cand.z) > 0.0) {
        it = cand;
        stepped = true;
      } else {
        alpha *= 0.7;
      }
    }
    if (!stepped) {
      sol.status = SolveStatus::numerical;
      break;
    }

    if (iter == opt.max_iter - 1) sol.status = SolveStatus::max_iter;
  }

  if (sol.status == SolveStatus::max_iter || sol.status == SolveStatus::numerical) {
    // report the normalized iterate anyway for diagnostics
    sol.x_primal = it.x / std::max(it.tau, 1e-300);
    sol.y_dual = it.y / std::max(it.tau, 1e-300);
    sol.z_cone = it.z / std::max(it.tau, 1e-300);
    sol.s_slack = it.s / std::max(it.tau, 1e-300);
  }

  // undo equilibration: x = Dc x', y = Da y', z = Dg z', s = Dg^{-1} s'
  if (sol.x_primal.size()) sol.x_primal = sol.x_primal.cwiseProduct(E.col);
  if (sol.y_dual.size()) sol.y_dual = sol.y_dual.cwiseProduct(E.row_a) * E.cost_scale;
  if (sol.z_cone.size()) sol.z_cone = sol.z_cone.cwiseProduct(E.row_g) * E.cost_scale;
  if (sol.s_slack.size()) sol.s_slack = sol.s_slack.cwiseQuotient(E.row_g);

  if (sol.status == SolveStatus::optimal) {
    sol.obj_value = prog.objective.dot(sol.x_primal);
    Residuals r = compute_residuals(prog_in, sol);
    sol.residuals = r;
  }
  return sol;
}

}  // namespace

ConicSolution solve(const ConicProgram& prog_in, const SolveOptions& opt) {
  ConicSolution sol = solve_once(prog_in, opt, 1e-8, 1.0);
  if (sol.status == SolveStatus::optimal || sol.status == SolveStatus::primal_infeasible ||
      sol.status == SolveStatus::dual_infeasible)
    return sol;
  // a stalled or ill-conditioned run: heavier regularization, fatter start
  ConicSolution retry = solve_once(prog_in, opt, 1e-7, 10.0);
  if (retry.status == SolveStatus::optimal || retry.status == SolveStatus::primal_infeasible ||
      retry.status == SolveStatus::dual_infeasible)
    return retry;
  return sol;
}

// ---------------------------------------------------------------------------
// verification helpers (independent of solver internals)

double cone_margin(const ConicProgram& p, const Eigen::VectorXd& s) {
  ConeLayout L(p.cones);
  return cone_margin_impl(L, s);
}

Residuals compute_residuals(const ConicProgram& p_in, const ConicSolution& sol) {
  ConicProgram p = canonicalize(p_in);
  Residuals r;
  const auto& x = sol.x_primal;
  if (p.eq_rows() > 0)
    r.primal = inf_norm(p.eq_a * x - p.eq_b) / std::max(1.0, inf_norm(p.eq_b));
  Eigen::VectorXd s = p.cone_h - p.cone_g * x;
  const double margin = cone_margin(p, s);
  r.primal = std::max(r.primal, std::max(0.0, -margin) / std::max(1.0, inf_norm(p.cone_h)));

  if (sol.y_dual.size() == p.eq_rows() && sol.z_cone.size() == p.cone_rows()) {
    Eigen::VectorXd rd = p.objective;
    if (p.eq_rows() > 0) rd += p.eq_a.transpose() * sol.y_dual;
    rd += p.cone_g.transpose() * sol.z_cone;
    r.dual = inf_norm(rd) / std::max(1.0, inf_norm(p.objective));
    const double pobj = p.objective.dot(x);
    const double dobj = -(p.eq_b.dot(sol.y_dual) + p.cone_h.dot(sol.z_cone));
    r.gap = std::abs(pobj - dobj) / std::max({1.0, std::abs(pobj), std::abs(dobj)});
  }
  return r;
}

double farkas_violation(const ConicProgram& p_in, const ConicSolution& sol) {
  ConicProgram p = canonicalize(p_in);
  Eigen::VectorXd y = sol.y_dual, z = sol.z_cone;
  const double v = -(p.eq_b.dot(y) + p.cone_h.dot(z));
  if (!(v > 0.0)) return kInf;
  y /= v;
  z /= v;
  Eigen::VectorXd rd = p.cone_g.transpose() * z;
  if (p.eq_rows() > 0) rd += p.eq_a.transpose() * y;
  double viol = inf_norm(rd);
  viol = std::max(viol, -std::min(0.0, cone_margin(p, z)));
  return viol;
}

}  // namespace forge::socp
