#pragma once

// Direct minimization of the F-integral over fields that are pinned to phi
// outside the inner domain and have positive semidefinite nine-point
// Hessians at every inside node.
//
// A nodal Hessian [[a, b], [b, c]] is PSD iff (a + c, a - c, 2b) lies in the
// second-order cone, which is affine in the free node values. Both the
// constrained minimization and the Euclidean projection are solved by a
// primal log-barrier path-following method with sparse Newton steps.

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "abreu/calculus.hpp"
#include "abreu/error.hpp"
#include "abreu/functional.hpp"
#include "abreu/grid.hpp"
#include "abreu/lagrangian.hpp"
#include "abreu/linear_system.hpp"

namespace abreu {

/// Nodal PSD constraints at inside nodes, as affine second-order cones
/// s = P x + q in the free node values x.
class NodalConvexityConstraints {
public:
  struct Cone {
    Index node = -1;
    std::vector<Index> vars;
    Eigen::Matrix<double, 3, Eigen::Dynamic> P;
    Eigen::Vector3d q;
  };

  /// `fixed` supplies the values of non-free active nodes.
  NodalConvexityConstraints(const ScalarField& fixed, const std::vector<char>& free_mask)
      : free_of_node_(fixed.grid().size(), -1) {
    const Grid& g = fixed.grid();
    for (Index k = 0; k < g.size(); ++k)
      if (free_mask[k] && g.active(k)) {
        free_of_node_[k] = static_cast<Index>(free_nodes_.size());
        free_nodes_.push_back(k);
      }
    const double ih2 = 1.0 / g.cell_area();
    for (Index k : g.inside_nodes()) {
      Cone c;
      c.node = k;
      Eigen::Vector3d m0 = Eigen::Vector3d::Zero();
      std::vector<Eigen::Vector3d> cols;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const Sym2 w = HessianStencil::weights(di, dj);
          if (w.a == 0 && w.b == 0 && w.c == 0) continue;
          const Index m = g.neighbor(k, di, dj);
          const Eigen::Vector3d s((w.a + w.c) * ih2, (w.a - w.c) * ih2, 2 * w.b * ih2);
          if (free_of_node_[m] >= 0) {
            c.vars.push_back(free_of_node_[m]);
            cols.push_back(s);
          } else {
            m0 += s * fixed[m];
          }
        }
      if (c.vars.empty()) continue;
      c.P.resize(3, static_cast<Eigen::Index>(cols.size()));
      for (std::size_t i = 0; i < cols.size(); ++i) c.P.col(static_cast<Eigen::Index>(i)) = cols[i];
      c.q = m0;
      cones_.push_back(std::move(c));
    }
  }

  Index free_count() const { return static_cast<Index>(free_nodes_.size()); }
  const std::vector<Index>& free_nodes() const { return free_nodes_; }
  const std::vector<Cone>& cones() const { return cones_; }

  Eigen::Vector3d slack(const Cone& c, const Eigen::VectorXd& x) const {
    Eigen::Vector3d s = c.q;
    for (std::size_t j = 0; j < c.vars.size(); ++j) s += c.P.col(static_cast<Eigen::Index>(j)) * x[c.vars[j]];
    return s;
  }

  /// max(0, |z| - t) over all cones, in Hessian units.
  double violation(const Eigen::VectorXd& x) const {
    double v = 0;
    for (const Cone& c : cones_) {
      const Eigen::Vector3d s = slack(c, x);
      v = std::max(v, std::hypot(s[1], s[2]) - s[0]);
    }
    return v;
  }

  bool strictly_feasible(const Eigen::VectorXd& x) const {
    for (const Cone& c : cones_) {
      const Eigen::Vector3d s = slack(c, x);
      if (!(s[0] > std::hypot(s[1], s[2]))) return false;
    }
    return true;
  }

  /// Fraction of cones whose Hessian has a (relatively) vanishing eigenvalue.
  double active_fraction(const Eigen::VectorXd& x, double rel_tol = 1e-6) const {
    if (cones_.empty()) return 0;
    std::size_t n = 0;
    for (const Cone& c : cones_) {
      const Eigen::Vector3d s = slack(c, x);
      if (s[0] - std::hypot(s[1], s[2]) <= rel_tol * std::max(1.0, s[0])) ++n;
    }
    return static_cast<double>(n) / cones_.size();
  }

  Eigen::VectorXd gather_field(const ScalarField& f) const {
    Eigen::VectorXd x(free_count());
    for (Index i = 0; i < free_count(); ++i) x[i] = f[free_nodes_[i]];
    return x;
  }
  void scatter_field(const Eigen::VectorXd& x, ScalarField& f) const {
    for (Index i = 0; i < free_count(); ++i) f[free_nodes_[i]] = x[i];
  }

private:
  std::vector<Index> free_of_node_;
  std::vector<Index> free_nodes_;
  std::vector<Cone> cones_;
};

/// Convex objective in the free values with gradient and sparse Hessian.
struct SmoothObjective {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::function<void(const Eigen::VectorXd&, std::vector<Triplet>&)> hessian;
};

struct BarrierOptions {
  double gap_tol = 1e-12;  // stop when cones * 2 / tau drops below this
  double tau0 = 1.0;
  double growth = 8.0;
  int max_newton = 2000;
  /// Optional early exit, checked after each centering.
  std::function<bool(const Eigen::VectorXd&, double gap)> stop;
};

struct BarrierOutcome {
  Eigen::VectorXd x;
  int newton_steps = 0;
  double gap = 0;
};

namespace detail {

/// min tau f(x) - sum log(t^2 - |z|^2) for increasing tau, starting from a
/// strictly feasible x0. `extra` optionally appends one column per cone (used
/// by the feasibility phase).
inline BarrierOutcome barrier_path(const SmoothObjective& f, const NodalConvexityConstraints& C, Eigen::VectorXd x,
                                   const BarrierOptions& opt, const Eigen::Vector3d* extra = nullptr) {
  const Index n = x.size();
  const Index nc = static_cast<Index>(C.cones().size());
  const Index xdim = C.free_count();
  auto slack = [&](const NodalConvexityConstraints::Cone& c, const Eigen::VectorXd& v) {
    Eigen::Vector3d s = C.slack(c, v.head(xdim));
    if (extra) s += *extra * v[xdim];
    return s;
  };
  auto feasible = [&](const Eigen::VectorXd& v) {
    for (const auto& c : C.cones()) {
      const Eigen::Vector3d s = slack(c, v);
      if (!(s[0] > std::hypot(s[1], s[2]))) return false;
    }
    return true;
  };
  auto merit = [&](const Eigen::VectorXd& v, double tau) {
    double m = tau * f.value(v);
    for (const auto& c : C.cones()) {
      const Eigen::Vector3d s = slack(c, v);
      m -= std::log(s[0] * s[0] - s[1] * s[1] - s[2] * s[2]);
    }
    return m;
  };

  BarrierOutcome out;
  double tau = opt.tau0;
  const double nu = 2.0 * std::max<Index>(nc, 1);
  for (;;) {
    // centering
    double prev_dec = std::numeric_limits<double>::infinity();
    for (int inner = 0; inner < 50; ++inner) {
      if (out.newton_steps >= opt.max_newton) throw NonConvergence("barrier method exceeded its Newton budget", nu / tau);
      ++out.newton_steps;
      Eigen::VectorXd grad = tau * f.gradient(x);
      std::vector<Triplet> t;
      f.hessian(x, t);
      for (auto& e : t) e = Triplet(e.row(), e.col(), tau * e.value());
      for (const auto& c : C.cones()) {
        const Eigen::Vector3d s = slack(c, x);
        const Eigen::Vector3d Js(s[0], -s[1], -s[2]);
        const double D = s.dot(Js);
        const Eigen::Vector3d gs = -2.0 / D * Js;
        Eigen::Matrix3d Hs = 4.0 / (D * D) * Js * Js.transpose();
        Hs(0, 0) -= 2.0 / D;
        Hs(1, 1) += 2.0 / D;
        Hs(2, 2) += 2.0 / D;
        const Index m = static_cast<Index>(c.vars.size()) + (extra ? 1 : 0);
        Eigen::Matrix<double, 3, Eigen::Dynamic> P(3, m);
        P.leftCols(static_cast<Eigen::Index>(c.vars.size())) = c.P;
        std::vector<Index> idx = c.vars;
        if (extra) {
          P.col(m - 1) = *extra;
          idx.push_back(xdim);
        }
        const Eigen::VectorXd gl = P.transpose() * gs;
        const Eigen::MatrixXd Hl = P.transpose() * Hs * P;
        for (Index a = 0; a < m; ++a) {
          grad[idx[a]] += gl[a];
          for (Index b = 0; b < m; ++b) t.emplace_back(idx[a], idx[b], Hl(a, b));
        }
      }
      SparseMatrix H(n, n);
      H.setFromTriplets(t.begin(), t.end());
      Eigen::SimplicialLDLT<SparseMatrix> ldlt(H);
      Eigen::VectorXd dx;
      if (ldlt.info() == Eigen::Success) dx = ldlt.solve(-grad);
      if (ldlt.info() != Eigen::Success || !dx.allFinite()) {
        SparseMatrix Hr = H;
        for (Index i = 0; i < n; ++i) Hr.coeffRef(i, i) += 1e-12 * (1.0 + std::abs(H.coeff(i, i)));
        dx = sparse_solve(Hr, -grad);
      }
      const double dec2 = -grad.dot(dx);
      // stop at the rounding floor of the Newton decrement
      if (dec2 / 2 <= 1e-10 || (dec2 < 1e-4 && dec2 > 0.5 * prev_dec)) break;
      prev_dec = dec2;
      double alpha = 1.0;
      while (alpha > 1e-14 && !feasible(x + alpha * dx)) alpha *= 0.5;
      if (alpha <= 1e-14) break;
      // inside the quadratic region full steps are safe; the merit value
      // is too large there for a reliable sufficient-decrease test
      if (dec2 > 0.1) {
        const double m0 = merit(x, tau);
        while (alpha > 1e-14 && merit(x + alpha * dx, tau) > m0 - 0.25 * alpha * dec2) alpha *= 0.5;
        if (alpha <= 1e-14) break;
      }
      x += alpha * dx;
      if (alpha == 1.0 && dec2 / 2 <= 1e-8) break;
    }
    out.gap = nu / tau;
    if (opt.stop && opt.stop(x, out.gap)) break;
    if (out.gap <= opt.gap_tol) break;
    tau *= opt.growth;
  }
  out.x = x;
  return out;
}

/// Strictly feasible point near x0, or throws Error when none exists.
inline Eigen::VectorXd find_interior_point(const NodalConvexityConstraints& C, const Eigen::VectorXd& x0) {
  if (C.strictly_feasible(x0)) return x0;
  const Index n = C.free_count();
  // minimise t subject to s(x) + t e0 in the cone
  double t0 = 0;
  for (const auto& c : C.cones()) {
    const Eigen::Vector3d s = C.slack(c, x0);
    t0 = std::max(t0, std::hypot(s[1], s[2]) - s[0]);
  }
  Eigen::VectorXd v(n + 1);
  v.head(n) = x0;
  v[n] = 2 * t0 + 1;
  const double scale = 1e-9 * (t0 + 1);
  SmoothObjective lin;
  lin.value = [n](const Eigen::VectorXd& z) { return z[n]; };
  lin.gradient = [n](const Eigen::VectorXd& z) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
    g[n] = 1;
    return g;
  };
  // small proximal term keeps the Newton system definite
  const double prox = 1e-8;
  lin.value = [n, x0, prox](const Eigen::VectorXd& z) { return z[n] + 0.5 * prox * (z.head(n) - x0).squaredNorm(); };
  lin.gradient = [n, x0, prox](const Eigen::VectorXd& z) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
    g.head(n) = prox * (z.head(n) - x0);
    g[n] = 1;
    return g;
  };
  lin.hessian = [n, prox](const Eigen::VectorXd&, std::vector<Triplet>& t) {
    for (Index i = 0; i < n; ++i) t.emplace_back(i, i, prox);
  };
  BarrierOptions opt;
  opt.gap_tol = 1e-14;
  opt.stop = [n, scale](const Eigen::VectorXd& z, double) { return z[n] < -scale; };
  const Eigen::Vector3d e0(1, 0, 0);
  const BarrierOutcome r = barrier_path(lin, C, v, opt, &e0);
  if (!(r.x[n] < 0)) throw Error("no convex field is compatible with the fixed values");
  return r.x.head(n);
}

} // namespace detail

/// Euclidean projection of y onto the constraint set.
inline Eigen::VectorXd project_onto(const NodalConvexityConstraints& C, const Eigen::VectorXd& y,
                                    double gap_tol = 1e-12) {
  if (C.violation(y) <= 0) return y;
  const Index n = C.free_count();
  SmoothObjective q;
  q.value = [y](const Eigen::VectorXd& x) { return 0.5 * (x - y).squaredNorm(); };
  q.gradient = [y](const Eigen::VectorXd& x) { return Eigen::VectorXd(x - y); };
  q.hessian = [n](const Eigen::VectorXd&, std::vector<Triplet>& t) {
    for (Index i = 0; i < n; ++i) t.emplace_back(i, i, 1.0);
  };
  BarrierOptions opt;
  opt.gap_tol = gap_tol;
  return detail::barrier_path(q, C, detail::find_interior_point(C, y), opt).x;
}

/// Nearest field (Euclidean over the free nodes) with positive semidefinite
/// Hessians at all inside nodes; other nodes keep their values. By default
/// every inside node is free.
inline ScalarField project_to_convex(const ScalarField& v, const std::vector<char>* free_mask = nullptr) {
  const Grid& g = v.grid();
  std::vector<char> mask(g.size(), 0);
  if (free_mask) mask = *free_mask;
  else
    for (Index k : g.inside_nodes()) mask[k] = 1;
  const NodalConvexityConstraints C(v, mask);
  ScalarField out = v;
  C.scatter_field(project_onto(C, C.gather_field(v)), out);
  return out;
}

struct OracleOptions {
  double tol = 1e-6;  // projected-gradient stationarity
  int max_iter = 2000; // Newton steps of the barrier method
};

struct OracleResult {
  ScalarField u_star;
  double objective = 0;
  double kkt_violation = 0;
  double active_constraint_fraction = 0;
  int iterations = 0;
  double lipschitz = 0;        // max |Du*| over inner nodes
  double lipschitz_bound = 0;  // max |D phi| over inside nodes
  bool lipschitz_ok = true;    // lipschitz <= 1.1 lipschitz_bound
  ConvexityCertificate certificate;
};

/// phi on inside nodes, ghosts set by the link extrapolation of phi.
inline ScalarField pinned_boundary_field(const GridPtr& grid, const RealFn& phi) {
  ScalarField f = sample(grid, phi);
  impose_boundary(f, phi);
  return f;
}

/// max |x - P(x - grad)| for the unit-step projected gradient.
inline double projected_gradient_stationarity(const NodalConvexityConstraints& C, const Eigen::VectorXd& x,
                                              const Eigen::VectorXd& grad) {
  return (x - project_onto(C, x - grad)).cwiseAbs().maxCoeff();
}

inline OracleResult solve_constrained(const Lagrangian& L, const RealFn& phi, const GridPtr& grid,
                                      const OracleOptions& opt = {}) {
  const Grid& g = *grid;
  ScalarField u = pinned_boundary_field(grid, phi);
  std::vector<char> mask(g.size(), 0);
  for (Index k : g.inner_nodes()) mask[k] = 1;
  const NodalConvexityConstraints C(u, mask);
  const std::vector<QuadTriangle> tris = inner_quadrature(g);
  const double ih2 = 1.0 / g.cell_area();
  std::vector<Index> free_of(g.size(), -1);
  for (Index i = 0; i < C.free_count(); ++i) free_of[C.free_nodes()[i]] = i;

  auto field = [&](const Eigen::VectorXd& x) {
    ScalarField f = u;
    C.scatter_field(x, f);
    return f;
  };
  // objective density: the quadrature divided by the cell area
  SmoothObjective F;
  F.value = [&](const Eigen::VectorXd& x) { return objective(field(x), L, tris) * ih2; };
  F.gradient = [&](const Eigen::VectorXd& x) {
    std::vector<double> full(g.size(), 0.0);
    objective_derivatives(field(x), L, tris, full, nullptr);
    Eigen::VectorXd out(C.free_count());
    for (Index i = 0; i < C.free_count(); ++i) out[i] = full[C.free_nodes()[i]] * ih2;
    return out;
  };
  F.hessian = [&](const Eigen::VectorXd& x, std::vector<Triplet>& t) {
    std::vector<Triplet> hess;
    std::vector<double> scratch(g.size(), 0.0);
    objective_derivatives(field(x), L, tris, scratch, &hess);
    for (const auto& e : hess)
      if (free_of[e.row()] >= 0 && free_of[e.col()] >= 0)
        t.emplace_back(free_of[e.row()], free_of[e.col()], e.value() * ih2);
  };

  BarrierOptions bopt;
  bopt.max_newton = opt.max_iter;
  bopt.gap_tol = 1e-10;
  double kv = std::numeric_limits<double>::infinity();
  bopt.stop = [&](const Eigen::VectorXd& x, double gap) {
    if (gap > 1e-6) return false;
    kv = projected_gradient_stationarity(C, x, F.gradient(x));
    return kv <= opt.tol;
  };
  OracleResult res;
  BarrierOutcome b;
  try {
    b = detail::barrier_path(F, C, detail::find_interior_point(C, C.gather_field(u)), bopt);
  } catch (const NonConvergence& e) {
    throw NonConvergence(std::string("constrained minimisation: ") + e.what(), kv);
  }
  C.scatter_field(b.x, u);
  res.u_star = u;
  res.objective = objective(u, L, tris);
  res.kkt_violation = kv;
  res.iterations = b.newton_steps;
  res.active_constraint_fraction = C.active_fraction(b.x);
  res.certificate = certify_convexity(u);
  if (!res.certificate.is_convex) throw LossOfConvexity("oracle output failed the convexity certificate");

  const ScalarField phif = sample(grid, phi);
  for (Index k : g.inside_nodes()) res.lipschitz_bound = std::max(res.lipschitz_bound, gradient_at(phif, k).norm());
  for (Index k : g.inner_nodes()) res.lipschitz = std::max(res.lipschitz, gradient_at(u, k).norm());
  res.lipschitz_ok = res.lipschitz <= 1.1 * res.lipschitz_bound;
  if (kv > opt.tol) throw NonConvergence("constrained minimisation did not reach stationarity", kv);
  return res;
}

} // namespace abreu
