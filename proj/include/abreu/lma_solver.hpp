#pragma once

// Linear Dirichlet problem U^{ij} D_ij w + b.Dw = f.
//
// Where U11, U22 >= |U12| the second-order part uses the sign-adapted
// nine-point stencil (the cross term is carried by the diagonal pair whose
// sign matches U12), which is an M-matrix and exact on quadratics. Elsewhere,
// or with fallback "off", the centered cross stencil is used.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "abreu/calculus.hpp"
#include "abreu/error.hpp"
#include "abreu/grid.hpp"
#include "abreu/linear_system.hpp"

namespace abreu {

enum class LmaFallback { automatic, off };

inline LmaFallback parse_lma_fallback(const std::string& s) {
  if (s == "auto") return LmaFallback::automatic;
  if (s == "off") return LmaFallback::off;
  throw ConfigError("lma.fallback must be \"auto\" or \"off\", got \"" + s + "\"");
}

struct LmaOptions {
  double tol = 1e-8;
  LmaFallback fallback = LmaFallback::automatic;
};

struct LmaSolution {
  ScalarField w;
  double residual = 0;  // max nodal residual / (|f|_inf + 1)
  Index centered_nodes = 0;  // nodes without a monotone stencil
};

namespace detail {

/// Weights of the second-order part at one node: entry [dj+1][di+1] is
/// the coefficient of w(i+di, j+dj) times h^2.
inline std::array<std::array<double, 3>, 3> lma_weights(const Sym2& U, LmaFallback fb, bool& monotone) {
  std::array<std::array<double, 3>, 3> w{};
  monotone = fb == LmaFallback::automatic && U.a >= std::abs(U.b) && U.c >= std::abs(U.b);
  if (monotone) {
    const double ax = U.a - std::abs(U.b), ay = U.c - std::abs(U.b), d = std::abs(U.b);
    w[1][0] += ax;
    w[1][2] += ax;
    w[0][1] += ay;
    w[2][1] += ay;
    if (U.b >= 0) {
      w[2][2] += d;
      w[0][0] += d;
    } else {
      w[2][0] += d;
      w[0][2] += d;
    }
    w[1][1] -= 2 * (ax + ay + d);
    return w;
  }
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) w[dj + 1][di + 1] = U.contract(HessianStencil::weights(di, dj));
  return w;
}

} // namespace detail

/// Nodewise U:D^2 w + b.Dw - f on inside nodes, using the solver's stencil.
inline ScalarField lma_residual(const MatrixField& U, const ScalarField& w, const ScalarField& f,
                                const VectorField* drift = nullptr, LmaFallback fb = LmaFallback::automatic) {
  const Grid& g = w.grid();
  const double ih2 = 1.0 / g.cell_area();
  ScalarField r(w.grid_ptr());
  for (Index k : g.inside_nodes()) {
    bool mono = false;
    const auto W = detail::lma_weights(U[k], fb, mono);
    double s = 0;
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di) s += W[dj + 1][di + 1] * w[g.neighbor(k, di, dj)];
    s *= ih2;
    if (drift) s += (*drift)[k].dot(gradient_at(w, k));
    r[k] = s - f[k];
  }
  return r;
}

inline LmaSolution solve_lma_detailed(const MatrixField& U, const ScalarField& f, const RealFn& psi,
                                      const VectorField* drift = nullptr, const LmaOptions& opt = {}) {
  const Grid& g = f.grid();
  const ActiveNumbering num(g);
  const double h = g.spacing();
  const double ih2 = 1.0 / g.cell_area();
  std::vector<Triplet> t;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(num.size());
  LmaSolution out;
  for (Index k : g.inside_nodes()) {
    const Sym2& Uk = U[k];
    if (!(Uk.min_eigenvalue() >= 1e-12)) throw LinearSolveFailure("coefficient matrix is not positive definite at a node");
    bool mono = false;
    const auto W = detail::lma_weights(Uk, opt.fallback, mono);
    if (!mono) ++out.centered_nodes;
    const Index r = num(k);
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di)
        if (W[dj + 1][di + 1] != 0) t.emplace_back(r, num(g.neighbor(k, di, dj)), W[dj + 1][di + 1] * ih2);
    if (drift) {
      const Vec2& b = (*drift)[k];
      t.emplace_back(r, num(g.neighbor(k, 1, 0)), b.x() / (2 * h));
      t.emplace_back(r, num(g.neighbor(k, -1, 0)), -b.x() / (2 * h));
      t.emplace_back(r, num(g.neighbor(k, 0, 1)), b.y() / (2 * h));
      t.emplace_back(r, num(g.neighbor(k, 0, -1)), -b.y() / (2 * h));
    }
    rhs[r] = f[k];
  }
  add_link_rows(g, num, t);
  for (const auto& l : g.links()) rhs[num(l.ghost)] = psi(l.foot);
  SparseMatrix A(num.size(), num.size());
  A.setFromTriplets(t.begin(), t.end());
  out.w = ScalarField(f.grid_ptr());
  num.scatter(sparse_solve(A, rhs), out.w);

  const ScalarField r = lma_residual(U, out.w, f, drift, opt.fallback);
  out.residual = r.sup_inside() / (f.sup_inside() + 1.0);
  if (!(out.residual <= opt.tol))
    throw LinearSolveFailure("linearized Monge-Ampere residual " + std::to_string(out.residual) +
                             " exceeds tolerance");
  return out;
}

inline ScalarField solve_lma(const MatrixField& U, const ScalarField& f, const RealFn& psi,
                             const VectorField* drift = nullptr, const LmaOptions& opt = {}) {
  return solve_lma_detailed(U, f, psi, drift, opt).w;
}

struct MaximumPrincipleCheck {
  bool holds = true;
  double interior_extreme = 0;
  double boundary_extreme = 0;
};

/// For f >= 0 the interior maximum may not exceed the boundary maximum; for
/// f <= 0 the interior minimum may not undercut the boundary minimum.
/// Boundary values are the link traces.
inline MaximumPrincipleCheck check_maximum_principle(const ScalarField& w, const ScalarField& f, double tol) {
  const Grid& g = w.grid();
  bool nonneg = true, nonpos = true;
  for (Index k : g.inside_nodes()) {
    nonneg = nonneg && f[k] >= 0;
    nonpos = nonpos && f[k] <= 0;
  }
  MaximumPrincipleCheck c;
  if (!nonneg && !nonpos) return c;
  const double sgn = nonneg ? 1.0 : -1.0;
  double in = -std::numeric_limits<double>::infinity(), bd = -std::numeric_limits<double>::infinity();
  for (Index k : g.inside_nodes()) in = std::max(in, sgn * w[k]);
  for (const auto& l : g.links()) bd = std::max(bd, sgn * w.trace(l));
  c.interior_extreme = sgn * in;
  c.boundary_extreme = sgn * bd;
  c.holds = in <= bd + tol;
  return c;
}

} // namespace abreu
