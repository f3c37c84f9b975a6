#pragma once

// Dirichlet Monge-Ampere problem det D^2 u = g with the nine-point Hessian,
// solved by damped Newton on the cofactor linearization.

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

struct MaOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

struct MaSolution {
  ScalarField u;
  ConvexityCertificate certificate;
  double residual = 0;  // max |det D^2 u - g| / |g|_inf
  int iterations = 0;
};

/// Nodewise det D^2 u - g on inside nodes.
inline ScalarField ma_residual(const ScalarField& u, const ScalarField& g) {
  ScalarField r(u.grid_ptr());
  for (Index k : u.grid().inside_nodes()) r[k] = hessian_at(u, k).det() - g[k];
  return r;
}

/// Solution of the discrete Poisson problem Lap u = rhs with Dirichlet data.
inline ScalarField solve_poisson(const ScalarField& rhs, const RealFn& phi) {
  const Grid& g = rhs.grid();
  const ActiveNumbering num(g);
  const double ih2 = 1.0 / g.cell_area();
  std::vector<Triplet> t;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(num.size());
  for (Index k : g.inside_nodes()) {
    const Index r = num(k);
    t.emplace_back(r, r, -4 * ih2);
    for (int d = 0; d < 4; ++d) t.emplace_back(r, num(g.neighbor(k, Grid::kNeighbors[d][0], Grid::kNeighbors[d][1])), ih2);
    b[r] = rhs[k];
  }
  add_link_rows(g, num, t);
  for (const auto& l : g.links()) b[num(l.ghost)] = phi(l.foot);
  SparseMatrix A(num.size(), num.size());
  A.setFromTriplets(t.begin(), t.end());
  ScalarField u(rhs.grid_ptr());
  num.scatter(sparse_solve(A, b), u);
  return u;
}

namespace detail {

inline bool positive_definite_inside(const ScalarField& u) {
  for (Index k : u.grid().inside_nodes()) {
    const Sym2 H = hessian_at(u, k);
    if (!(H.a > 0 && H.det() > 0)) return false;
  }
  return true;
}

inline double ma_norm(const ScalarField& u, const ScalarField& g, const RealFn& phi) {
  double s = 0;
  for (Index k : u.grid().inside_nodes()) s = std::max(s, std::abs(hessian_at(u, k).det() - g[k]));
  for (const auto& l : u.grid().links()) s = std::max(s, std::abs(u.trace(l) - phi(l.foot)));
  return s;
}

} // namespace detail

/// Convex start: Lap u = 2 sqrt(g), raising the right-hand side until every
/// nodal Hessian is positive definite.
inline ScalarField ma_initial_guess(const ScalarField& g, const RealFn& phi) {
  ScalarField rhs(g.grid_ptr());
  double gmax = 0;
  for (Index k : g.grid().inside_nodes()) gmax = std::max(gmax, g[k]);
  for (double s : {0.0, 1.0, 4.0, 16.0, 64.0}) {
    for (Index k : g.grid().inside_nodes()) rhs[k] = 2 * std::sqrt(g[k] + s * gmax);
    ScalarField u = solve_poisson(rhs, phi);
    if (detail::positive_definite_inside(u)) return u;
  }
  throw LossOfConvexity("no convex initial guess for the Monge-Ampere solve");
}

inline MaSolution solve_dirichlet_ma_detailed(const ScalarField& g, const RealFn& phi, const MaOptions& opt = {},
                                              const ScalarField* initial_guess = nullptr) {
  const Grid& grid = g.grid();
  double gmax = 0, gmin = std::numeric_limits<double>::infinity();
  for (Index k : grid.inside_nodes()) {
    gmax = std::max(gmax, std::abs(g[k]));
    gmin = std::min(gmin, g[k]);
  }
  if (!(gmax > 0) || !(gmin >= 1e-12 * gmax)) throw Error("Monge-Ampere right-hand side must be positive");

  ScalarField u = initial_guess ? *initial_guess : ma_initial_guess(g, phi);
  if (initial_guess) {
    impose_boundary(u, phi);
    if (!detail::positive_definite_inside(u)) u = ma_initial_guess(g, phi);
  }

  const ActiveNumbering num(grid);
  const double ih2 = 1.0 / grid.cell_area();
  double res = detail::ma_norm(u, g, phi);
  int it = 0;
  for (; it < opt.max_iter && res > opt.tol * gmax; ++it) {
    std::vector<Triplet> t;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(num.size());
    for (Index k : grid.inside_nodes()) {
      const Index r = num(k);
      const Sym2 H = hessian_at(u, k);
      const Sym2 U = H.cofactor();
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const double c = U.contract(HessianStencil::weights(di, dj)) * ih2;
          if (c != 0) t.emplace_back(r, num(grid.neighbor(k, di, dj)), c);
        }
      b[r] = g[k] - H.det();
    }
    add_link_rows(grid, num, t);
    for (const auto& l : grid.links()) b[num(l.ghost)] = phi(l.foot) - u.trace(l);
    SparseMatrix A(num.size(), num.size());
    A.setFromTriplets(t.begin(), t.end());
    const Eigen::VectorXd du = sparse_solve(A, b);

    double alpha = 1.0;
    bool accepted = false;
    ScalarField trial = u;
    while (alpha > 1e-10) {
      for (Index i = 0; i < num.size(); ++i) trial[num.node(i)] = u[num.node(i)] + alpha * du[i];
      if (detail::positive_definite_inside(trial)) {
        const double r_new = detail::ma_norm(trial, g, phi);
        if (r_new < res || r_new <= opt.tol * gmax) {
          res = r_new;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) throw LossOfConvexity("damping cannot keep the Hessian positive definite");
    u = trial;
  }
  if (res > opt.tol * gmax)
    throw NonConvergence("Monge-Ampere Newton hit the iteration cap", res / gmax);

  MaSolution out{u, certify_convexity(u), res / gmax, it};
  if (!out.certificate.is_convex) throw LossOfConvexity("Monge-Ampere solution failed the convexity certificate");
  return out;
}

inline ScalarField solve_dirichlet_ma(const ScalarField& g, const RealFn& phi, const MaOptions& opt = {},
                                      const ScalarField* initial_guess = nullptr) {
  return solve_dirichlet_ma_detailed(g, phi, opt, initial_guess).u;
}

} // namespace abreu
