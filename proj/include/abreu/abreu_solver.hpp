#pragma once

// Second boundary value problem for the singular Abreu equation
//   eps U^{ij} D_ij w = f_eps,  w = 1/det D^2 u,  u = phi, w = psi on the boundary.
//
// The unknown is u alone. At inside nodes away from the boundary the
// equation is the vanishing of the discrete first variation of J (the
// divergence form eps D^2 : (w U) = f_eps). On the layer of inside nodes next
// to the boundary the second boundary condition is imposed as
// psi det D^2 u = 1, and ghost nodes carry the Dirichlet links for phi. The
// coupled system is solved by damped Newton with the exact Jacobian.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "abreu/calculus.hpp"
#include "abreu/error.hpp"
#include "abreu/functional.hpp"
#include "abreu/grid.hpp"
#include "abreu/lagrangian.hpp"
#include "abreu/linear_system.hpp"
#include "abreu/ma_solver.hpp"

namespace abreu {

struct AbreuProblem {
  GridPtr grid;
  Lagrangian L;
  RealFn phi;
  RealFn psi;
  /// Defining function of the outer domain, used by mu_eps.
  RealFn rho;
};

struct BoundReport {
  double sup_abs_u = 0;
  double det_min = 0, det_max = 0;
  double grad_sup_inner = 0;
  double grad_bound = 0;  // 2 sup|u| / separation
  double cw_M = 0;
  double cw_boundary_gap = 0;
  double f_plus_sup = 0;  // C0 = |f_eps^+|_inf
};

struct AbreuState {
  double eps = 0;
  ScalarField u;
  ScalarField w;
  double residual_ma = 0;        // max |w det D^2 u - 1| over inside nodes
  double residual_lma = 0;       // max first-variation density at deep nodes / scale
  double residual_coupling = 0;  // max |psi det D^2 u - 1| on the boundary layer
  double residual_boundary = 0;  // max |trace(u) - phi(foot)|
  double lma_scale = 1;
  int iterations = 0;
  bool converged = false;
  BoundReport monitor;
};

struct AbreuOptions {
  double tol = 1e-6;
  int max_iter = 200;          // Newton iterations per epsilon
  double relaxation = 1.0;     // initial damping of each Newton step
  double cold_start_eps = 1.0; // first epsilon of the internal continuation on a cold start
  int max_substeps = 40;
  MaOptions ma;                // cold-start Monge-Ampere solve
};

/// Inside nodes whose rows carry the divergence-form equation.
inline bool is_deep(const Grid& g, Index k) { return g.inside(k) && !g.near_boundary(k); }

/// w = 1/det D^2 u at inside nodes, psi at the boundary foot points on ghosts.
inline ScalarField coupled_w(const ScalarField& u, const RealFn& psi) {
  const Grid& g = u.grid();
  ScalarField w(u.grid_ptr());
  for (Index k : g.inside_nodes()) w[k] = 1.0 / hessian_at(u, k).det();
  for (const auto& l : g.links()) w[l.ghost] = psi(l.foot);
  return w;
}

/// Chain-rule residual eps U:D^2 w - f_eps at inside nodes away from the
/// boundary layer (w from coupled_w). Diagnostic only.
inline ScalarField nondivergence_residual(const AbreuState& s, const AbreuProblem& P) {
  const Grid& g = s.u.grid();
  const ScalarField mu = mu_epsilon(sample(P.grid, P.phi), s.eps);
  const FepsilonField f = assemble_f_epsilon(s.u, P.L, s.eps, mu);
  ScalarField r(s.u.grid_ptr());
  for (Index k : g.inside_nodes()) {
    if (!is_deep(g, k)) continue;
    const Sym2 U = hessian_at(s.u, k).cofactor();
    r[k] = s.eps * U.contract(hessian_at(s.w, k)) - f.f[k];
  }
  return r;
}

inline BoundReport monitor_bounds(const AbreuState& s, const AbreuProblem& P) {
  const Grid& g = s.u.grid();
  BoundReport b;
  b.det_min = std::numeric_limits<double>::infinity();
  b.det_max = 0;
  for (Index k : g.inside_nodes()) {
    b.sup_abs_u = std::max(b.sup_abs_u, std::abs(s.u[k]));
    const double d = hessian_at(s.u, k).det();
    b.det_min = std::min(b.det_min, d);
    b.det_max = std::max(b.det_max, d);
  }
  for (Index k : g.inner_nodes()) b.grad_sup_inner = std::max(b.grad_sup_inner, gradient_at(s.u, k).norm());
  b.grad_bound = 2 * b.sup_abs_u / g.measured_separation();

  const ScalarField mu = mu_epsilon(sample(P.grid, P.phi), s.eps);
  const FepsilonField f = assemble_f_epsilon(s.u, P.L, s.eps, mu);
  for (Index k : g.inside_nodes()) b.f_plus_sup = std::max(b.f_plus_sup, f.f[k]);
  b.cw_M = 1 + b.f_plus_sup / s.eps;

  double vin = std::numeric_limits<double>::infinity(), vbd = std::numeric_limits<double>::infinity();
  for (Index k : g.inside_nodes()) vin = std::min(vin, std::log(s.w[k]) - b.cw_M * s.u[k]);
  for (const auto& l : g.links()) vbd = std::min(vbd, std::log(P.psi(l.foot)) - b.cw_M * P.phi(l.foot));
  b.cw_boundary_gap = vin - vbd;
  return b;
}

namespace detail {

struct AbreuResidual {
  Eigen::VectorXd r;  // scaled rows, indexed by unknown
  double deep = 0, ring = 0, link = 0;
};

class AbreuSystem {
public:
  AbreuSystem(const AbreuProblem& P, double eps)
      : P_(P), g_(*P.grid), num_(g_), eps_(eps),
        J_(P.L, eps, mu_epsilon(sample(P.grid, P.phi), eps)) {
    foot_phi_.resize(g_.links().size());
    for (std::size_t i = 0; i < g_.links().size(); ++i) foot_phi_[i] = P.phi(g_.links()[i].foot);
    psi_node_.assign(g_.size(), 0.0);
    for (Index k : g_.inside_nodes()) psi_node_[k] = P.psi(g_.position(k));
  }

  const ActiveNumbering& numbering() const { return num_; }
  const PenalizedFunctional& functional() const { return J_; }

  /// 1 + sup of the separate first-variation term densities at deep nodes.
  double scale(const ScalarField& u) const {
    const JGradient G = J_.gradient(u);
    const double ih2 = 1.0 / g_.cell_area();
    double s = 0;
    for (Index k : g_.inside_nodes())
      if (is_deep(g_, k))
        s = std::max({s, std::abs(G.objective[k]) * ih2, std::abs(G.penalty[k]) * ih2, std::abs(G.barrier[k]) * ih2});
    return 1 + s;
  }

  AbreuResidual residual(const ScalarField& u, double scale) const {
    AbreuResidual out;
    out.r = Eigen::VectorXd::Zero(num_.size());
    const JGradient G = J_.gradient(u);
    const double ih2 = 1.0 / g_.cell_area();
    for (Index k : g_.inside_nodes()) {
      double v;
      if (is_deep(g_, k)) {
        v = G.total[k] * ih2 / scale;
        out.deep = std::max(out.deep, std::abs(v));
      } else {
        v = psi_node_[k] * hessian_at(u, k).det() - 1.0;
        out.ring = std::max(out.ring, std::abs(v));
      }
      out.r[num_(k)] = v;
    }
    for (std::size_t i = 0; i < g_.links().size(); ++i) {
      const auto& l = g_.links()[i];
      const double v = u.trace(l) - foot_phi_[i];
      out.link = std::max(out.link, std::abs(v));
      out.r[num_(l.ghost)] = v;
    }
    return out;
  }

  SparseMatrix jacobian(const ScalarField& u, double scale) const {
    std::vector<Triplet> hess;
    J_.hessian(u, hess);
    const double ih2 = 1.0 / g_.cell_area();
    std::vector<Triplet> t;
    t.reserve(hess.size());
    for (const auto& e : hess) {
      const Index k = e.row();
      if (is_deep(g_, k)) t.emplace_back(num_(k), num_(e.col()), e.value() * ih2 / scale);
    }
    for (Index k : g_.inside_nodes()) {
      if (is_deep(g_, k)) continue;
      const Sym2 U = hessian_at(u, k).cofactor();
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const double c = U.contract(HessianStencil::weights(di, dj)) * ih2 * psi_node_[k];
          if (c != 0) t.emplace_back(num_(k), num_(g_.neighbor(k, di, dj)), c);
        }
    }
    add_link_rows(g_, num_, t);
    SparseMatrix A(num_.size(), num_.size());
    A.setFromTriplets(t.begin(), t.end());
    return A;
  }

private:
  const AbreuProblem& P_;
  const Grid& g_;
  ActiveNumbering num_;
  double eps_;
  PenalizedFunctional J_;
  std::vector<double> foot_phi_;
  std::vector<double> psi_node_;
};

struct NewtonOutcome {
  ScalarField u;
  int iterations = 0;
  bool converged = false;
  bool stalled = false;
};

inline NewtonOutcome abreu_newton(const AbreuProblem& P, double eps, ScalarField u, const AbreuOptions& opt) {
  const AbreuSystem S(P, eps);
  const ActiveNumbering& num = S.numbering();
  const double scale = S.scale(u);
  AbreuResidual res = S.residual(u, scale);
  NewtonOutcome out{u, 0, false, false};
  const auto done = [&](const AbreuResidual& r) { return std::max({r.deep, r.ring, r.link}) <= opt.tol; };
  int polish = 0;
  for (int it = 0; it < opt.max_iter; ++it) {
    if (done(res)) {
      // a couple of extra steps are cheap once in the quadratic regime
      if (polish++ >= 2 || std::max({res.deep, res.ring, res.link}) < 1e-3 * opt.tol) break;
    }
    const SparseMatrix A = S.jacobian(u, scale);
    Eigen::VectorXd du;
    try {
      du = sparse_solve(A, -res.r);
    } catch (const LinearSolveFailure&) {
      out.stalled = true;
      break;
    }
    const double merit = res.r.squaredNorm();
    double alpha = std::min(1.0, opt.relaxation);
    bool accepted = false;
    ScalarField trial = u;
    while (alpha > 1e-8) {
      for (Index i = 0; i < num.size(); ++i) trial[num.node(i)] = u[num.node(i)] + alpha * du[i];
      if (positive_definite_inside(trial)) {
        const AbreuResidual rt = S.residual(trial, scale);
        if (rt.r.squaredNorm() <= (1 - 1e-4 * alpha) * merit || done(rt)) {
          u = trial;
          res = rt;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) {
      out.stalled = !done(res);
      break;
    }
  }
  out.u = u;
  out.converged = done(res);
  return out;
}

} // namespace detail

/// Residuals, coupling field and monitors of a given u at parameter eps.
inline AbreuState make_state(const AbreuProblem& P, double eps, const ScalarField& u) {
  const detail::AbreuSystem S(P, eps);
  AbreuState s;
  s.eps = eps;
  s.u = u;
  s.w = coupled_w(u, P.psi);
  s.lma_scale = S.scale(u);
  const detail::AbreuResidual r = S.residual(u, s.lma_scale);
  s.residual_lma = r.deep;
  s.residual_coupling = r.ring;
  s.residual_boundary = r.link;
  double ma = 0;
  for (Index k : u.grid().inside_nodes()) ma = std::max(ma, std::abs(s.w[k] * hessian_at(u, k).det() - 1.0));
  s.residual_ma = ma;
  s.monitor = monitor_bounds(s, P);
  return s;
}

/// Throws Error when the data violate the solver's preconditions.
inline void check_abreu_data(const AbreuProblem& P) {
  const Grid& g = *P.grid;
  for (const auto& l : g.links())
    if (!(P.psi(l.foot) > 0)) throw Error("psi must be positive on the boundary");
  const ScalarField phi = sample(P.grid, P.phi);
  const double tol = 1e-8 * std::max(1.0, phi.sup_inside()) / g.cell_area();
  for (Index k : g.inside_nodes())
    if (hessian_at(phi, k).min_eigenvalue() < -tol) throw Error("boundary data phi is not convex at a grid node");
}

inline AbreuState solve_abreu(double eps, const AbreuProblem& P, const AbreuOptions& opt = {},
                              const AbreuState* warm_start = nullptr) {
  if (!(eps > 0)) throw Error("solve_abreu requires eps > 0");
  check_abreu_data(P);

  ScalarField u;
  double from;
  if (warm_start) {
    u = warm_start->u;
    from = warm_start->eps;
  } else {
    ScalarField g(P.grid);
    for (Index k : P.grid->inside_nodes()) g[k] = 1.0 / P.psi(P.grid->position(k));
    u = solve_dirichlet_ma(g, P.phi, opt.ma);
    from = std::max(eps, opt.cold_start_eps);
  }

  int iterations = 0;
  if (from > eps) {
    // geometric continuation from `from` down to eps, refining on failure
    double cur = from;
    detail::NewtonOutcome n = detail::abreu_newton(P, cur, u, opt);
    iterations += n.iterations;
    if (!n.converged) throw InfeasibleEpsilon("no convergence at the continuation start", cur);
    u = n.u;
    double ratio = 0.5;
    int substeps = 0;
    while (cur > eps) {
      if (++substeps > opt.max_substeps) throw InfeasibleEpsilon("epsilon continuation ran out of substeps", cur);
      const double next = std::max(eps, cur * ratio);
      n = detail::abreu_newton(P, next, u, opt);
      iterations += n.iterations;
      if (n.converged) {
        u = n.u;
        cur = next;
        ratio = std::max(0.1, ratio * ratio);
      } else {
        ratio = std::sqrt(ratio);
        if (ratio > 0.98) throw InfeasibleEpsilon("damping stalls; try a larger epsilon", next);
      }
    }
    AbreuState s = make_state(P, eps, u);
    s.iterations = iterations;
    s.converged = true;
    return s;
  }

  const detail::NewtonOutcome n = detail::abreu_newton(P, eps, u, opt);
  if (n.stalled && !n.converged && !warm_start) throw InfeasibleEpsilon("damping stalls; try a larger epsilon", eps);
  AbreuState s = make_state(P, eps, n.u);
  s.iterations = n.iterations;
  s.converged = n.converged;
  return s;
}

struct ContinuationResult {
  std::vector<AbreuState> states;
  bool complete = true;
  std::optional<double> failed_eps;
  std::string failure;
};

/// Solves along a strictly decreasing schedule, warm-starting each solve.
inline ContinuationResult epsilon_continuation(const std::vector<double>& schedule, const AbreuProblem& P,
                                               const AbreuOptions& opt = {}) {
  if (schedule.empty()) throw ConfigError("epsilon schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0)) throw ConfigError("epsilon schedule must be positive");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw ConfigError("epsilon schedule must be strictly decreasing");
  }
  ContinuationResult out;
  for (double eps : schedule) {
    try {
      AbreuState s = solve_abreu(eps, P, opt, out.states.empty() ? nullptr : &out.states.back());
      const bool ok = s.converged;
      out.states.push_back(std::move(s));
      if (!ok) {
        out.complete = false;
        out.failed_eps = eps;
        out.failure = "no convergence within the iteration cap at eps = " + std::to_string(eps);
        break;
      }
    } catch (const Error& e) {
      out.complete = false;
      out.failed_eps = eps;
      out.failure = std::string(e.what()) + " (eps = " + std::to_string(eps) + ")";
      break;
    }
  }
  return out;
}

} // namespace abreu
