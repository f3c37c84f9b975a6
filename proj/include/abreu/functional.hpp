#pragma once

// Discrete penalized functional
//   J(v) = sum_T w_T F(x_T, v_T, Dv_T) + (1/2eps) sum_annulus (v - mu)^2 h^2
//          - eps sum_inside log det D^2_h v h^2
// with its exact gradient and Hessian, plus the right-hand side f_eps.
//
// The F-integral uses piecewise-linear interpolation on both diagonal splits
// of every lattice cell (averaged); a triangle contributes the fraction of
// its vertices lying in the inner domain. The barrier uses the nodal
// nine-point Hessian.

#include <Eigen/Core>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "abreu/calculus.hpp"
#include "abreu/error.hpp"
#include "abreu/grid.hpp"
#include "abreu/lagrangian.hpp"

namespace abreu {

struct QuadTriangle {
  std::array<Index, 3> v{};
  std::array<Vec2, 3> grad_coef{};
  Vec2 centroid{0, 0};
  double weight = 0;
};

/// Triangles of cells whose four corners are inside and which touch the inner domain.
inline std::vector<QuadTriangle> inner_quadrature(const Grid& g) {
  std::vector<QuadTriangle> tris;
  const double area = 0.5 * g.cell_area();
  auto add = [&](Index a, Index b, Index c) {
    const int n0 = g.in_inner(a) + g.in_inner(b) + g.in_inner(c);
    if (n0 == 0) return;
    QuadTriangle t;
    t.v = {a, b, c};
    const Vec2 p0 = g.position(a), p1 = g.position(b), p2 = g.position(c);
    Mat2 E;
    E.col(0) = p1 - p0;
    E.col(1) = p2 - p0;
    const Mat2 Einv = E.inverse();
    // grad(lambda_1), grad(lambda_2) are rows of E^{-1}
    const Vec2 g1 = Einv.row(0).transpose(), g2 = Einv.row(1).transpose();
    t.grad_coef = {Vec2(-g1 - g2), g1, g2};
    t.centroid = (p0 + p1 + p2) / 3.0;
    t.weight = 0.5 * area * n0 / 3.0;
    tris.push_back(t);
  };
  for (int j = 0; j + 1 < g.ny(); ++j)
    for (int i = 0; i + 1 < g.nx(); ++i) {
      const Index p00 = g.index(i, j), p10 = g.index(i + 1, j), p01 = g.index(i, j + 1), p11 = g.index(i + 1, j + 1);
      if (!(g.inside(p00) && g.inside(p10) && g.inside(p01) && g.inside(p11))) continue;
      add(p00, p10, p11);
      add(p00, p11, p01);
      add(p00, p10, p01);
      add(p10, p11, p01);
    }
  return tris;
}

/// Quadrature of int_{inner} F(x, v, Dv) dx; shared by the penalized
/// functional and the constrained problem.
inline double objective(const ScalarField& v, const Lagrangian& L, const std::vector<QuadTriangle>& tris) {
  double s = 0;
  for (const auto& t : tris) {
    const double vc = (v[t.v[0]] + v[t.v[1]] + v[t.v[2]]) / 3.0;
    const Vec2 p = v[t.v[0]] * t.grad_coef[0] + v[t.v[1]] * t.grad_coef[1] + v[t.v[2]] * t.grad_coef[2];
    s += t.weight * L.F(t.centroid, vc, p);
  }
  return s;
}

inline double objective(const ScalarField& v, const Lagrangian& L) {
  return objective(v, L, inner_quadrature(v.grid()));
}

/// Adds d objective / dv to `grad` (lattice indexed) and, when `hess` is
/// non-null, the second derivatives as (row, col, value) triplets.
inline void objective_derivatives(const ScalarField& v, const Lagrangian& L, const std::vector<QuadTriangle>& tris,
                                  std::vector<double>& grad, std::vector<Eigen::Triplet<double>>* hess) {
  for (const auto& t : tris) {
    const double vc = (v[t.v[0]] + v[t.v[1]] + v[t.v[2]]) / 3.0;
    const Vec2 p = v[t.v[0]] * t.grad_coef[0] + v[t.v[1]] * t.grad_coef[1] + v[t.v[2]] * t.grad_coef[2];
    const double Fz = L.F0_z(t.centroid, vc);
    const Vec2 Fp = L.F1_p(t.centroid, p);
    for (int m = 0; m < 3; ++m) grad[t.v[m]] += t.weight * (Fz / 3.0 + Fp.dot(t.grad_coef[m]));
    if (!hess) continue;
    const double Fzz = L.F0_zz(t.centroid, vc);
    const Mat2 Fpp = L.F1_pp(t.centroid, p);
    for (int m = 0; m < 3; ++m)
      for (int l = 0; l < 3; ++l)
        hess->emplace_back(t.v[m], t.v[l],
                           t.weight * (Fzz / 9.0 + t.grad_coef[m].dot(Fpp * t.grad_coef[l])));
  }
}

enum class Provenance : std::uint8_t { none, monopolist, annulus };

struct FepsilonField {
  ScalarField f;
  std::vector<Provenance> provenance;
};

/// f_eps = F0_z(x, u) - div F1_p(x, Du) on inner nodes, (u - mu)/eps on the annulus.
inline FepsilonField assemble_f_epsilon(const ScalarField& u, const Lagrangian& L, double eps, const ScalarField& mu) {
  if (!(eps > 0)) throw Error("assemble_f_epsilon requires eps > 0");
  const Grid& g = u.grid();
  FepsilonField out{ScalarField(u.grid_ptr()), std::vector<Provenance>(g.size(), Provenance::none)};
  const ScalarField div = momentum_divergence(u, L);
  for (Index k : g.inside_nodes()) {
    if (g.in_inner(k)) {
      out.f[k] = L.F0_z(g.position(k), u[k]) - div[k];
      out.provenance[k] = Provenance::monopolist;
    } else {
      out.f[k] = (u[k] - mu[k]) / eps;
      out.provenance[k] = Provenance::annulus;
    }
  }
  return out;
}

struct JGradient {
  std::vector<double> total, objective, penalty, barrier;
};

class PenalizedFunctional {
public:
  PenalizedFunctional(Lagrangian L, double eps, ScalarField mu)
      : L_(std::move(L)), eps_(eps), mu_(std::move(mu)), tris_(inner_quadrature(mu_.grid())) {
    if (!(eps_ > 0)) throw Error("penalized functional requires eps > 0");
  }

  double eps() const { return eps_; }
  const Lagrangian& lagrangian() const { return L_; }
  const ScalarField& mu() const { return mu_; }
  const std::vector<QuadTriangle>& triangles() const { return tris_; }

  double objective_part(const ScalarField& v) const { return objective(v, L_, tris_); }

  double penalty_part(const ScalarField& v) const {
    const Grid& g = v.grid();
    double s = 0;
    for (Index k : g.inside_nodes())
      if (!g.in_inner(k)) s += (v[k] - mu_[k]) * (v[k] - mu_[k]);
    return s * g.cell_area() / (2 * eps_);
  }

  /// Throws BarrierDomainError unless every nodal Hessian is positive definite.
  double barrier_part(const ScalarField& v) const {
    const Grid& g = v.grid();
    double s = 0;
    for (Index k : g.inside_nodes()) {
      const Sym2 H = hessian_at(v, k);
      if (!(H.det() > 0 && H.a > 0)) throw BarrierDomainError("log det of a non positive definite Hessian");
      s += std::log(H.det());
    }
    return -eps_ * s * g.cell_area();
  }

  double value(const ScalarField& v) const { return objective_part(v) + penalty_part(v) + barrier_part(v); }

  /// Exact gradient with respect to every node value (ghosts included),
  /// split by term.
  JGradient gradient(const ScalarField& v) const {
    const Grid& g = v.grid();
    const Index n = g.size();
    const double A = g.cell_area();
    const double ih2 = 1.0 / A;
    JGradient G{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                std::vector<double>(n, 0.0)};
    objective_derivatives(v, L_, tris_, G.objective, nullptr);
    for (Index k : g.inside_nodes()) {
      if (!g.in_inner(k)) G.penalty[k] = (v[k] - mu_[k]) / eps_ * A;
      const Sym2 H = hessian_at(v, k);
      if (!(H.det() > 0 && H.a > 0)) throw BarrierDomainError("log det of a non positive definite Hessian");
      const Sym2 U = H.cofactor();
      const double w = 1.0 / H.det();
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const double c = U.contract(HessianStencil::weights(di, dj)) * ih2;
          if (c != 0) G.barrier[g.neighbor(k, di, dj)] += -eps_ * A * w * c;
        }
    }
    for (Index k = 0; k < n; ++k) G.total[k] = G.objective[k] + G.penalty[k] + G.barrier[k];
    return G;
  }

  /// Exact Hessian as lattice-indexed triplets.
  void hessian(const ScalarField& v, std::vector<Eigen::Triplet<double>>& out) const {
    const Grid& g = v.grid();
    const double A = g.cell_area();
    const double ih2 = 1.0 / A;
    std::vector<double> scratch(g.size(), 0.0);
    objective_derivatives(v, L_, tris_, scratch, &out);
    for (Index k : g.inside_nodes()) {
      if (!g.in_inner(k)) out.emplace_back(k, k, A / eps_);
      const Sym2 H = hessian_at(v, k);
      if (!(H.det() > 0 && H.a > 0)) throw BarrierDomainError("log det of a non positive definite Hessian");
      const Mat2 Hinv = H.matrix().inverse();
      std::array<Index, 9> idx{};
      std::array<Mat2, 9> S{};
      int m = 0;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di, ++m) {
          idx[m] = g.neighbor(k, di, dj);
          S[m] = HessianStencil::weights(di, dj).matrix() * ih2;
        }
      // d^2(-log det H) = tr(H^-1 S_a H^-1 S_b)
      std::array<Mat2, 9> HS{};
      for (int a = 0; a < 9; ++a) HS[a] = Hinv * S[a];
      for (int a = 0; a < 9; ++a) {
        if (S[a].isZero()) continue;
        for (int b = 0; b < 9; ++b) {
          if (S[b].isZero()) continue;
          out.emplace_back(idx[a], idx[b], eps_ * A * (HS[a] * HS[b]).trace());
        }
      }
    }
  }

private:
  Lagrangian L_;
  double eps_;
  ScalarField mu_;
  std::vector<QuadTriangle> tris_;
};

inline double evaluate_J(const ScalarField& v, const Lagrangian& L, double eps, const ScalarField& mu) {
  return PenalizedFunctional(L, eps, mu).value(v);
}

/// Nodal density of the first variation (gradient divided by the cell area)
/// at inside nodes, with boundary values held fixed. Zero elsewhere.
inline ScalarField first_variation_J(const ScalarField& v, const Lagrangian& L, double eps, const ScalarField& mu) {
  const PenalizedFunctional J(L, eps, mu);
  const JGradient G = J.gradient(v);
  ScalarField out(v.grid_ptr());
  const double ih2 = 1.0 / v.grid().cell_area();
  for (Index k : v.grid().inside_nodes()) out[k] = G.total[k] * ih2;
  return out;
}

} // namespace abreu
