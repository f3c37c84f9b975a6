#pragma once

// Central finite-difference operators on inside nodes. Inside nodes always
// have a complete 3x3 stencil (ghost values stand in for the boundary), so
// the same second-order stencils are used everywhere.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "abreu/grid.hpp"
#include "abreu/lagrangian.hpp"

namespace abreu {

/// Symmetric 2x2 matrix [[a, b], [b, c]].
struct Sym2 {
  double a = 0, b = 0, c = 0;

  double det() const { return a * c - b * b; }
  double trace() const { return a + c; }
  Sym2 cofactor() const { return {c, -b, a}; }
  double min_eigenvalue() const {
    const double m = 0.5 * (a + c), d = std::hypot(0.5 * (a - c), b);
    return m - d;
  }
  double max_eigenvalue() const {
    const double m = 0.5 * (a + c), d = std::hypot(0.5 * (a - c), b);
    return m + d;
  }
  /// sum_ij this_ij * o_ij
  double contract(const Sym2& o) const { return a * o.a + 2 * b * o.b + c * o.c; }
  Mat2 matrix() const {
    Mat2 m;
    m << a, b, b, c;
    return m;
  }
  static Sym2 from(const Mat2& m) { return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), m(1, 1)}; }
};

/// Weights of the 3x3 Hessian stencil: entry [dj+1][di+1] of `a` is the
/// coefficient of v(i+di, j+dj) in h^2 * D11 v, likewise b (D12) and c (D22).
struct HessianStencil {
  static constexpr std::array<std::array<double, 3>, 3> a{{{0, 0, 0}, {1, -2, 1}, {0, 0, 0}}};
  static constexpr std::array<std::array<double, 3>, 3> b{{{0.25, 0, -0.25}, {0, 0, 0}, {-0.25, 0, 0.25}}};
  static constexpr std::array<std::array<double, 3>, 3> c{{{0, 1, 0}, {0, -2, 0}, {0, 1, 0}}};

  static Sym2 weights(int di, int dj) { return {a[dj + 1][di + 1], b[dj + 1][di + 1], c[dj + 1][di + 1]}; }
};

class MatrixField {
public:
  MatrixField() = default;
  explicit MatrixField(GridPtr grid) : grid_(std::move(grid)), m_(grid_->size()) {}

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  const Sym2& operator[](Index k) const { return m_[k]; }
  Sym2& operator[](Index k) { return m_[k]; }

private:
  GridPtr grid_;
  std::vector<Sym2> m_;
};

class VectorField {
public:
  VectorField() = default;
  explicit VectorField(GridPtr grid) : grid_(std::move(grid)), v_(grid_->size(), Vec2::Zero()) {}

  const Grid& grid() const { return *grid_; }
  const Vec2& operator[](Index k) const { return v_[k]; }
  Vec2& operator[](Index k) { return v_[k]; }

private:
  GridPtr grid_;
  std::vector<Vec2> v_;
};

inline Vec2 gradient_at(const ScalarField& u, Index k) {
  const Grid& g = u.grid();
  const double h = g.spacing();
  return {(u[g.neighbor(k, 1, 0)] - u[g.neighbor(k, -1, 0)]) / (2 * h),
          (u[g.neighbor(k, 0, 1)] - u[g.neighbor(k, 0, -1)]) / (2 * h)};
}

inline Sym2 hessian_at(const ScalarField& u, Index k) {
  const Grid& g = u.grid();
  const double ih2 = 1.0 / (g.spacing() * g.spacing());
  const double c = u[k];
  const double e = u[g.neighbor(k, 1, 0)], w = u[g.neighbor(k, -1, 0)];
  const double n = u[g.neighbor(k, 0, 1)], s = u[g.neighbor(k, 0, -1)];
  const double ne = u[g.neighbor(k, 1, 1)], nw = u[g.neighbor(k, -1, 1)];
  const double se = u[g.neighbor(k, 1, -1)], sw = u[g.neighbor(k, -1, -1)];
  return {(e - 2 * c + w) * ih2, 0.25 * (ne - nw - se + sw) * ih2, (n - 2 * c + s) * ih2};
}

/// Central gradient at inside nodes; zero elsewhere.
inline VectorField gradient(const ScalarField& u) {
  VectorField g(u.grid_ptr());
  for (Index k : u.grid().inside_nodes()) g[k] = gradient_at(u, k);
  return g;
}

/// Nine-point Hessian at inside nodes. Throws StencilError if a stencil
/// neighbour is exterior (cannot happen for grids from build_grid).
inline MatrixField hessian(const ScalarField& u) {
  const Grid& g = u.grid();
  MatrixField H(u.grid_ptr());
  for (Index k : g.inside_nodes()) {
    for (const auto& d : Grid::kNeighbors)
      if (!g.active(g.neighbor(k, d[0], d[1]))) throw StencilError("no admissible stencil at node");
    H[k] = hessian_at(u, k);
  }
  return H;
}

inline std::pair<ScalarField, MatrixField> det_cofactor(const MatrixField& H) {
  ScalarField det(H.grid_ptr());
  MatrixField cof(H.grid_ptr());
  for (Index k : H.grid().inside_nodes()) {
    det[k] = H[k].det();
    cof[k] = H[k].cofactor();
  }
  return {std::move(det), std::move(cof)};
}

struct ConvexityCertificate {
  bool is_convex = false;
  Index worst_node = -1;
  double worst_eigenvalue = 0;
  double tolerance = 0;
};

/// Minimal nodal Hessian eigenvalue over inside nodes. Default tolerance is
/// 1e-8 * |u|_inf / h^2.
inline ConvexityCertificate certify_convexity(const ScalarField& u, double tol = -1) {
  const Grid& g = u.grid();
  ConvexityCertificate cert;
  cert.worst_eigenvalue = std::numeric_limits<double>::infinity();
  for (Index k : g.inside_nodes()) {
    const double ev = hessian_at(u, k).min_eigenvalue();
    if (ev < cert.worst_eigenvalue) {
      cert.worst_eigenvalue = ev;
      cert.worst_node = k;
    }
  }
  if (tol < 0) {
    double sup = 0;
    for (Index k = 0; k < g.size(); ++k)
      if (g.active(k)) sup = std::max(sup, std::abs(u[k]));
    tol = 1e-8 * sup / (g.spacing() * g.spacing());
  }
  cert.tolerance = tol;
  cert.is_convex = cert.worst_eigenvalue >= -tol;
  return cert;
}

/// sum_i d/dx_i [F1_{p_i}(x, Du(x))] by the chain rule:
/// F1_{p_i p_j} D_ij u + F1_{p_i x_i}.
inline ScalarField momentum_divergence(const ScalarField& u, const Lagrangian& L) {
  const Grid& g = u.grid();
  ScalarField out(u.grid_ptr());
  for (Index k : g.inside_nodes()) {
    const Vec2 x = g.position(k);
    const Vec2 p = gradient_at(u, k);
    const Sym2 H = hessian_at(u, k);
    out[k] = Sym2::from(L.F1_pp(x, p)).contract(H) + L.F1_px(x, p).trace();
  }
  return out;
}

} // namespace abreu
