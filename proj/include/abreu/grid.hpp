#pragma once

// Nested convex domains, their masked Cartesian discretization and node fields.
//
// Nodes with rho < 0 are "inside" (interior of the inner domain or annulus).
// Outside nodes that touch an inside node through the 3x3 stencil are
// boundary (ghost) nodes. Every ghost carries a link to the boundary: a foot
// point on {rho = 0} found by bisection along a grid line through one or two
// inside nodes, and quadratic interpolation weights along that line. The
// Dirichlet condition reads  sum(weights * values) = g(foot).

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "abreu/error.hpp"
#include "abreu/polynomial.hpp"

namespace abreu {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using RealFn = std::function<double(const Vec2&)>;
using Index = std::int64_t;

struct Box {
  Vec2 lo{0.0, 0.0};
  Vec2 hi{0.0, 0.0};
  bool finite() const { return lo.allFinite() && hi.allFinite() && (hi - lo).minCoeff() > 0.0; }
};

struct ConvexDomain {
  RealFn rho;
  std::function<Vec2(const Vec2&)> rho_gradient;
  std::function<Mat2(const Vec2&)> rho_hessian;
  Box bounding_box;
  std::string description;

  double operator()(const Vec2& p) const { return rho(p); }

  Vec2 gradient(const Vec2& p) const {
    if (rho_gradient) return rho_gradient(p);
    const double d = 1e-6;
    return {(rho(p + Vec2(d, 0)) - rho(p - Vec2(d, 0))) / (2 * d),
            (rho(p + Vec2(0, d)) - rho(p - Vec2(0, d))) / (2 * d)};
  }

  Mat2 hessian(const Vec2& p) const {
    if (rho_hessian) return rho_hessian(p);
    const double d = 1e-4;
    const Vec2 ex(d, 0), ey(0, d);
    Mat2 m;
    m(0, 0) = (rho(p + ex) - 2 * rho(p) + rho(p - ex)) / (d * d);
    m(1, 1) = (rho(p + ey) - 2 * rho(p) + rho(p - ey)) / (d * d);
    m(0, 1) = m(1, 0) = (rho(p + ex + ey) - rho(p + ex - ey) - rho(p - ex + ey) + rho(p - ex - ey)) / (4 * d * d);
    return m;
  }

  /// rho = (|x - c|^2 - r^2) / 2
  static ConvexDomain disk(const Vec2& center, double radius) {
    if (!(radius > 0)) throw GeometryError("disk radius must be positive");
    ConvexDomain d;
    d.rho = [=](const Vec2& p) { return 0.5 * ((p - center).squaredNorm() - radius * radius); };
    d.rho_gradient = [=](const Vec2& p) -> Vec2 { return p - center; };
    d.rho_hessian = [](const Vec2&) -> Mat2 { return Mat2::Identity(); };
    d.bounding_box = {center - Vec2(radius, radius), center + Vec2(radius, radius)};
    d.description = "disk";
    return d;
  }

  /// rho = (x^2/a^2 + y^2/b^2 - 1) * a*b/2 about `center`, semi-axes a, b
  static ConvexDomain ellipse(const Vec2& center, double a, double b) {
    if (!(a > 0 && b > 0)) throw GeometryError("ellipse semi-axes must be positive");
    const double s = 0.5 * a * b;
    ConvexDomain d;
    d.rho = [=](const Vec2& p) {
      const Vec2 q = p - center;
      return s * (q.x() * q.x() / (a * a) + q.y() * q.y() / (b * b) - 1.0);
    };
    d.rho_gradient = [=](const Vec2& p) -> Vec2 {
      const Vec2 q = p - center;
      return {2 * s * q.x() / (a * a), 2 * s * q.y() / (b * b)};
    };
    d.rho_hessian = [=](const Vec2&) -> Mat2 {
      Mat2 m = Mat2::Zero();
      m(0, 0) = 2 * s / (a * a);
      m(1, 1) = 2 * s / (b * b);
      return m;
    };
    d.bounding_box = {center - Vec2(a, b), center + Vec2(a, b)};
    d.description = "ellipse";
    return d;
  }

  static ConvexDomain polynomial(const Polynomial& rho, const Box& box) {
    if (!box.finite()) throw GeometryError("polynomial domain needs a finite bounding box");
    ConvexDomain d;
    d.rho = [rho](const Vec2& p) { return rho(p); };
    d.rho_gradient = [rho](const Vec2& p) { return rho.gradient(p); };
    d.rho_hessian = [rho](const Vec2& p) { return rho.hessian(p); };
    d.bounding_box = box;
    d.description = "polynomial";
    return d;
  }

  /// Smallest Hessian eigenvalue of rho over a lattice of points with rho < 0.
  double measured_convexity_modulus(int samples_per_axis = 41) const {
    double worst = std::numeric_limits<double>::infinity();
    const Box& b = bounding_box;
    for (int j = 0; j < samples_per_axis; ++j)
      for (int i = 0; i < samples_per_axis; ++i) {
        const Vec2 p = b.lo + Vec2((b.hi.x() - b.lo.x()) * i / (samples_per_axis - 1.0),
                                   (b.hi.y() - b.lo.y()) * j / (samples_per_axis - 1.0));
        if (rho(p) >= 0) continue;
        const Eigen::SelfAdjointEigenSolver<Mat2> es(hessian(p), Eigen::EigenvaluesOnly);
        worst = std::min(worst, es.eigenvalues()(0));
      }
    return worst;
  }
};

struct NestedDomains {
  ConvexDomain outer;
  ConvexDomain inner;
  double separation = 0.0;

  /// Separation estimated by sampling inner-domain points and measuring their
  /// distance to the outer boundary along the outward normal ray.
  static NestedDomains make(ConvexDomain outer, ConvexDomain inner) {
    NestedDomains nd{std::move(outer), std::move(inner), 0.0};
    double best = std::numeric_limits<double>::infinity();
    const Box& b = nd.inner.bounding_box;
    const int m = 161;
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i) {
        const Vec2 p = b.lo + Vec2((b.hi.x() - b.lo.x()) * i / (m - 1.0), (b.hi.y() - b.lo.y()) * j / (m - 1.0));
        if (nd.inner(p) > 0) continue;
        const double r = nd.outer(p);
        if (r >= 0) throw GeometryError("inner domain is not contained in the outer domain");
        best = std::min(best, distance_to_zero_set(nd.outer, p));
      }
    nd.separation = best;
    return nd;
  }

  static NestedDomains concentric_disks(double outer_radius, double inner_radius) {
    if (!(inner_radius < outer_radius)) throw GeometryError("inner radius must be smaller than outer radius");
    NestedDomains nd{ConvexDomain::disk({0, 0}, outer_radius), ConvexDomain::disk({0, 0}, inner_radius),
                     outer_radius - inner_radius};
    return nd;
  }

  /// Distance from an inside point to {rho = 0} along the gradient ray,
  /// bracketed and bisected. Exact for disks.
  static double distance_to_zero_set(const ConvexDomain& d, const Vec2& p) {
    Vec2 g = d.gradient(p);
    if (g.norm() == 0) g = Vec2(1, 0);
    const Vec2 dir = g.normalized();
    double lo = 0, hi = 1e-3;
    while (d(p + hi * dir) < 0) {
      lo = hi;
      hi *= 2;
      if (hi > 1e6) throw GeometryError("defining function has no zero along the normal ray");
    }
    for (int k = 0; k < 100 && hi - lo > 1e-13; ++k) {
      const double mid = 0.5 * (lo + hi);
      (d(p + mid * dir) < 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

enum class NodeKind : std::uint8_t { interior, annulus, boundary, exterior };

inline const char* to_string(NodeKind k) {
  switch (k) {
  case NodeKind::interior: return "interior";
  case NodeKind::annulus: return "annulus";
  case NodeKind::boundary: return "boundary";
  case NodeKind::exterior: return "exterior";
  }
  return "?";
}

/// Dirichlet link of a ghost node: weights[0]*v(ghost) + weights[1]*v(in1)
/// + weights[2]*v(in2) equals the boundary value at `foot`.
struct BoundaryLink {
  Index ghost = -1;
  Index in1 = -1;
  Index in2 = -1;
  Vec2 foot{0, 0};
  double theta = 1.0;
  std::array<double, 3> weights{1.0, 0.0, 0.0};
};

class Grid {
public:
  static constexpr std::array<std::array<int, 2>, 8> kNeighbors{
      {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1}}};

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  Index size() const { return static_cast<Index>(nx_) * ny_; }
  double spacing() const { return h_; }
  const Vec2& origin() const { return origin_; }

  Index index(int i, int j) const { return static_cast<Index>(j) * nx_ + i; }
  int col(Index k) const { return static_cast<int>(k % nx_); }
  int row(Index k) const { return static_cast<int>(k / nx_); }
  bool in_lattice(int i, int j) const { return i >= 0 && j >= 0 && i < nx_ && j < ny_; }
  Index neighbor(Index k, int di, int dj) const {
    const int i = col(k) + di, j = row(k) + dj;
    return in_lattice(i, j) ? index(i, j) : -1;
  }
  Vec2 position(Index k) const { return origin_ + h_ * Vec2(col(k), row(k)); }

  NodeKind kind(Index k) const { return kind_[k]; }
  bool inside(Index k) const { return kind_[k] == NodeKind::interior || kind_[k] == NodeKind::annulus; }
  bool in_inner(Index k) const { return kind_[k] == NodeKind::interior; }
  bool active(Index k) const { return kind_[k] != NodeKind::exterior; }
  double rho(Index k) const { return rho_[k]; }
  double rho_inner(Index k) const { return rho0_[k]; }

  const std::vector<Index>& inside_nodes() const { return inside_; }
  const std::vector<Index>& inner_nodes() const { return inner_; }
  const std::vector<BoundaryLink>& links() const { return links_; }
  /// Position in links() of the ghost node k, or -1.
  Index link_of(Index k) const { return link_index_[k]; }

  /// Inside node with a boundary node in its 3x3 neighbourhood.
  bool near_boundary(Index k) const { return near_boundary_[k] != 0; }

  Index count(NodeKind kind) const { return std::count(kind_.begin(), kind_.end(), kind); }
  double cell_area() const { return h_ * h_; }

  /// Minimum distance from an inner-domain node to a boundary foot point.
  double measured_separation() const {
    double best = std::numeric_limits<double>::infinity();
    for (Index k : inner_)
      for (const auto& l : links_) best = std::min(best, (position(k) - l.foot).norm());
    return best;
  }

  friend Grid build_grid_impl(const NestedDomains&, int);

private:
  int nx_ = 0, ny_ = 0;
  double h_ = 0;
  Vec2 origin_{0, 0};
  std::vector<NodeKind> kind_;
  std::vector<double> rho_, rho0_;
  std::vector<Index> inside_, inner_;
  std::vector<BoundaryLink> links_;
  std::vector<Index> link_index_;
  std::vector<std::uint8_t> near_boundary_;
};

using GridPtr = std::shared_ptr<const Grid>;

namespace detail {

/// Root of rho on the segment a -> b with rho(a) < 0 <= rho(b); returns the
/// parameter t in (0, 1].
inline double bisect_segment(const RealFn& rho, const Vec2& a, const Vec2& b, double tol_t) {
  double lo = 0.0, hi = 1.0;
  const double fb = rho(b);
  if (!(rho(a) < 0) || !(fb >= 0)) throw GeometryError("defining function has no sign change along grid line");
  if (fb == 0.0) return 1.0;
  while (hi - lo > tol_t) {
    const double mid = 0.5 * (lo + hi);
    (rho(a + mid * (b - a)) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace detail

inline Grid build_grid_impl(const NestedDomains& domains, int resolution) {
  if (resolution < 8) throw GeometryError("resolution must be at least 8");
  const Box& box = domains.outer.bounding_box;
  if (!box.finite()) throw GeometryError("outer domain bounding box must be finite");

  Grid g;
  const Vec2 extent = box.hi - box.lo;
  g.h_ = extent.maxCoeff() / (resolution - 1);
  constexpr int pad = 2;
  g.nx_ = static_cast<int>(std::ceil(extent.x() / g.h_ - 1e-9)) + 1 + 2 * pad;
  g.ny_ = static_cast<int>(std::ceil(extent.y() / g.h_ - 1e-9)) + 1 + 2 * pad;
  g.origin_ = box.lo - pad * g.h_ * Vec2(1, 1);

  const Index n = g.size();
  g.kind_.assign(n, NodeKind::exterior);
  g.rho_.resize(n);
  g.rho0_.resize(n);
  for (Index k = 0; k < n; ++k) {
    const Vec2 p = g.position(k);
    g.rho_[k] = domains.outer(p);
    g.rho0_[k] = domains.inner(p);
    if (g.rho_[k] < 0) {
      g.kind_[k] = g.rho0_[k] < 0 ? NodeKind::interior : NodeKind::annulus;
      g.inside_.push_back(k);
      if (g.rho0_[k] < 0) g.inner_.push_back(k);
    } else if (g.rho0_[k] < 0) {
      throw GeometryError("inner domain node lies outside the outer domain");
    }
  }
  if (g.inner_.empty()) throw GeometryError("inner domain contains no grid node");

  for (Index k = 0; k < n; ++k) {
    if (g.inside(k)) continue;
    for (const auto& d : Grid::kNeighbors) {
      const Index m = g.neighbor(k, d[0], d[1]);
      if (m >= 0 && g.inside(m)) {
        g.kind_[k] = NodeKind::boundary;
        break;
      }
    }
  }

  // A boundary node at the lattice edge would lack neighbours; padding rules it out.
  g.link_index_.assign(n, -1);
  g.near_boundary_.assign(n, 0);
  const double tol_t = 1e-2 * g.h_;  // segment length is h
  for (Index k = 0; k < n; ++k) {
    if (g.kind_[k] != NodeKind::boundary) continue;
    const int i = g.col(k), j = g.row(k);
    if (i == 0 || j == 0 || i == g.nx_ - 1 || j == g.ny_ - 1)
      throw GeometryError("boundary node on lattice edge");
    BoundaryLink best;
    std::array<int, 2> best_d{0, 0};
    bool have = false, best_quadratic = false;
    for (const auto& d : Grid::kNeighbors) {
      const Index in1 = g.neighbor(k, -d[0], -d[1]);
      if (in1 < 0 || !g.inside(in1)) continue;
      const Index in2 = g.neighbor(k, -2 * d[0], -2 * d[1]);
      const bool quadratic = in2 >= 0 && g.inside(in2);
      const Vec2 a = g.position(in1), b = g.position(k);
      const double t = detail::bisect_segment(domains.outer.rho, a, b, tol_t / (b - a).norm());
      const bool better = !have || (quadratic && !best_quadratic) || (quadratic == best_quadratic && t > best.theta);
      if (!better) continue;
      have = true;
      best_quadratic = quadratic;
      best.ghost = k;
      best.in1 = in1;
      best.in2 = quadratic ? in2 : -1;
      best.theta = t;
      best.foot = a + t * (b - a);
      best_d = d;
    }
    if (!have) throw GeometryError("boundary node without inside neighbour");
    const double t = std::max(best.theta, 1e-8);
    best.theta = t;
    const Index in3 = g.neighbor(k, -3 * best_d[0], -3 * best_d[1]);
    if (best.in2 >= 0 && t < 0.5 && in3 >= 0 && g.inside(in3)) {
      // foot hugs in1: skip it and interpolate through nodes at -2, -1 and the
      // ghost at 1, which keeps the ghost weight above 1/3
      best.in1 = best.in2;
      best.in2 = in3;
      best.weights = {(t + 1.0) * (t + 2.0) / 6.0, -0.5 * (t - 1.0) * (t + 2.0), (t - 1.0) * (t + 1.0) / 3.0};
    } else if (best.in2 >= 0) {
      // Lagrange weights at offset t for nodes at -1 (in2), 0 (in1), 1 (ghost).
      best.weights = {0.5 * t * (t + 1.0), 1.0 - t * t, 0.5 * t * (t - 1.0)};
    } else {
      best.weights = {t, 1.0 - t, 0.0};
    }
    g.link_index_[k] = static_cast<Index>(g.links_.size());
    g.links_.push_back(best);
  }

  for (Index k : g.inside_)
    for (const auto& d : Grid::kNeighbors) {
      const Index m = g.neighbor(k, d[0], d[1]);
      if (m < 0 || g.kind_[m] == NodeKind::exterior)
        throw StencilError("inside node without a complete stencil");
      if (g.kind_[m] == NodeKind::boundary) g.near_boundary_[k] = 1;
    }
  return g;
}

inline GridPtr build_grid(const NestedDomains& domains, int resolution) {
  return std::make_shared<const Grid>(build_grid_impl(domains, resolution));
}

/// Node-indexed real values on a grid. Exterior entries are zero and ignored.
class ScalarField {
public:
  ScalarField() = default;
  explicit ScalarField(GridPtr grid, double fill = 0.0) : grid_(std::move(grid)), v_(grid_->size(), 0.0) {
    for (Index k = 0; k < grid_->size(); ++k)
      if (grid_->active(k)) v_[k] = fill;
  }
  ScalarField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), v_(std::move(values)) {
    if (static_cast<Index>(v_.size()) != grid_->size()) throw Error("field size does not match grid");
  }

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  double operator[](Index k) const { return v_[k]; }
  double& operator[](Index k) { return v_[k]; }
  const std::vector<double>& values() const { return v_; }
  std::vector<double>& values() { return v_; }

  /// max |v| over inside nodes
  double sup_inside() const {
    double s = 0;
    for (Index k : grid_->inside_nodes()) s = std::max(s, std::abs(v_[k]));
    return s;
  }

  /// Value of the field at the foot point of a link (quadratic interpolation).
  double trace(const BoundaryLink& l) const {
    double s = l.weights[0] * v_[l.ghost] + l.weights[1] * v_[l.in1];
    if (l.in2 >= 0) s += l.weights[2] * v_[l.in2];
    return s;
  }

  ScalarField& operator+=(const ScalarField& o) {
    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] += o.v_[k];
    return *this;
  }
  ScalarField& operator-=(const ScalarField& o) {
    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] -= o.v_[k];
    return *this;
  }
  ScalarField& operator*=(double s) {
    for (double& x : v_) x *= s;
    return *this;
  }
  friend ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
  friend ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
  friend ScalarField operator*(double s, ScalarField a) { return a *= s; }

private:
  GridPtr grid_;
  std::vector<double> v_;
};

/// Evaluates fn at every active node, ghosts included.
inline ScalarField sample(const GridPtr& grid, const RealFn& fn) {
  ScalarField f(grid);
  for (Index k = 0; k < grid->size(); ++k)
    if (grid->active(k)) f[k] = fn(grid->position(k));
  return f;
}

/// Field holding g at the boundary foot points (stored on the ghost nodes);
/// zero elsewhere.
inline ScalarField extend_boundary_data(const RealFn& g, const GridPtr& grid) {
  ScalarField f(grid);
  for (const auto& l : grid->links()) f[l.ghost] = g(l.foot);
  return f;
}

/// Overwrites ghost values so that each link reproduces g at its foot point,
/// keeping inside values fixed.
inline void impose_boundary(ScalarField& u, const RealFn& g) {
  for (const auto& l : u.grid().links()) {
    double rest = l.weights[1] * u[l.in1];
    if (l.in2 >= 0) rest += l.weights[2] * u[l.in2];
    u[l.ghost] = (g(l.foot) - rest) / l.weights[0];
  }
}

/// mu_eps = phi + eps^(1/(3 n^2)) (e^rho - 1), evaluated nodewise.
inline ScalarField mu_epsilon(const ScalarField& phi, double eps, int n = 2) {
  if (!(eps > 0)) throw Error("mu_epsilon requires eps > 0");
  const double coef = std::pow(eps, 1.0 / (3.0 * n * n));
  ScalarField mu = phi;
  const Grid& g = phi.grid();
  for (Index k = 0; k < g.size(); ++k)
    if (g.active(k)) mu[k] = phi[k] + coef * (std::exp(g.rho(k)) - 1.0);
  return mu;
}

inline RealFn mu_epsilon_fn(const RealFn& phi, const RealFn& rho, double eps, int n = 2) {
  const double coef = std::pow(eps, 1.0 / (3.0 * n * n));
  return [=](const Vec2& p) { return phi(p) + coef * (std::exp(rho(p)) - 1.0); };
}

} // namespace abreu
