#pragma once

// Sections S_u(x, h) = {u(y) < u(x) + Du(x).(y - x) + h}, their John
// normalization and the associated rescaling, the twisted-gauge transform of
// the coupled equation, and empirical Harnack / decay / Hoelder measurements.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "abreu/abreu_solver.hpp"
#include "abreu/calculus.hpp"
#include "abreu/error.hpp"
#include "abreu/functional.hpp"
#include "abreu/grid.hpp"

namespace abreu {

/// x = A y + b maps the normalized frame to the physical one.
struct AffineMap {
  Mat2 A = Mat2::Identity();
  Vec2 b = Vec2::Zero();
  Vec2 operator()(const Vec2& y) const { return A * y + b; }
  Vec2 inverse(const Vec2& x) const { return A.inverse() * (x - b); }
};

struct Section {
  Vec2 center{0, 0};
  Index center_node = -1;
  double height = 0;
  Vec2 slope{0, 0};  // Du(x*)
  double base = 0;   // u(x*)
  std::vector<Index> node_set;
  double volume = 0;  // cut-cell measure
  AffineMap john_map;
  /// radii of the normalized section: (inscribed, circumscribed)
  std::pair<double, double> normalized_radius_check{0, 0};
  double cell_tolerance = 0;  // one grid cell in normalized units
};

inline Index nearest_inside_node(const Grid& g, const Vec2& x) {
  Index best = -1;
  double d = std::numeric_limits<double>::infinity();
  for (Index k : g.inside_nodes()) {
    const double e = (g.position(k) - x).squaredNorm();
    if (e < d) {
      d = e;
      best = k;
    }
  }
  return best;
}

namespace detail {

/// Area fraction of {l < 0} in the unit square for bilinear l with the given
/// corner values (sw, se, nw, ne), by midpoint subsampling.
inline double cut_fraction(double sw, double se, double nw, double ne) {
  if (sw < 0 && se < 0 && nw < 0 && ne < 0) return 1.0;
  if (sw >= 0 && se >= 0 && nw >= 0 && ne >= 0) return 0.0;
  constexpr int m = 16;
  int in = 0;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const double s = (i + 0.5) / m, t = (j + 0.5) / m;
      const double v = (1 - s) * (1 - t) * sw + s * (1 - t) * se + (1 - s) * t * nw + s * t * ne;
      if (v < 0) ++in;
    }
  return static_cast<double>(in) / (m * m);
}

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

inline std::vector<Vec2> convex_hull(std::vector<Vec2> p) {
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (p.size() < 3) return p;
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
    h[k++] = p[i - 1];
  }
  h.resize(k - 1);
  return h;
}

} // namespace detail

/// Minimum-volume enclosing ellipse {c + L y : |y| <= 1} (Khachiyan).
inline AffineMap min_volume_ellipse(const std::vector<Vec2>& pts, double tol = 1e-6) {
  const int m = static_cast<int>(pts.size());
  if (m < 3) throw SectionError(SectionError::Kind::degenerate, "too few points for an ellipse");
  Eigen::Matrix<double, 3, Eigen::Dynamic> Q(3, m);
  for (int j = 0; j < m; ++j) Q.col(j) << pts[j], 1.0;
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 1.0 / m);
  const double d = 2;
  for (int it = 0; it < 100000; ++it) {
    const Eigen::Matrix3d X = Q * u.asDiagonal() * Q.transpose();
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(X);
    if (!lu.isInvertible()) throw SectionError(SectionError::Kind::degenerate, "section hull is lower-dimensional");
    const Eigen::Matrix3d Xi = lu.inverse();
    int j = 0;
    double Mj = -1;
    for (int i = 0; i < m; ++i) {
      const double v = Q.col(i).dot(Xi * Q.col(i));
      if (v > Mj) {
        Mj = v;
        j = i;
      }
    }
    const double step = (Mj - d - 1) / ((d + 1) * (Mj - 1));
    u *= (1 - step);
    u[j] += step;
    if (step < tol) break;
  }
  Vec2 c = Vec2::Zero();
  for (int j = 0; j < m; ++j) c += u[j] * pts[j];
  Mat2 S = Mat2::Zero();
  for (int j = 0; j < m; ++j) S += u[j] * pts[j] * pts[j].transpose();
  S -= c * c.transpose();
  // ellipse {(x-c)' (S d)^-1 (x-c) <= 1}: L = sqrt(d S)
  const Eigen::SelfAdjointEigenSolver<Mat2> es(d * S);
  if (es.eigenvalues().minCoeff() <= 0)
    throw SectionError(SectionError::Kind::degenerate, "section hull is lower-dimensional");
  AffineMap E;
  E.A = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  E.b = c;
  return E;
}

inline double section_level(const ScalarField& u, const Section& s, Index k) {
  const Grid& g = u.grid();
  return u[k] - s.base - s.slope.dot(g.position(k) - s.center) - s.height;
}

/// Node set and cut-cell volume of S_u(x*, h); x* snaps to the nearest inside node.
inline Section compute_section(const ScalarField& u, const Vec2& x_star, double h) {
  if (!(h > 0)) throw SectionError(SectionError::Kind::empty, "section height must be positive");
  const Grid& g = u.grid();
  Section s;
  s.center_node = nearest_inside_node(g, x_star);
  if (s.center_node < 0 || g.near_boundary(s.center_node))
    throw SectionError(SectionError::Kind::not_compactly_contained, "section center is not interior");
  s.center = g.position(s.center_node);
  s.height = h;
  s.slope = gradient_at(u, s.center_node);
  s.base = u[s.center_node];
  for (Index k = 0; k < g.size(); ++k) {
    if (!g.active(k) || !(section_level(u, s, k) < 0)) continue;
    if (!g.inside(k) || g.near_boundary(k))
      throw SectionError(SectionError::Kind::not_compactly_contained, "section reaches the boundary");
    s.node_set.push_back(k);
  }
  int axis = 0;
  for (int d = 0; d < 4; ++d) {
    const Index m = g.neighbor(s.center_node, Grid::kNeighbors[d][0], Grid::kNeighbors[d][1]);
    if (section_level(u, s, m) < 0) ++axis;
  }
  if (axis == 0) throw SectionError(SectionError::Kind::empty, "section height below grid resolution");

  for (int j = 0; j + 1 < g.ny(); ++j)
    for (int i = 0; i + 1 < g.nx(); ++i) {
      const Index sw = g.index(i, j), se = g.index(i + 1, j), nw = g.index(i, j + 1), ne = g.index(i + 1, j + 1);
      if (!(g.active(sw) && g.active(se) && g.active(nw) && g.active(ne))) continue;
      s.volume += detail::cut_fraction(section_level(u, s, sw), section_level(u, s, se), section_level(u, s, nw),
                                       section_level(u, s, ne));
    }
  s.volume *= g.cell_area();
  return s;
}

/// Affine map T with B_1 inside T^{-1}(S) (bounded by the nearest excluded
/// node) built from the minimum-volume enclosing ellipse of the section's
/// nodes shrunk about its center; records the normalized radii.
inline void john_normalize(Section& s, const ScalarField& u) {
  const Grid& g = u.grid();
  if (s.node_set.size() < 25)
    throw SectionError(SectionError::Kind::degenerate, "section needs at least 25 nodes for normalization");
  std::vector<Vec2> pts;
  pts.reserve(s.node_set.size());
  for (Index k : s.node_set) pts.push_back(g.position(k));
  const std::vector<Vec2> hull = detail::convex_hull(pts);
  if (hull.size() < 3) throw SectionError(SectionError::Kind::degenerate, "section hull is lower-dimensional");
  const AffineMap E = min_volume_ellipse(hull);
  const Mat2 Ei = E.A.inverse();

  std::vector<char> member(g.size(), 0);
  for (Index k : s.node_set) member[k] = 1;
  double t = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < g.size(); ++k)
    if (g.active(k) && !member[k]) t = std::min(t, (Ei * (g.position(k) - E.b)).norm());
  s.john_map.A = t * E.A;
  s.john_map.b = E.b;
  const Mat2 Ti = s.john_map.A.inverse();
  double outer = 0;
  for (Index k : s.node_set) outer = std::max(outer, (Ti * (g.position(k) - E.b)).norm());
  s.normalized_radius_check = {1.0, outer};
  s.cell_tolerance = g.spacing() * Ti.norm();
}

/// Bilinear interpolation of a nodal field; empty when a corner is exterior.
inline std::optional<double> interpolate(const ScalarField& f, const Vec2& x) {
  const Grid& g = f.grid();
  const Vec2 r = (x - g.origin()) / g.spacing();
  const int i = static_cast<int>(std::floor(r.x())), j = static_cast<int>(std::floor(r.y()));
  if (!g.in_lattice(i, j) || !g.in_lattice(i + 1, j + 1)) return std::nullopt;
  const Index sw = g.index(i, j), se = g.index(i + 1, j), nw = g.index(i, j + 1), ne = g.index(i + 1, j + 1);
  if (!(g.active(sw) && g.active(se) && g.active(nw) && g.active(ne))) return std::nullopt;
  const double s = r.x() - i, t = r.y() - j;
  return (1 - s) * (1 - t) * f[sw] + s * (1 - t) * f[se] + (1 - s) * t * f[nw] + s * t * f[ne];
}

struct RescaledProblem {
  GridPtr grid;
  ScalarField u;  // (det A_h)^{-2/n} u(Tx)
  MatrixField A;  // (det A_h)^{2/n} A_h^{-1} A(Tx) A_h^{-T}
  VectorField b;  // (det A_h)^{2/n} A_h^{-1} b(Tx)
  ScalarField f;  // (det A_h)^{2/n} f(Tx)
  std::vector<char> valid;  // all source data interpolable
  double det_Ah = 0;
  double det_min = 0, det_max = 0;  // of D^2 u over valid interior nodes
};

/// Normalized frame: a grid on the disk of radius n = 2 around the origin.
inline GridPtr normalized_grid(int resolution) {
  return build_grid(NestedDomains::concentric_disks(2.0, 1.0), resolution);
}

/// v(Tx) on the normalized grid; nodes outside the source data get NaN.
inline ScalarField pull_back(const ScalarField& v, const AffineMap& T, const GridPtr& target) {
  ScalarField out(target);
  for (Index k = 0; k < target->size(); ++k) {
    if (!target->active(k)) continue;
    const auto val = interpolate(v, T(target->position(k)));
    out[k] = val ? *val : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline RescaledProblem rescale_problem(const ScalarField& u, const MatrixField& A, const VectorField* b,
                                       const ScalarField& f, const AffineMap& T, int resolution = 65) {
  const double det = T.A.determinant();
  if (!(std::abs(det) >= 1e-12)) throw Error("normalizing map is singular");
  RescaledProblem r;
  r.grid = normalized_grid(resolution);
  r.det_Ah = det;
  const double s = det;  // (det A_h)^{2/n} with n = 2
  const Mat2 Ti = T.A.inverse();
  const Grid& src = u.grid();
  r.u = pull_back(u, T, r.grid);
  r.u *= 1.0 / s;
  r.f = pull_back(f, T, r.grid);
  r.f *= s;
  r.A = MatrixField(r.grid);
  r.b = VectorField(r.grid);
  r.valid.assign(r.grid->size(), 0);

  ScalarField comp(u.grid_ptr());
  auto pull_component = [&](auto get) {
    for (Index k = 0; k < src.size(); ++k) comp[k] = src.inside(k) ? get(k) : 0.0;
    ScalarField out = pull_back(comp, T, r.grid);
    return out;
  };
  const ScalarField a11 = pull_component([&](Index k) { return A[k].a; });
  const ScalarField a12 = pull_component([&](Index k) { return A[k].b; });
  const ScalarField a22 = pull_component([&](Index k) { return A[k].c; });
  ScalarField b1(r.grid), b2(r.grid);
  if (b) {
    b1 = pull_component([&](Index k) { return (*b)[k].x(); });
    b2 = pull_component([&](Index k) { return (*b)[k].y(); });
  }
  for (Index k = 0; k < r.grid->size(); ++k) {
    if (!r.grid->active(k)) continue;
    const double vals[] = {r.u[k], r.f[k], a11[k], a12[k], a22[k], b1[k], b2[k]};
    bool ok = true;
    for (double v : vals) ok = ok && std::isfinite(v);
    r.valid[k] = ok;
    if (!ok) continue;
    Mat2 M;
    M << a11[k], a12[k], a12[k], a22[k];
    r.A[k] = Sym2::from(s * Ti * M * Ti.transpose());
    r.b[k] = s * Ti * Vec2(b1[k], b2[k]);
  }
  r.det_min = std::numeric_limits<double>::infinity();
  r.det_max = 0;
  for (Index k : r.grid->inside_nodes()) {
    bool ok = r.valid[k];
    for (const auto& d : Grid::kNeighbors) ok = ok && r.valid[r.grid->neighbor(k, d[0], d[1])];
    if (!ok) continue;
    const double dt = hessian_at(r.u, k).det();
    r.det_min = std::min(r.det_min, dt);
    r.det_max = std::max(r.det_max, dt);
  }
  return r;
}

/// max over node pairs of |v(x) - v(y)| / |x - y|^alpha: exhaustive for at
/// most 2000 nodes, otherwise 1e5 seeded random pairs.
inline double holder_seminorm(const ScalarField& v, const std::vector<Index>& region, double alpha,
                              std::uint64_t seed = 0) {
  if (!(alpha > 0 && alpha <= 1)) throw Error("Hoelder exponent must lie in (0, 1]");
  const Grid& g = v.grid();
  double best = 0;
  auto pair = [&](Index a, Index b) {
    const double d = (g.position(a) - g.position(b)).norm();
    if (d > 0) best = std::max(best, std::abs(v[a] - v[b]) / std::pow(d, alpha));
  };
  const std::size_t n = region.size();
  if (n <= 2000) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pair(region[i], region[j]);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int s = 0; s < 100000; ++s) pair(region[pick(rng)], region[pick(rng)]);
  }
  return best;
}

/// Empirical Hoelder exponent: slope of log(max oscillation over pairs at
/// distance ~r) against log r for dyadic r, clamped to (0, 1].
inline double holder_exponent(const ScalarField& v, const std::vector<Index>& region) {
  const Grid& g = v.grid();
  const double h = g.spacing();
  std::vector<double> lr, lo;
  for (int s = 1; s <= 8; s *= 2) {
    double osc = 0;
    for (Index k : region)
      for (const auto& d : Grid::kNeighbors) {
        const Index m = g.neighbor(k, s * d[0], s * d[1]);
        if (m >= 0 && g.inside(m)) osc = std::max(osc, std::abs(v[k] - v[m]));
      }
    if (osc > 0) {
      lr.push_back(std::log(s * h));
      lo.push_back(std::log(osc));
    }
  }
  if (lr.size() < 2) return 1.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lr.size(); ++i) {
    mx += lr[i];
    my += lo[i];
  }
  mx /= lr.size();
  my /= lr.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lr.size(); ++i) {
    sxy += (lr[i] - mx) * (lo[i] - my);
    sxx += (lr[i] - mx) * (lr[i] - mx);
  }
  return std::clamp(sxy / sxx, 1e-3, 1.0);
}

struct TwistBundle {
  Vec2 anchor{0, 0};
  Index anchor_node = -1;
  ScalarField G;
  VectorField b;
  ScalarField f;    // ((f_eps + D* Lap u) / eps) G
  ScalarField eta;  // w G
  double gamma = 1;
  double gamma_seminorm = 0;
  double K_stat = 0;
  std::vector<Index> nodes;  // inside nodes away from the boundary layer
};

/// Gauge G = exp(D* |Du - Du(z)|^2 / 2eps), drift b = -det D^2 u (D*/eps)(Du - Du(z))
/// and eta = w G, at inside nodes with a full gradient stencil.
inline TwistBundle twist_bundle(const AbreuState& s, const AbreuProblem& P, const Vec2& z, double gamma = -1) {
  const Grid& g = s.u.grid();
  TwistBundle t;
  t.anchor_node = nearest_inside_node(g, z);
  if (t.anchor_node < 0 || g.near_boundary(t.anchor_node)) throw Error("twist anchor must be an interior node");
  t.anchor = g.position(t.anchor_node);
  const double Ds = P.L.D_star;
  const Vec2 pz = gradient_at(s.u, t.anchor_node);
  const ScalarField mu = mu_epsilon(sample(P.grid, P.phi), s.eps);
  const FepsilonField fe = assemble_f_epsilon(s.u, P.L, s.eps, mu);

  t.G = ScalarField(s.u.grid_ptr(), 0.0);
  t.eta = ScalarField(s.u.grid_ptr(), 0.0);
  t.f = ScalarField(s.u.grid_ptr(), 0.0);
  t.b = VectorField(s.u.grid_ptr());
  for (Index k : g.inside_nodes()) {
    if (g.near_boundary(k)) continue;
    t.nodes.push_back(k);
    const Vec2 dp = k == t.anchor_node ? Vec2::Zero() : Vec2(gradient_at(s.u, k) - pz);
    const Sym2 H = hessian_at(s.u, k);
    t.G[k] = std::exp(Ds * dp.squaredNorm() / (2 * s.eps));
    t.b[k] = -H.det() * (Ds / s.eps) * dp;
    t.eta[k] = s.w[k] * t.G[k];
    t.f[k] = (fe.f[k] + Ds * H.trace()) / s.eps * t.G[k];
  }
  if (gamma <= 0) {
    std::vector<Index> interior;
    for (Index k : t.nodes) {
      bool ok = true;
      for (const auto& d : Grid::kNeighbors) ok = ok && !g.near_boundary(g.neighbor(k, d[0], d[1]));
      if (ok) interior.push_back(k);
    }
    ScalarField d1(s.u.grid_ptr()), d2(s.u.grid_ptr());
    for (Index k : g.inside_nodes()) {
      const Vec2 p = gradient_at(s.u, k);
      d1[k] = p.x();
      d2[k] = p.y();
    }
    gamma = std::min(holder_exponent(d1, interior), holder_exponent(d2, interior));
  }
  t.gamma = gamma;
  double bsup = 0;
  for (Index k : t.nodes) {
    const double d = (g.position(k) - t.anchor).norm();
    if (d > 0) t.gamma_seminorm = std::max(t.gamma_seminorm, std::abs(t.G[k] - 1) / std::pow(d, gamma));
    bsup = std::max(bsup, t.b[k].norm());
  }
  t.K_stat = bsup + t.gamma_seminorm;
  return t;
}

struct TransformedResidual {
  ScalarField residual;
  ScalarField scale;  // max of the three term magnitudes, nodewise
  std::vector<Index> nodes;
};

/// U:D^2 eta + b.D eta - f of the twisted transform, at nodes whose stencil
/// lies in the twist bundle's domain.
inline TransformedResidual transformed_residual(const AbreuState& s, const TwistBundle& t) {
  const Grid& g = s.u.grid();
  TransformedResidual r{ScalarField(s.u.grid_ptr()), ScalarField(s.u.grid_ptr()), {}};
  for (Index k : t.nodes) {
    bool ok = true;
    for (const auto& d : Grid::kNeighbors) {
      const Index m = g.neighbor(k, d[0], d[1]);
      ok = ok && g.inside(m) && !g.near_boundary(m);
    }
    if (!ok) continue;
    const Sym2 U = hessian_at(s.u, k).cofactor();
    const double second = U.contract(hessian_at(t.eta, k));
    const double drift = t.b[k].dot(gradient_at(t.eta, k));
    r.residual[k] = second + drift - t.f[k];
    r.scale[k] = std::max({std::abs(second), std::abs(drift), std::abs(t.f[k])});
    r.nodes.push_back(k);
  }
  return r;
}

/// sup / inf of v over the node set of S_u(x*, h/8).
inline double harnack_quotient(const ScalarField& v, const ScalarField& u, const Vec2& x_star, double h) {
  const Section s = compute_section(u, x_star, h / 8);
  double sup = -std::numeric_limits<double>::infinity(), inf = std::numeric_limits<double>::infinity();
  for (Index k : s.node_set) {
    if (v[k] < 0) throw Error("Harnack quotient requires a nonnegative function");
    sup = std::max(sup, v[k]);
    inf = std::min(inf, v[k]);
  }
  if (inf == 0) return std::numeric_limits<double>::infinity();
  return sup / inf;
}

struct DecayFit {
  double exponent = 0;  // fitted eps-hat in |{v > t}| ~ t^{-eps-hat}
  double residual = 0;  // rms of the log-log fit
  int used = 0;
  std::vector<double> thresholds, fractions;
};

/// Least-squares slope of log |{v > t} cap S|/|S| against log t over the
/// thresholds whose fraction lies in (0.001, 0.5).
inline DecayFit distribution_decay(const ScalarField& v, const Section& s, const std::vector<double>& thresholds) {
  DecayFit fit;
  std::vector<double> lx, ly;
  const double total = static_cast<double>(s.node_set.size());
  for (double t : thresholds) {
    if (!(t > 0)) continue;
    double above = 0;
    for (Index k : s.node_set)
      if (v[k] > t) above += 1;
    const double frac = above / total;
    fit.thresholds.push_back(t);
    fit.fractions.push_back(frac);
    if (frac > 0.001 && frac < 0.5) {
      lx.push_back(std::log(t));
      ly.push_back(std::log(frac));
    }
  }
  fit.used = static_cast<int>(lx.size());
  if (lx.size() < 3) throw InsufficientDecadeCoverage("fewer than 3 thresholds with usable level-set fractions");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= lx.size();
  my /= lx.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  const double slope = sxy / sxx;
  fit.exponent = -slope;
  double ss = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - (my + slope * (lx[i] - mx));
    ss += e * e;
  }
  fit.residual = std::sqrt(ss / lx.size());
  return fit;
}

} // namespace abreu
