#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>

#include "abreu/oracle.hpp"
#include "dense_reference.hpp"

using namespace abreu;
using namespace abreu::testing;

namespace {

const RealFn kPhi = [](const Vec2& x) { return 0.5 * x.squaredNorm(); };

GridPtr small_grid(int res) { return build_grid(NestedDomains::concentric_disks(1.0, 0.5), res); }

} // namespace

TEST(Oracle, MatchesDenseReferenceOnTinyInstance) {
  const auto g = small_grid(9);
  const Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  const OracleResult res = solve_constrained(L, kPhi, g);
  const ScalarField fixed = pinned_boundary_field(g, kPhi);
  const auto free = sorted_inner(*g);
  ASSERT_GE(free.size(), 5u);
  const DenseReference ref(fixed, free);

  // the objective is quadratic in the free values, so differences are exact up to rounding
  const double d = 1e-2;
  const Index n = static_cast<Index>(free.size());
  auto f = [&](const Eigen::VectorXd& x) { return objective(with_values(fixed, free, x), L); };
  auto df = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd gr(n);
    for (Index i = 0; i < n; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e[i] = d;
      gr[i] = (f(x + e) - f(x - e)) / (2 * d);
    }
    return gr;
  };
  auto d2f = [&](const Eigen::VectorXd& x) {
    Eigen::MatrixXd H(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        Eigen::VectorXd ei = Eigen::VectorXd::Zero(n), ej = Eigen::VectorXd::Zero(n);
        ei[i] = d;
        ej[j] = d;
        H(i, j) = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * d * d);
      }
    return H;
  };
  const Eigen::VectorXd x = ref.solve(f, df, d2f, ref.gather());
  const ScalarField dense = with_values(fixed, free, x);
  EXPECT_NEAR(res.objective, objective(dense, L), 1e-9);
  for (Index k : free) EXPECT_NEAR(res.u_star[k], dense[k], 1e-4);
  EXPECT_GT(res.active_constraint_fraction, 0.0);
}

TEST(Oracle, ProjectionMatchesDenseReference) {
  const auto g = small_grid(9);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N(0, 0.05);
  ScalarField y = pinned_boundary_field(g, kPhi);
  const auto free = sorted_inner(*g);
  for (Index k : free) y[k] += N(rng) - 0.3 * std::exp(-8 * g->position(k).squaredNorm());
  std::vector<char> mask(g->size(), 0);
  for (Index k : free) mask[k] = 1;
  const ScalarField p = project_to_convex(y, &mask);

  const DenseReference ref(y, free);
  const Eigen::VectorXd y0 = ref.gather();
  ASSERT_FALSE(ref.feasible(y0));
  const Index n = static_cast<Index>(free.size());
  const Eigen::VectorXd start = DenseReference(pinned_boundary_field(g, kPhi), free).gather();
  const Eigen::VectorXd x = ref.solve([&](const Eigen::VectorXd& v) { return 0.5 * (v - y0).squaredNorm(); },
                                      [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(v - y0); },
                                      [&](const Eigen::VectorXd&) { return Eigen::MatrixXd(Eigen::MatrixXd::Identity(n, n)); },
                                      start);
  for (Index i = 0; i < n; ++i) EXPECT_NEAR(p[free[i]], x[i], 1e-5);
}

TEST(Oracle, ProjectionIsIdempotentAndFixesFeasiblePoints) {
  const auto g = small_grid(17);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N(0, 0.02);
  ScalarField y = sample(g, kPhi);
  for (Index k : g->inside_nodes()) y[k] += N(rng);
  const ScalarField p = project_to_convex(y);
  EXPECT_TRUE(certify_convexity(p, -1e-6).is_convex);
  const ScalarField pp = project_to_convex(p);
  for (Index k : g->inside_nodes()) EXPECT_NEAR(pp[k], p[k], 1e-6);
  const ScalarField c = sample(g, [](const Vec2& x) { return std::cosh(x.x()) + x.y() * x.y(); });
  const ScalarField pc = project_to_convex(c);
  for (Index k : g->inside_nodes()) EXPECT_EQ(pc[k], c[k]);
}

TEST(Oracle, NoFeasiblePerturbationImproves) {
  const auto g = small_grid(17);
  const Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  const OracleResult res = solve_constrained(L, kPhi, g);
  const auto free = sorted_inner(*g);
  std::vector<char> mask(g->size(), 0);
  for (Index k : free) mask[k] = 1;
  const DenseReference check(res.u_star, free);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> N;
  int tested = 0;
  for (int i = 0; i < 100; ++i) {
    const double size = 1e-3 * std::pow(10.0, i % 3);
    ScalarField y = res.u_star;
    for (Index k : free) y[k] += size * N(rng);
    const ScalarField z = project_to_convex(y, &mask);
    const Eigen::VectorXd zx = DenseReference(z, free).gather();
    if (check.min_eigenvalue(zx) < -1e-7) continue;  // independently verified feasibility
    ++tested;
    EXPECT_GE(objective(z, L), res.objective - 1e-9);
  }
  EXPECT_GE(tested, 90);
}

TEST(Oracle, InactiveConstraintReproducesSmoothMinimizer) {
  // F = |p|^2/2 + z: minimizer solves Lap u = 1, and |x|^2/4 is convex
  Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  L.F0 = [](const Vec2&, double z) { return z; };
  L.F0_z = [](const Vec2&, double) { return 1.0; };
  L.F1 = [](const Vec2&, const Vec2& p) { return 0.5 * p.squaredNorm(); };
  L.F1_p = [](const Vec2&, const Vec2& p) -> Vec2 { return p; };
  L.F1_px = [](const Vec2&, const Vec2&) -> Mat2 { return Mat2::Zero(); };
  const RealFn phi = [](const Vec2& x) { return 0.25 * x.squaredNorm(); };
  auto err = [&](int res) {
    const auto g = small_grid(res);
    const OracleResult r = solve_constrained(L, phi, g);
    // the interface with the pinned annulus may touch the constraint; the bulk may not
    double e = 0;
    for (Index k : g->inner_nodes()) {
      e = std::max(e, std::abs(r.u_star[k] - phi(g->position(k))));
      if (g->position(k).norm() <= 0.3) EXPECT_GT(hessian_at(r.u_star, k).min_eigenvalue(), 0.2);
    }
    return e;
  };
  const double e1 = err(17), e2 = err(33);
  EXPECT_LT(e2, e1);
  EXPECT_LT(e2, 5e-3);
}

TEST(Oracle, ConvergesTowardRadialMinimizer) {
  // slope min(1.5 r, 0.5), continuous with phi at r = 1/2
  const RealFn exact = [](const Vec2& x) {
    const double r = x.norm();
    return r <= 1.0 / 3 ? 0.75 * r * r - 1.0 / 24 : 0.5 * r - 0.125;
  };
  const Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  auto err = [&](int res) {
    const auto g = small_grid(res);
    const OracleResult r = solve_constrained(L, kPhi, g);
    EXPECT_TRUE(r.lipschitz_ok);
    double e = 0;
    for (Index k : g->inner_nodes())
      if (g->position(k).norm() <= 0.4) e = std::max(e, std::abs(r.u_star[k] - exact(g->position(k))));
    return e;
  };
  const double e1 = err(17), e2 = err(33);
  EXPECT_LT(e2, e1);
  EXPECT_LT(e2, 0.02);
}
