#include <gtest/gtest.h>

#include <cmath>

#include "abreu/ma_solver.hpp"

using namespace abreu;

TEST(MaSolver, QuadraticIsExact) {
  auto grid = build_grid(NestedDomains::concentric_disks(1.0, 0.5), 33);
  const RealFn phi = [](const Vec2& x) { return 0.5 * x.squaredNorm(); };
  const ScalarField g(grid, 1.0);
  const auto sol = solve_dirichlet_ma_detailed(g, phi);
  double err = 0;
  for (Index k : grid->inside_nodes()) err = std::max(err, std::abs(sol.u[k] - phi(grid->position(k))));
  EXPECT_LT(err, 1e-8);
}

namespace {

GridPtr disk(int res) { return build_grid(NestedDomains::concentric_disks(1.0, 0.5), res); }

double exp_error(int res) {
  const auto grid = disk(res);
  const RealFn u = [](const Vec2& x) { return std::exp(0.5 * x.squaredNorm()); };
  const ScalarField g = sample(grid, [](const Vec2& x) { return std::exp(x.squaredNorm()) * (1 + x.squaredNorm()); });
  const auto sol = solve_dirichlet_ma_detailed(g, u);
  EXPECT_TRUE(sol.certificate.is_convex);
  double err = 0;
  for (Index k : grid->inside_nodes()) err = std::max(err, std::abs(sol.u[k] - u(grid->position(k))));
  return err;
}

} // namespace

TEST(MaSolver, ManufacturedExponentialConvergesSecondOrder) {
  const double e1 = exp_error(17), e2 = exp_error(33), e3 = exp_error(65);
  EXPECT_GT(e1 / e2, 3.0);
  EXPECT_GT(e2 / e3, 3.0);
  EXPECT_LT(e3, 1e-3);
}

TEST(MaSolver, ConstantFourGivesSquaredNorm) {
  const auto grid = disk(33);
  const RealFn phi = [](const Vec2& x) { return x.squaredNorm(); };
  const auto sol = solve_dirichlet_ma_detailed(ScalarField(grid, 4.0), phi);
  for (Index k : grid->inside_nodes()) EXPECT_NEAR(sol.u[k], phi(grid->position(k)), 1e-8);
  EXPECT_LE(sol.residual, 1e-8);
}

TEST(MaSolver, LargerRightHandSideLiesBelow) {
  const auto grid = disk(33);
  const RealFn phi = [](const Vec2& x) { return 0.5 * x.squaredNorm() + 0.2 * x.x(); };
  const ScalarField g1 = sample(grid, [](const Vec2& x) { return 1.0 + 0.5 * x.x() * x.x(); });
  ScalarField g2 = g1;
  for (Index k : grid->inside_nodes()) g2[k] *= 1.5;
  const ScalarField u1 = solve_dirichlet_ma(g1, phi), u2 = solve_dirichlet_ma(g2, phi);
  for (Index k : grid->inside_nodes()) EXPECT_LE(u2[k], u1[k] + 1e-10);
}

TEST(MaSolver, AffineBoundaryShiftIsEquivariant) {
  const auto grid = disk(33);
  const RealFn phi = [](const Vec2& x) { return std::cosh(x.x()) + 0.5 * x.y() * x.y(); };
  const RealFn aff = [](const Vec2& x) { return 0.3 * x.x() - 0.7 * x.y() + 2.0; };
  const ScalarField g = sample(grid, [](const Vec2& x) { return 1.0 + 0.3 * x.y(); });
  const ScalarField u = solve_dirichlet_ma(g, phi);
  const ScalarField w = solve_dirichlet_ma(g, [&](const Vec2& x) { return phi(x) + aff(x); });
  for (Index k : grid->inside_nodes()) EXPECT_NEAR(w[k] - u[k], aff(grid->position(k)), 1e-8);
}

TEST(MaSolver, WarmStartReachesSameSolution) {
  const auto grid = disk(33);
  const RealFn phi = [](const Vec2& x) { return 0.5 * x.squaredNorm(); };
  const ScalarField g = sample(grid, [](const Vec2& x) { return 2.0 - x.x() * x.x() * 0.5; });
  const ScalarField cold = solve_dirichlet_ma(g, phi);
  const ScalarField guess = sample(grid, phi);
  const auto warm = solve_dirichlet_ma_detailed(g, phi, {}, &guess);
  for (Index k : grid->inside_nodes()) EXPECT_NEAR(warm.u[k], cold[k], 1e-7);
}

TEST(MaSolver, Errors) {
  const auto grid = disk(17);
  const RealFn phi = [](const Vec2& x) { return 0.5 * x.squaredNorm(); };
  EXPECT_THROW(solve_dirichlet_ma(ScalarField(grid, 0.0), phi), Error);
  EXPECT_THROW(solve_dirichlet_ma(ScalarField(grid, -1.0), phi), Error);
  MaOptions opt;
  opt.max_iter = 1;
  opt.tol = 1e-14;
  const ScalarField g = sample(grid, [](const Vec2& x) { return std::exp(x.squaredNorm()) * (1 + x.squaredNorm()); });
  EXPECT_THROW(solve_dirichlet_ma(g, phi, opt), NonConvergence);
}
