#include <gtest/gtest.h>

#include <cmath>

#include "abreu/lagrangian.hpp"

using namespace abreu;

TEST(RochetChone, QuadraticCostHasIdentityHessian) {
  const Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  EXPECT_DOUBLE_EQ(L.D_star, 1.0);
  for (const Vec2& p : {Vec2(0.3, -1.2), Vec2(0, 0), Vec2(2, 1)}) {
    const Mat2 H = L.F1_pp(Vec2(0.1, 0.2), p);
    EXPECT_NEAR((H - Mat2::Identity()).norm(), 0.0, 1e-14);
  }
}

TEST(RochetChone, F1AlongDiagonal) {
  const Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  for (const Vec2& x : {Vec2(0.3, -0.4), Vec2(1, 1), Vec2(-0.2, 0)})
    EXPECT_NEAR(L.F1(x, x), -0.5 * x.squaredNorm(), 1e-14);
}

TEST(RochetChone, CubicCostSecondDerivative) {
  const Lagrangian L = rochet_chone(3.0, Density::constant(1.0));
  EXPECT_NEAR(L.F1_pp(Vec2(0.2, 0.1), Vec2(1, 0))(0, 0), 2.0, 1e-12);
  const Lagrangian L2 = rochet_chone(3.0, Density::constant(1.5));
  EXPECT_NEAR(L2.F1_pp(Vec2(0.2, 0.1), Vec2(1, 0))(0, 0), 3.0, 1e-12);
}

TEST(RochetChone, DerivativesMatchFiniteDifferences) {
  const Lagrangian L = rochet_chone(2.5, Density::polynomial("1 + 0.3*x - 0.2*y^2"));
  const Vec2 x(0.3, -0.4), p(0.7, -0.5);
  const double d = 1e-6;
  for (int i = 0; i < 2; ++i) {
    const Vec2 e = Vec2::Unit(i) * d;
    EXPECT_NEAR(L.F1_p(x, p)(i), (L.F1(x, p + e) - L.F1(x, p - e)) / (2 * d), 1e-7);
    for (int j = 0; j < 2; ++j) {
      const Vec2 ej = Vec2::Unit(j) * d;
      EXPECT_NEAR(L.F1_pp(x, p)(i, j), (L.F1_p(x, p + ej)(i) - L.F1_p(x, p - ej)(i)) / (2 * d), 1e-6);
      EXPECT_NEAR(L.F1_px(x, p)(i, j), (L.F1_p(x + ej, p)(i) - L.F1_p(x - ej, p)(i)) / (2 * d), 1e-6);
    }
  }
  EXPECT_NEAR(L.F0_z(x, 0.4), (L.F0(x, 0.4 + d) - L.F0(x, 0.4 - d)) / (2 * d), 1e-7);
}

TEST(RochetChone, RejectsNonSuperlinearCost) {
  EXPECT_THROW(rochet_chone(1.0, Density::constant(1.0)), ConfigError);
  EXPECT_THROW(rochet_chone(0.5, Density::constant(1.0)), ConfigError);
}

TEST(Assumptions, RochetChoneHasNoViolations) {
  const auto rep = validate_assumptions(rochet_chone(2.0, Density::constant(1.0)), 2000);
  EXPECT_TRUE(rep.ok());
  EXPECT_EQ(rep.samples, 2000);
}

TEST(Assumptions, OversizedCurvatureIsReported) {
  Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  // F1 = 2 D* |p|^2 has F1_pp = 4 D* I
  L.F1 = [](const Vec2&, const Vec2& p) { return 2 * p.squaredNorm(); };
  L.F1_p = [](const Vec2&, const Vec2& p) -> Vec2 { return 4 * p; };
  L.F1_pp = [](const Vec2&, const Vec2&) -> Mat2 { return 4 * Mat2::Identity(); };
  L.F1_px = [](const Vec2&, const Vec2&) -> Mat2 { return Mat2::Zero(); };
  const auto rep = validate_assumptions(L, 200);
  ASSERT_FALSE(rep.ok());
  EXPECT_EQ(rep.violations.front().which, "F1_pp <= D*");
}

TEST(Assumptions, ConvexPolynomialF0AgreesWithDenseScan) {
  Lagrangian L = rochet_chone(2.0, Density::constant(1.0));
  L.F0 = [](const Vec2& x, double z) { return (1 + x.x() * x.x()) * z * z + std::pow(z, 4) + x.y() * z; };
  L.F0_z = [](const Vec2& x, double z) { return 2 * (1 + x.x() * x.x()) * z + 4 * std::pow(z, 3) + x.y(); };
  L.growth = [](double t) { return 1e6 * (1 + t); };
  const auto rep = validate_assumptions(L, 3000);
  int monotonicity = 0;
  for (const auto& v : rep.violations) monotonicity += v.which == "F0 monotonicity";
  EXPECT_EQ(monotonicity, 0);

  int scan_violations = 0;
  for (int i = 0; i < 10; ++i) {
    const Vec2 x(-1 + 0.2 * i, 0.5 - 0.1 * i);
    double prev = -std::numeric_limits<double>::infinity();
    for (int s = 0; s <= 2000; ++s) {
      const double z = -2 + 4.0 * s / 2000;
      const double fz = L.F0_z(x, z);
      scan_violations += fz < prev;
      prev = fz;
    }
  }
  EXPECT_EQ(scan_violations, monotonicity);
}

TEST(Assumptions, NeedsEnoughSamples) {
  EXPECT_THROW(validate_assumptions(rochet_chone(2.0, Density::constant(1.0)), 50), ConfigError);
}

TEST(Density, PolynomialGradient) {
  const Density d = Density::polynomial("x^2*y + 3");
  EXPECT_NEAR(d.value(Vec2(2, 1)), 7.0, 1e-14);
  EXPECT_NEAR(d.gradient(Vec2(2, 1)).x(), 4.0, 1e-14);
  EXPECT_NEAR(d.gradient(Vec2(2, 1)).y(), 4.0, 1e-14);
}
