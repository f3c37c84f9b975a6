#pragma once

// Split Lagrangians F(x, z, p) = F0(x, z) + F1(x, p) with closed-form
// derivatives, the Rochet-Chone family, and a Monte-Carlo assumption checker.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "abreu/error.hpp"
#include "abreu/grid.hpp"
#include "abreu/polynomial.hpp"

namespace abreu {

/// Nonnegative agent density with gradient.
struct Density {
  RealFn value;
  std::function<Vec2(const Vec2&)> gradient;
  std::string expression = "1";

  static Density constant(double c) {
    return {[c](const Vec2&) { return c; }, [](const Vec2&) -> Vec2 { return Vec2::Zero(); },
            std::to_string(c)};
  }
  static Density polynomial(const std::string& expr) {
    const Polynomial p = Polynomial::parse(expr);
    return {[p](const Vec2& x) { return p(x); }, [p](const Vec2& x) { return p.gradient(x); }, expr};
  }
};

struct Lagrangian {
  std::function<double(const Vec2&, double)> F0;
  std::function<double(const Vec2&, double)> F0_z;
  std::function<double(const Vec2&, double)> F0_zz;
  std::function<double(const Vec2&, const Vec2&)> F1;
  std::function<Vec2(const Vec2&, const Vec2&)> F1_p;
  std::function<Mat2(const Vec2&, const Vec2&)> F1_pp;
  /// entry (i, j) = d^2 F1 / dp_i dx_j
  std::function<Mat2(const Vec2&, const Vec2&)> F1_px;
  Density eta0;
  double D_star = 1.0;
  /// growth bound: |F0| + |F0_z| <= growth(|z|)
  std::function<double(double)> growth;
  std::string name;

  double F(const Vec2& x, double z, const Vec2& p) const { return F0(x, z) + F1(x, p); }
};

/// F = (|p|^q / q - x.p + z) eta0(x). D_star is the sup of eta0 over `sample_box`
/// (times the q = 2 Hessian bound); growth defaults to sup(eta0) (1 + t).
inline Lagrangian rochet_chone(double q_cost, Density eta0, const Box& sample_box = {{-1, -1}, {1, 1}}) {
  if (!(q_cost > 1.0)) throw ConfigError("Rochet-Chone cost exponent must exceed 1");
  Lagrangian L;
  L.name = "rochet_chone";
  L.eta0 = eta0;
  const auto eta = eta0.value;
  const auto deta = eta0.gradient;
  const double q = q_cost;
  L.F0 = [eta](const Vec2& x, double z) { return z * eta(x); };
  L.F0_z = [eta](const Vec2& x, double) { return eta(x); };
  L.F0_zz = [](const Vec2&, double) { return 0.0; };
  L.F1 = [eta, q](const Vec2& x, const Vec2& p) { return (std::pow(p.norm(), q) / q - x.dot(p)) * eta(x); };
  L.F1_p = [eta, q](const Vec2& x, const Vec2& p) -> Vec2 {
    const double r = p.norm();
    const Vec2 g = (q == 2.0 ? p : (r > 0 ? Vec2(std::pow(r, q - 2) * p) : Vec2::Zero())) - x;
    return g * eta(x);
  };
  L.F1_pp = [eta, q](const Vec2& x, const Vec2& p) -> Mat2 {
    if (q == 2.0) return eta(x) * Mat2::Identity();
    const double r = p.norm();
    if (r == 0) {
      if (q > 2) return Mat2::Zero();
      throw Error("F1_pp is unbounded at p = 0 for q < 2");
    }
    Mat2 m = std::pow(r, q - 2) * Mat2::Identity() + (q - 2) * std::pow(r, q - 4) * p * p.transpose();
    return eta(x) * m;
  };
  L.F1_px = [eta, deta, q](const Vec2& x, const Vec2& p) -> Mat2 {
    const double r = p.norm();
    const Vec2 g = (q == 2.0 ? p : (r > 0 ? Vec2(std::pow(r, q - 2) * p) : Vec2::Zero())) - x;
    return -eta(x) * Mat2::Identity() + g * deta(x).transpose();
  };

  double eta_max = 0;
  const int m = 41;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const Vec2 x = sample_box.lo + Vec2((sample_box.hi.x() - sample_box.lo.x()) * i / (m - 1.0),
                                          (sample_box.hi.y() - sample_box.lo.y()) * j / (m - 1.0));
      eta_max = std::max(eta_max, eta(x));
    }
  L.D_star = std::max(eta_max, 1e-12);
  L.growth = [eta_max](double t) { return eta_max * (1.0 + t); };
  return L;
}

struct AssumptionViolation {
  std::string which;
  Vec2 x{0, 0};
  double z = 0, z_other = 0;
  Vec2 p{0, 0};
  double amount = 0;
};

struct AssumptionReport {
  int samples = 0;
  std::vector<AssumptionViolation> violations;
  bool ok() const { return violations.empty(); }
};

struct SampleBox {
  Box x{{-1, -1}, {1, 1}};
  double z_max = 2.0;
  double p_max = 2.0;
};

/// Monte-Carlo check of: monotonicity of F0_z in z, the growth bound,
/// 0 <= F1_pp <= D* I and |F1_{p_i x_i}| <= D* (|p| + 1).
inline AssumptionReport validate_assumptions(const Lagrangian& L, int sample_count, const SampleBox& box = {},
                                             unsigned seed = 0) {
  if (sample_count < 100) throw ConfigError("validate_assumptions needs at least 100 samples");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(box.x.lo.x(), box.x.hi.x()), uy(box.x.lo.y(), box.x.hi.y()),
      uz(-box.z_max, box.z_max), up(-box.p_max, box.p_max);
  AssumptionReport rep;
  rep.samples = sample_count;
  const double tol = 1e-12;
  for (int s = 0; s < sample_count; ++s) {
    const Vec2 x(ux(rng), uy(rng));
    const double z = uz(rng), zt = uz(rng);
    const Vec2 p(up(rng), up(rng));

    const double mono = (L.F0_z(x, z) - L.F0_z(x, zt)) * (z - zt);
    if (mono < -tol) rep.violations.push_back({"F0 monotonicity", x, z, zt, p, -mono});
    const double grow = std::abs(L.F0(x, z)) + std::abs(L.F0_z(x, z)) - L.growth(std::abs(z));
    if (grow > tol) rep.violations.push_back({"F0 growth", x, z, zt, p, grow});

    const Eigen::SelfAdjointEigenSolver<Mat2> es(L.F1_pp(x, p), Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) < -tol) rep.violations.push_back({"F1_pp >= 0", x, z, zt, p, -es.eigenvalues()(0)});
    if (es.eigenvalues()(1) > L.D_star + tol)
      rep.violations.push_back({"F1_pp <= D*", x, z, zt, p, es.eigenvalues()(1) - L.D_star});
    const Mat2 px = L.F1_px(x, p);
    for (int i = 0; i < 2; ++i) {
      const double excess = std::abs(px(i, i)) - L.D_star * (p.norm() + 1.0);
      if (excess > tol) rep.violations.push_back({"F1_px bound", x, z, zt, p, excess});
    }
  }
  return rep;
}

} // namespace abreu
