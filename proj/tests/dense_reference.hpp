#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "abreu/oracle.hpp"

namespace abreu::testing {

// Dense reference: log-det barrier path following with explicit stencils and
// dense linear algebra. Free values are the inner nodes in increasing order.
class DenseReference {
  struct Node {
    Index k = -1;
    Eigen::Matrix2d H0;
    std::vector<std::pair<Index, Eigen::Matrix2d>> S;
  };

public:
  using Fn = std::function<double(const Eigen::VectorXd&)>;
  using Grad = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using Hess = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

  DenseReference(const ScalarField& fixed, std::vector<Index> free) : fixed_(fixed), free_(std::move(free)) {
    const Grid& g = fixed.grid();
    const Index n = static_cast<Index>(free_.size());
    std::vector<Index> slot(g.size(), -1);
    for (Index i = 0; i < n; ++i) slot[free_[i]] = i;
    for (Index k : g.inside_nodes()) {
      bool touches = false;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) touches = touches || slot[g.neighbor(k, di, dj)] >= 0;
      if (!touches) continue;
      Node node;
      node.k = k;
      node.H0 = hess(k, Eigen::VectorXd::Zero(n));
      for (Index i = 0; i < n; ++i) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        e[i] = 1;
        const Eigen::Matrix2d S = hess(k, e) - node.H0;
        if (S.norm() > 0) node.S.push_back({i, S});
      }
      nodes_.push_back(std::move(node));
    }
  }

  Eigen::VectorXd gather() const {
    Eigen::VectorXd x(free_.size());
    for (std::size_t i = 0; i < free_.size(); ++i) x[static_cast<Index>(i)] = fixed_[free_[i]];
    return x;
  }

  bool feasible(const Eigen::VectorXd& x, double slack = 0) const {
    for (const auto& nd : nodes_) {
      const Eigen::Matrix2d M = at(nd, x);
      if (!(M(0, 0) > slack && M.determinant() > slack)) return false;
    }
    return true;
  }

  double min_eigenvalue(const Eigen::VectorXd& x) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& nd : nodes_) m = std::min(m, Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(at(nd, x)).eigenvalues()[0]);
    return m;
  }

  Eigen::VectorXd solve(const Fn& f, const Grad& df, const Hess& d2f, Eigen::VectorXd x) const {
    const double m = static_cast<double>(nodes_.size());
    for (double t = 1.0; m / t > 1e-12; t *= 4) {
      for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd gr = t * df(x);
        Eigen::MatrixXd He = t * d2f(x);
        for (const auto& nd : nodes_) {
          const Eigen::Matrix2d Hi = at(nd, x).inverse();
          std::vector<Eigen::Matrix2d> HS;
          for (const auto& [i, S] : nd.S) {
            HS.push_back(Hi * S);
            gr[i] -= HS.back().trace();
          }
          for (std::size_t a = 0; a < nd.S.size(); ++a)
            for (std::size_t b = 0; b < nd.S.size(); ++b) He(nd.S[a].first, nd.S[b].first) += (HS[a] * HS[b]).trace();
        }
        const Eigen::VectorXd dx = -He.ldlt().solve(gr);
        const double dec = -gr.dot(dx);
        if (dec < 1e-14) break;
        auto phi = [&](const Eigen::VectorXd& y) {
          double s = t * f(y);
          for (const auto& nd : nodes_) s -= std::log(at(nd, y).determinant());
          return s;
        };
        double step = 1;
        const double p0 = phi(x);
        while (!feasible(x + step * dx) || phi(x + step * dx) > p0 - 0.25 * step * dec) step *= 0.5;
        x += step * dx;
      }
    }
    return x;
  }

private:
  Eigen::Matrix2d hess(Index k, const Eigen::VectorXd& x) const {
    ScalarField u = fixed_;
    for (std::size_t i = 0; i < free_.size(); ++i) u[free_[i]] = x[static_cast<Index>(i)];
    const Grid& g = u.grid();
    const double h2 = g.cell_area();
    auto v = [&](int di, int dj) { return u[g.neighbor(k, di, dj)]; };
    const double a = (v(1, 0) - 2 * v(0, 0) + v(-1, 0)) / h2;
    const double c = (v(0, 1) - 2 * v(0, 0) + v(0, -1)) / h2;
    const double b = (v(1, 1) - v(-1, 1) - v(1, -1) + v(-1, -1)) / (4 * h2);
    Eigen::Matrix2d M;
    M << a, b, b, c;
    return M;
  }

  Eigen::Matrix2d at(const Node& nd, const Eigen::VectorXd& x) const {
    Eigen::Matrix2d M = nd.H0;
    for (const auto& [i, S] : nd.S) M += x[i] * S;
    return M;
  }

  ScalarField fixed_;
  std::vector<Index> free_;
  std::vector<Node> nodes_;
};

inline std::vector<Index> sorted_inner(const Grid& g) {
  std::vector<Index> v = g.inner_nodes();
  std::sort(v.begin(), v.end());
  return v;
}

inline ScalarField with_values(ScalarField f, const std::vector<Index>& nodes, const Eigen::VectorXd& x) {
  for (std::size_t i = 0; i < nodes.size(); ++i) f[nodes[i]] = x[static_cast<Index>(i)];
  return f;
}

} // namespace abreu::testing
