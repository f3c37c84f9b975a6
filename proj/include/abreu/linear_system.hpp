#pragma once

// Unknown numbering over active nodes and sparse direct solves.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <string>
#include <vector>

#include "abreu/error.hpp"
#include "abreu/grid.hpp"

namespace abreu {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Consecutive numbering of inside and boundary nodes.
class ActiveNumbering {
public:
  explicit ActiveNumbering(const Grid& g) : to_unknown_(g.size(), -1) {
    for (Index k = 0; k < g.size(); ++k)
      if (g.active(k)) {
        to_unknown_[k] = static_cast<Index>(nodes_.size());
        nodes_.push_back(k);
      }
  }
  Index size() const { return static_cast<Index>(nodes_.size()); }
  Index operator()(Index node) const { return to_unknown_[node]; }
  Index node(Index unknown) const { return nodes_[unknown]; }

  Eigen::VectorXd gather(const ScalarField& f) const {
    Eigen::VectorXd x(size());
    for (Index i = 0; i < size(); ++i) x[i] = f[nodes_[i]];
    return x;
  }
  void scatter(const Eigen::VectorXd& x, ScalarField& f) const {
    for (Index i = 0; i < size(); ++i) f[nodes_[i]] = x[i];
  }

private:
  std::vector<Index> to_unknown_;
  std::vector<Index> nodes_;
};

/// Appends the Dirichlet link rows (one per ghost) to a system.
inline void add_link_rows(const Grid& g, const ActiveNumbering& num, std::vector<Triplet>& t) {
  for (const auto& l : g.links()) {
    const Index r = num(l.ghost);
    t.emplace_back(r, r, l.weights[0]);
    t.emplace_back(r, num(l.in1), l.weights[1]);
    if (l.in2 >= 0) t.emplace_back(r, num(l.in2), l.weights[2]);
  }
}

/// Sparse LU solve with one step of iterative refinement.
inline Eigen::VectorXd sparse_solve(const SparseMatrix& A, const Eigen::VectorXd& b) {
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw LinearSolveFailure("sparse LU factorization failed (" + std::to_string(A.rows()) +
                             " unknowns): " + lu.lastErrorMessage());
  Eigen::VectorXd x = lu.solve(b);
  if (lu.info() != Eigen::Success || !x.allFinite()) throw LinearSolveFailure("sparse LU back-substitution failed");
  const Eigen::VectorXd r = b - A * x;
  x += lu.solve(r);
  if (!x.allFinite()) {
    const double logdet = lu.logAbsDeterminant();
    throw LinearSolveFailure("non-finite solution; log|det A| = " + std::to_string(logdet));
  }
  return x;
}

} // namespace abreu
