#pragma once

// Brute-force solver for the SVM dual on a handful of points: every
// assignment of each alpha to {0, C, free} is tried, the free block is
// solved from the stationarity system with the equality constraint, and the
// best feasible objective wins.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

namespace malfuse::test {

struct QpSolution {
  double objective = std::numeric_limits<double>::infinity();
  Eigen::VectorXd alpha;
};

inline QpSolution svm_dual_oracle(const Eigen::MatrixXd& K, const std::vector<int>& y, double C) {
  const int n = static_cast<int>(y.size());
  Eigen::MatrixXd Q(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) Q(i, j) = y[i] * y[j] * K(i, j);
  QpSolution best;
  int patterns = 1;
  for (int i = 0; i < n; ++i) patterns *= 3;
  for (int code = 0; code < patterns; ++code) {
    std::vector<int> state(n), free_idx;
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
    for (int i = 0, c = code; i < n; ++i, c /= 3) {
      state[i] = c % 3;
      if (state[i] == 1) alpha[i] = C;
      if (state[i] == 2) free_idx.push_back(i);
    }
    const int f = static_cast<int>(free_idx.size());
    if (f > 0) {
      // [Q_FF  y_F][a_F]   [1 - Q_FB a_B]
      // [y_F'   0 ][ b ] = [  -y_B' a_B  ]
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(f + 1, f + 1);
      Eigen::VectorXd rhs(f + 1);
      double yb = 0;
      for (int i = 0; i < n; ++i) yb += y[i] * alpha[i];
      for (int r = 0; r < f; ++r) {
        const int i = free_idx[r];
        double qb = 0;
        for (int j = 0; j < n; ++j) qb += Q(i, j) * alpha[j];
        rhs[r] = 1 - qb;
        for (int c = 0; c < f; ++c) A(r, c) = Q(i, free_idx[c]);
        A(r, f) = y[i];
        A(f, r) = y[i];
      }
      rhs[f] = -yb;
      const Eigen::VectorXd sol = A.completeOrthogonalDecomposition().solve(rhs);
      if ((A * sol - rhs).norm() > 1e-9) continue;
      for (int r = 0; r < f; ++r) alpha[free_idx[r]] = sol[r];
    }
    bool ok = true;
    double eq = 0;
    for (int i = 0; i < n; ++i) {
      if (alpha[i] < -1e-12 || alpha[i] > C + 1e-12) ok = false;
      eq += y[i] * alpha[i];
    }
    if (!ok || std::abs(eq) > 1e-9) continue;
    const double obj = 0.5 * alpha.dot(Q * alpha) - alpha.sum();
    if (obj < best.objective) best = {obj, alpha};
  }
  return best;
}

}  // namespace malfuse::test
