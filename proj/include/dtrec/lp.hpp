#pragma once

#include <Eigen/Dense>

namespace dtrec {

struct LpSolution {
  double objective = 0.0;
  Eigen::VectorXd x;
};

// Dense two-phase simplex with Bland's rule for
//   minimize c^T x  subject to  A x = b,  x >= 0.
// Intended for small problems (a few hundred variables). Throws on
// infeasible or unbounded programs.
LpSolution solve_standard_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                             const Eigen::VectorXd& b);

}  // namespace dtrec
