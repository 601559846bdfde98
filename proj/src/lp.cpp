#include "dtrec/lp.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "dtrec/error.hpp"

namespace dtrec {

namespace {

constexpr double kEps = 1e-11;

class Tableau {
 public:
  Tableau(const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
      : rows_(A.rows()), vars_(A.cols()), t_(A.rows() + 1, A.cols() + A.rows() + 1) {
    t_.setZero();
    for (Eigen::Index r = 0; r < rows_; ++r) {
      const double sign = b(r) < 0 ? -1.0 : 1.0;
      t_.row(r).head(vars_) = sign * A.row(r);
      t_(r, vars_ + r) = 1.0;
      t_(r, rhs()) = sign * b(r);
      basis_.push_back(vars_ + r);
    }
  }

  Eigen::Index rhs() const { return t_.cols() - 1; }
  Eigen::Index objective_row() const { return t_.rows() - 1; }
  bool is_artificial(Eigen::Index col) const { return col >= vars_ && col < vars_ + rows_; }

  // Loads cost vector `cost` (length = columns - 1) and prices out the basis.
  void set_objective(const Eigen::VectorXd& cost) {
    auto obj = t_.row(objective_row());
    obj.setZero();
    obj.head(cost.size()) = cost.transpose();
    for (std::size_t r = 0; r < basis_.size(); ++r) {
      const double cb = obj(basis_[r]);
      if (cb != 0.0) obj -= cb * t_.row(static_cast<Eigen::Index>(r));
    }
  }

  // Runs simplex iterations; artificial columns may enter only in phase one.
  void optimize(bool allow_artificial) {
    const Eigen::Index max_iter = 50 * (t_.cols() + t_.rows()) + 1000;
    for (Eigen::Index iter = 0; iter < max_iter; ++iter) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < rhs(); ++j) {
        if (!allow_artificial && is_artificial(j)) continue;
        if (t_(objective_row(), j) < -kEps) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(basis_.size()); ++r) {
        const double a = t_(r, enter);
        if (a <= kEps) continue;
        const double ratio = t_(r, rhs()) / a;
        if (ratio < best - kEps ||
            (std::abs(ratio - best) <= kEps && leave >= 0 && basis_[r] < basis_[leave])) {
          best = ratio;
          leave = r;
        }
      }
      if (leave < 0) throw Error("lp_unbounded", "linear program is unbounded");
      pivot(leave, enter);
    }
    throw Error("lp_iteration_limit", "simplex did not terminate");
  }

  void pivot(Eigen::Index row, Eigen::Index col) {
    t_.row(row) /= t_(row, col);
    for (Eigen::Index r = 0; r < t_.rows(); ++r) {
      if (r == row) continue;
      const double f = t_(r, col);
      if (f != 0.0) t_.row(r) -= f * t_.row(row);
    }
    basis_[static_cast<std::size_t>(row)] = col;
  }

  // After phase one: pivots zero-level artificials out of the basis and drops
  // rows that are linear combinations of others.
  void purge_artificials() {
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(basis_.size());) {
      if (!is_artificial(basis_[r])) {
        ++r;
        continue;
      }
      Eigen::Index col = -1;
      for (Eigen::Index j = 0; j < vars_; ++j) {
        if (std::abs(t_(r, j)) > 1e-9) {
          col = j;
          break;
        }
      }
      if (col >= 0) {
        pivot(r, col);
        ++r;
      } else {
        remove_row(r);
      }
    }
  }

  double objective_value() const { return -t_(objective_row(), rhs()); }

  Eigen::VectorXd solution() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(vars_);
    for (std::size_t r = 0; r < basis_.size(); ++r)
      if (basis_[r] < vars_) x(basis_[r]) = t_(static_cast<Eigen::Index>(r), rhs());
    return x;
  }

 private:
  void remove_row(Eigen::Index r) {
    const Eigen::Index n = t_.rows();
    Eigen::MatrixXd next(n - 1, t_.cols());
    next.topRows(r) = t_.topRows(r);
    next.bottomRows(n - 1 - r) = t_.bottomRows(n - 1 - r);
    t_ = std::move(next);
    basis_.erase(basis_.begin() + r);
  }

  Eigen::Index rows_;
  Eigen::Index vars_;
  Eigen::MatrixXd t_;
  std::vector<Eigen::Index> basis_;
};

}  // namespace

LpSolution solve_standard_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                             const Eigen::VectorXd& b) {
  if (A.rows() != b.size() || A.cols() != c.size())
    throw Error("bad_argument", "inconsistent linear program dimensions");
  Tableau tab(A, b);
  const Eigen::Index total = A.cols() + A.rows();

  Eigen::VectorXd phase_one = Eigen::VectorXd::Zero(total);
  phase_one.tail(A.rows()).setOnes();
  tab.set_objective(phase_one);
  tab.optimize(true);
  const double scale = 1.0 + b.cwiseAbs().sum();
  if (tab.objective_value() > 1e-9 * scale)
    throw Error("lp_infeasible", "linear program is infeasible");
  tab.purge_artificials();

  Eigen::VectorXd phase_two = Eigen::VectorXd::Zero(total);
  phase_two.head(c.size()) = c;
  tab.set_objective(phase_two);
  tab.optimize(false);
  LpSolution sol;
  sol.x = tab.solution();
  sol.objective = c.dot(sol.x);
  return sol;
}

}  // namespace dtrec
