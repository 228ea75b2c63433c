#include "threadrecon/qp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>

namespace threadrecon {

double constraint_violation(const QuadraticProgram& qp, const Eigen::VectorXd& x) {
  double v = 0.0;
  if (qp.A_eq.rows() > 0) v = std::max(v, (qp.A_eq * x - qp.b_eq).cwiseAbs().maxCoeff());
  if (qp.A_in.rows() > 0) v = std::max(v, (qp.b_in - qp.A_in * x).cwiseMax(0.0).maxCoeff());
  return v;
}

namespace {

struct ActiveConstraint {
  Eigen::VectorXd normal;
  double rhs = 0.0;
  double lambda = 0.0;
  bool equality = false;
  int index = -1;
};

class DualActiveSet {
 public:
  explicit DualActiveSet(const QuadraticProgram& qp) : qp_(qp), llt_(qp.H) {
    if (llt_.info() != Eigen::Success) throw std::invalid_argument("QP Hessian is not positive definite");
    x_ = -llt_.solve(qp.g);
  }

  bool run(int max_iterations) {
    const int neq = static_cast<int>(qp_.A_eq.rows());
    const int nin = static_cast<int>(qp_.A_in.rows());
    for (int i = 0; i < neq; ++i) {
      Eigen::VectorXd n = qp_.A_eq.row(i).transpose();
      double b = qp_.b_eq(i);
      if (n.dot(x_) - b > 0.0) {
        n = -n;
        b = -b;
      }
      if (!add(n, b, true, i, max_iterations)) return false;
    }
    std::vector<char> is_active(static_cast<std::size_t>(nin), 0);
    while (iterations_ < max_iterations) {
      for (auto& flag : is_active) flag = 0;
      for (const auto& c : active_)
        if (!c.equality) is_active[static_cast<std::size_t>(c.index)] = 1;
      int worst = -1;
      double worst_s = 0.0;
      for (int i = 0; i < nin; ++i) {
        if (is_active[static_cast<std::size_t>(i)]) continue;
        const double s = qp_.A_in.row(i).dot(x_) - qp_.b_in(i);
        if (s < -tolerance(qp_.A_in.row(i).transpose(), qp_.b_in(i)) && s < worst_s) {
          worst_s = s;
          worst = i;
        }
      }
      if (worst < 0) return true;
      if (!add(qp_.A_in.row(worst).transpose(), qp_.b_in(worst), false, worst, max_iterations))
        return false;
    }
    return false;
  }

  const Eigen::VectorXd& x() const { return x_; }
  int iterations() const { return iterations_; }

 private:
  double tolerance(const Eigen::VectorXd& n, double b) const {
    return 1e-11 * (1.0 + std::abs(b) + n.cwiseAbs().dot(x_.cwiseAbs()));
  }

  // Steps (x, lambda) until constraint (n, b) becomes active. Returns false if
  // the constraint cannot be satisfied together with the active set.
  bool add(const Eigen::VectorXd& n, double b, bool equality, int index, int max_iterations) {
    double lambda_new = 0.0;
    while (iterations_++ < max_iterations) {
      const double s = n.dot(x_) - b;
      const int q = static_cast<int>(active_.size());
      Eigen::VectorXd z, r;
      const Eigen::VectorXd Hinv_n = llt_.solve(n);
      if (q == 0) {
        z = Hinv_n;
      } else {
        Eigen::MatrixXd N(n.size(), q);
        for (int j = 0; j < q; ++j) N.col(j) = active_[static_cast<std::size_t>(j)].normal;
        const Eigen::MatrixXd Hinv_N = llt_.solve(N);
        const Eigen::MatrixXd M = N.transpose() * Hinv_N;
        r = M.ldlt().solve(N.transpose() * Hinv_n);
        z = Hinv_n - Hinv_N * r;
      }

      double t1 = std::numeric_limits<double>::infinity();
      int drop = -1;
      for (int j = 0; j < q; ++j) {
        const auto& c = active_[static_cast<std::size_t>(j)];
        if (c.equality || !(r(j) > 1e-14)) continue;
        const double t = c.lambda / r(j);
        if (t < t1) {
          t1 = t;
          drop = j;
        }
      }
      const double zn = z.dot(n);
      const bool z_zero = !(zn > 1e-14 * std::max(1.0, n.squaredNorm()));
      double t2 = std::numeric_limits<double>::infinity();
      if (!z_zero) t2 = std::max(0.0, -s / zn);

      if (z_zero) {
        // n lies in the span of the active normals.
        const bool satisfied = equality ? std::abs(s) <= tolerance(n, b) : s >= -tolerance(n, b);
        if (satisfied) return true;
        if (drop < 0) return false;
        for (int j = 0; j < q; ++j) active_[static_cast<std::size_t>(j)].lambda -= t1 * r(j);
        lambda_new += t1;
        active_.erase(active_.begin() + drop);
        continue;
      }

      const double t = std::min(t1, t2);
      x_ += t * z;
      for (int j = 0; j < q; ++j) active_[static_cast<std::size_t>(j)].lambda -= t * r(j);
      lambda_new += t;
      if (t2 <= t1) {
        active_.push_back({n, b, lambda_new, equality, index});
        return true;
      }
      active_.erase(active_.begin() + drop);
    }
    return false;
  }

  const QuadraticProgram& qp_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd x_;
  std::vector<ActiveConstraint> active_;
  int iterations_ = 0;
};

}  // namespace

QpSolution solve_qp(const QuadraticProgram& qp) {
  const auto n = qp.H.rows();
  if (qp.H.cols() != n || qp.g.size() != n) throw std::invalid_argument("QP dimension mismatch");
  if (qp.A_eq.rows() > 0 && qp.A_eq.cols() != n) throw std::invalid_argument("A_eq has wrong width");
  if (qp.A_in.rows() > 0 && qp.A_in.cols() != n) throw std::invalid_argument("A_in has wrong width");

  DualActiveSet solver(qp);
  const int limit = 50 * static_cast<int>(n + qp.A_eq.rows() + qp.A_in.rows()) + 100;
  const bool ok = solver.run(limit);

  QpSolution out;
  out.x = solver.x();
  out.iterations = solver.iterations();
  out.objective = 0.5 * out.x.dot(qp.H * out.x) + qp.g.dot(out.x);
  out.max_violation = constraint_violation(qp, out.x);
  out.feasible = ok;
  return out;
}

}  // namespace threadrecon
