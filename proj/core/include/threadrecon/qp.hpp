#pragma once

#include <Eigen/Core>

namespace threadrecon {

/// Strictly convex dense quadratic program
///
///   minimize    0.5 x^T H x + g^T x
///   subject to  A_eq x  = b_eq
///               A_in x >= b_in
///
/// H must be symmetric positive definite.
struct QuadraticProgram {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
};

struct QpSolution {
  Eigen::VectorXd x;
  bool feasible = false;
  int iterations = 0;
  double objective = 0.0;
  /// Largest constraint violation at x (equality residual or inequality shortfall).
  double max_violation = 0.0;
};

/// Goldfarb-Idnani dual active-set method. Returns feasible = false when the
/// constraints admit no solution or the iteration limit is hit.
QpSolution solve_qp(const QuadraticProgram& qp);

/// Largest violation of the equality and inequality constraints of qp at x.
double constraint_violation(const QuadraticProgram& qp, const Eigen::VectorXd& x);

}  // namespace threadrecon
