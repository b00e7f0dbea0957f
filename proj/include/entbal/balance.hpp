#pragma once

#include <Eigen/Dense>

#include "entbal/entropy.hpp"

namespace entbal {

// Find lambda with n^{-1} sum_i rho(lambda' b_i) b_i = target. Row b_i of the
// basis carries a leading 1, and target(0) == 1 is the normalization constraint.
struct BalanceProblem {
  Eigen::MatrixXd basis;
  Eigen::VectorXd target;
  EntropySpec entropy = EntropySpec::exponential();
};

struct SolverOptions {
  double tolerance = 1e-9;      // infinity norm of the moment residual
  int max_iter = 100;
  int max_halvings = 40;
  int stall_window = 10;        // iterations without meaningful progress
  double stall_ratio = 0.9;     // progress means residual shrank below ratio * old
  double lambda_limit = 1e6;    // on the standardized scale
  double rank_tolerance = 1e-10;
  bool standardize = true;
};

struct BalanceSolution {
  Eigen::VectorXd lambda;   // on the original basis scale
  Eigen::VectorXd weights;  // rho(lambda' b_i)
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct NewtonStep {
  Eigen::VectorXd delta;
  Eigen::VectorXd residual;
};

// One undamped Newton step at lambda. Throws SingularHessian when the
// weighted Gram matrix is not positive definite and Domain when some
// lambda' b_i leaves the dual domain.
NewtonStep newton_step(const Eigen::VectorXd& lambda, const BalanceProblem& problem);

// Moment residual n^{-1} sum rho(lambda' b_i) b_i - target.
Eigen::VectorXd moment_residual(const Eigen::VectorXd& lambda, const BalanceProblem& problem);

// Damped Newton on the dual. Throws RankDeficientBasis for collinear basis
// columns and InfeasibleTarget when the target is not reachable (outside or
// on the boundary of the convex hull of basis rows).
BalanceSolution solve_dual(const BalanceProblem& problem, const SolverOptions& opts = {});

}  // namespace entbal
