#include "entbal/balance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "entbal/error.hpp"

namespace entbal {

namespace {

void validate(const BalanceProblem& problem) {
  const auto& basis = problem.basis;
  if (basis.rows() == 0 || basis.cols() == 0) {
    throw Error(ErrorKind::InvalidArgument, "empty balancing basis");
  }
  if (problem.target.size() != basis.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "target length does not match basis columns");
  }
  if (problem.target(0) != 1.0) {
    throw Error(ErrorKind::InvalidArgument, "target(0) must be exactly 1");
  }
  if (!basis.allFinite() || !problem.target.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "non-finite value in balancing problem");
  }
  if ((basis.col(0).array() != 1.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "first basis column must be all ones");
  }
}

// Evaluates weights and residual for lambda; returns false if some
// lambda' b_i falls outside the dual domain.
bool evaluate(const Eigen::MatrixXd& basis, const Eigen::VectorXd& target, const EntropySpec& entropy,
              const Eigen::VectorXd& lambda, Eigen::VectorXd& weights, Eigen::VectorXd& residual) {
  const Interval domain = entropy.dual_domain();
  const Eigen::VectorXd u = basis * lambda;
  weights.resize(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u(i)) || !domain.contains(u(i))) return false;
    weights(i) = entropy.rho_unchecked(u(i));
    if (!std::isfinite(weights(i))) return false;
  }
  residual = basis.transpose() * weights / static_cast<double>(basis.rows()) - target;
  return residual.allFinite();
}

// Dual objective mean(rho_bar(lambda' b_i)) - lambda' target with
// rho_bar(u) = u rho(u) - G(rho(u)); its gradient is the moment residual.
double dual_objective(const Eigen::MatrixXd& basis, const Eigen::VectorXd& target, const EntropySpec& entropy,
                      const Eigen::VectorXd& lambda, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd u = basis * lambda;
  double f = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (weights(i) > 0.0) f += u(i) * weights(i) - entropy.G(weights(i));  // underflowed weights add 0
  }
  return f / static_cast<double>(basis.rows()) - lambda.dot(target);
}

Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& basis, const Eigen::VectorXd& w) {
  Eigen::MatrixXd h = basis.transpose() * w.asDiagonal() * basis;
  return h / static_cast<double>(basis.rows());
}

[[noreturn]] void infeasible(const std::string& why, int iter, double residual) {
  std::ostringstream os;
  os << why << " after " << iter << " iterations (residual " << residual
     << "); target is outside or on the boundary of the convex hull of basis rows";
  throw Error(ErrorKind::InfeasibleTarget, os.str());
}

}  // namespace

Eigen::VectorXd moment_residual(const Eigen::VectorXd& lambda, const BalanceProblem& problem) {
  Eigen::VectorXd w, r;
  if (!evaluate(problem.basis, problem.target, problem.entropy, lambda, w, r)) {
    throw Error(ErrorKind::Domain, "lambda' b_i outside the dual domain");
  }
  return r;
}

NewtonStep newton_step(const Eigen::VectorXd& lambda, const BalanceProblem& problem) {
  validate(problem);
  if (lambda.size() != problem.basis.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "lambda length does not match basis columns");
  }
  NewtonStep step;
  Eigen::VectorXd w;
  if (!evaluate(problem.basis, problem.target, problem.entropy, lambda, w, step.residual)) {
    throw Error(ErrorKind::Domain, "lambda' b_i outside the dual domain");
  }
  const Eigen::VectorXd u = problem.basis * lambda;
  Eigen::VectorXd d(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) d(i) = problem.entropy.rho_prime_unchecked(u(i));
  Eigen::LLT<Eigen::MatrixXd> llt(weighted_gram(problem.basis, d));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::SingularHessian, "dual Hessian is not positive definite");
  }
  step.delta = -llt.solve(step.residual);
  return step;
}

BalanceSolution solve_dual(const BalanceProblem& problem, const SolverOptions& opts) {
  validate(problem);
  const Eigen::Index n = problem.basis.rows();
  const Eigen::Index q = problem.basis.cols();
  const EntropySpec& entropy = problem.entropy;

  // Center/scale the non-intercept columns. Weights depend on lambda' b only,
  // which is invariant under this affine change once lambda is mapped back.
  Eigen::VectorXd center = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(q);
  Eigen::MatrixXd z = problem.basis;
  Eigen::VectorXd target = problem.target;
  for (Eigen::Index j = 1; j < q; ++j) {
    const double mean = problem.basis.col(j).mean();
    const double sd = std::sqrt((problem.basis.col(j).array() - mean).square().mean());
    if (!(sd > 0.0)) {
      throw Error(ErrorKind::RankDeficientBasis, "basis column " + std::to_string(j) + " is constant");
    }
    if (opts.standardize) {
      center(j) = mean;
      scale(j) = sd;
      z.col(j) = (problem.basis.col(j).array() - mean) / sd;
      target(j) = (problem.target(j) - mean) / sd;
    }
  }

  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(z / std::sqrt(static_cast<double>(n)));
    const auto& sv = svd.singularValues();
    if (sv.size() < q || sv(q - 1) <= opts.rank_tolerance * sv(0)) {
      throw Error(ErrorKind::RankDeficientBasis, "balancing basis columns are collinear");
    }
  }

  // Residual on the original scale is a fixed linear map of the standardized one:
  // r_j = scale_j * rz_j + center_j * rz_0.
  auto original_residual = [&](const Eigen::VectorXd& rz) {
    Eigen::VectorXd r = rz;
    for (Eigen::Index j = 1; j < q; ++j) r(j) = scale(j) * rz(j) + center(j) * rz(0);
    return r;
  };

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(q);
  lambda(0) = entropy.baseline();

  Eigen::VectorXd w, rz;
  if (!evaluate(z, target, entropy, lambda, w, rz)) {
    throw Error(ErrorKind::Domain, "baseline multiplier outside the dual domain");
  }

  // Best residual and dual objective so far, per iteration.
  std::vector<double> history, objective;
  history.reserve(static_cast<std::size_t>(opts.max_iter) + 1);
  objective.reserve(static_cast<std::size_t>(opts.max_iter) + 1);
  int iter = 0;
  double rnorm = original_residual(rz).lpNorm<Eigen::Infinity>();
  for (;; ++iter) {
    history.push_back(history.empty() ? rz.norm() : std::min(history.back(), rz.norm()));
    const double f0 = dual_objective(z, target, entropy, lambda, w);
    objective.push_back(f0);
    const Eigen::VectorXd u = z * lambda;
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = entropy.rho_prime_unchecked(u(i));
    Eigen::LLT<Eigen::MatrixXd> llt(weighted_gram(z, d));
    const Eigen::VectorXd delta = llt.info() == Eigen::Success ? Eigen::VectorXd(-llt.solve(rz)) : Eigen::VectorXd();
    if (rnorm <= opts.tolerance) {
      // A tiny residual with a Newton step that stays large means the
      // multiplier is running off to infinity: the target sits on the
      // boundary of the hull and the residual only decays geometrically.
      if (delta.size() == 0 || !delta.allFinite() ||
          delta.lpNorm<Eigen::Infinity>() > 1e-2 * std::max(1.0, lambda.lpNorm<Eigen::Infinity>())) {
        infeasible("multiplier diverging at the hull boundary", iter, rnorm);
      }
      break;
    }
    if (iter >= opts.max_iter) infeasible("no convergence", iter, rnorm);
    if (iter >= opts.stall_window) {
      const std::size_t back = history.size() - 1 - static_cast<std::size_t>(opts.stall_window);
      const bool residual_flat = history.back() > opts.stall_ratio * history[back];
      const bool objective_flat = objective[back] - f0 <= 1e-10 * (1.0 + std::abs(f0));
      if (residual_flat && objective_flat) infeasible("residual stalled", iter, rnorm);
    }
    if (delta.size() == 0 || !delta.allFinite()) infeasible("dual Hessian became singular", iter, rnorm);

    // Backtracking on the dual objective, with residual decrease as a
    // fallback once the objective is flat to rounding.
    const double merit = rz.squaredNorm();
    const double slope = rz.dot(delta);
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd cand_lambda, cand_w, cand_r;
    for (int h = 0; h <= opts.max_halvings; ++h, step *= 0.5) {
      cand_lambda = lambda + step * delta;
      if (!evaluate(z, target, entropy, cand_lambda, cand_w, cand_r)) continue;
      const double f = dual_objective(z, target, entropy, cand_lambda, cand_w);
      if ((std::isfinite(f) && f <= f0 + 1e-4 * step * slope) ||
          cand_r.squaredNorm() < (1.0 - 1e-4 * step) * merit) {
        accepted = true;
        break;
      }
    }
    if (!accepted) infeasible("line search exhausted", iter, rnorm);
    lambda = std::move(cand_lambda);
    w = std::move(cand_w);
    rz = std::move(cand_r);
    rnorm = original_residual(rz).lpNorm<Eigen::Infinity>();
    if (lambda.norm() > opts.lambda_limit) infeasible("multiplier diverged", iter + 1, rnorm);
  }

  BalanceSolution sol;
  sol.lambda = lambda;
  for (Eigen::Index j = 1; j < q; ++j) {
    sol.lambda(j) = lambda(j) / scale(j);
    sol.lambda(0) -= sol.lambda(j) * center(j);
  }
  // Weights are recomputed from the original basis so that w_i == rho(lambda' b_i).
  Eigen::VectorXd r;
  if (!evaluate(problem.basis, problem.target, entropy, sol.lambda, sol.weights, r)) {
    throw Error(ErrorKind::InfeasibleTarget, "back-transformed multiplier left the dual domain");
  }
  sol.residual_norm = r.lpNorm<Eigen::Infinity>();
  sol.iterations = iter;
  sol.converged = sol.residual_norm <= opts.tolerance;
  if (!sol.converged) {
    // Rounding in the back-transform; one Newton polish on the original scale.
    try {
      NewtonStep ns = newton_step(sol.lambda, problem);
      Eigen::VectorXd cand = sol.lambda + ns.delta;
      Eigen::VectorXd cw, cr;
      if (evaluate(problem.basis, problem.target, entropy, cand, cw, cr) &&
          cr.lpNorm<Eigen::Infinity>() < sol.residual_norm) {
        sol.lambda = cand;
        sol.weights = cw;
        sol.residual_norm = cr.lpNorm<Eigen::Infinity>();
      }
    } catch (const Error&) {
    }
    sol.converged = sol.residual_norm <= opts.tolerance;
    if (!sol.converged) infeasible("residual above tolerance", iter, sol.residual_norm);
  }
  return sol;
}

}  // namespace entbal
