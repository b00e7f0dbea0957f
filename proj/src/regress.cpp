#include "entbal/regress.hpp"

#include <cmath>
#include <limits>

#include "entbal/error.hpp"

namespace entbal {

namespace {

double expit(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

// log(1 + exp(eta)) without overflow
double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta))); }

Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw Error(ErrorKind::RankDeficientDesign, "information matrix is not positive definite");
  }
  return ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
}

void check_rank(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) {
    throw Error(ErrorKind::RankDeficientDesign, "regression design is rank deficient");
  }
}

void check_weights(const InternalDataset& data, const Eigen::VectorXd& weights) {
  if (weights.size() != data.n()) {
    throw Error(ErrorKind::DimensionMismatch, "weights length does not match rows");
  }
  if (!weights.allFinite() || (weights.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "regression weights must be finite and strictly positive");
  }
}

}  // namespace

double mean_function(Link link, double eta) { return link == Link::Identity ? eta : expit(eta); }

double mean_derivative(Link link, double eta) {
  if (link == Link::Identity) return 1.0;
  const double p = expit(eta);
  return p * (1.0 - p);
}

RegressionFit fit_wls(const InternalDataset& data, const Eigen::VectorXd& weights) {
  data.validate();
  check_weights(data, weights);
  const Eigen::MatrixXd x = data.design();
  check_rank(weights.cwiseSqrt().asDiagonal() * x);
  const double n = static_cast<double>(data.n());

  // Solve via QR on the row-scaled system rather than the normal equations.
  const Eigen::VectorXd sw = weights.cwiseSqrt();
  const Eigen::MatrixXd xs = sw.asDiagonal() * x;
  const Eigen::VectorXd ys = sw.cwiseProduct(data.outcome);

  RegressionFit fit;
  fit.link = Link::Identity;
  fit.beta = xs.colPivHouseholderQr().solve(ys);
  fit.gram_inverse = invert_information(xs.transpose() * xs / n);
  fit.weights_used = weights;
  return fit;
}

RegressionFit fit_ols(const InternalDataset& data) {
  RegressionFit fit = fit_wls(data, Eigen::VectorXd::Ones(data.n()));
  fit.weights_used.reset();
  return fit;
}

double logistic_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& weights, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = design * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += weights(i) * (y(i) * eta(i) - softplus(eta(i)));
  return ll;
}

RegressionFit fit_logistic(const InternalDataset& data, const std::optional<Eigen::VectorXd>& weights,
                           const LogisticOptions& opts) {
  data.validate();
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (data.outcome(i) != 0.0 && data.outcome(i) != 1.0) {
      throw Error(ErrorKind::InvalidArgument, "logistic regression needs outcomes in {0, 1}");
    }
  }
  const Eigen::Index n = data.n();
  const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(n);
  if (weights) check_weights(data, w);
  const Eigen::MatrixXd x = data.design();
  check_rank(x);
  const Eigen::Index k = x.cols();

  // Standardized design for conditioning and the separation guard.
  Eigen::VectorXd center = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(k);
  Eigen::MatrixXd z = x;
  for (Eigen::Index j = 1; j < k; ++j) {
    center(j) = x.col(j).mean();
    scale(j) = std::sqrt((x.col(j).array() - center(j)).square().mean());
    z.col(j) = (x.col(j).array() - center(j)) / scale(j);
  }
  const Eigen::VectorXd& y = data.outcome;
  const double wsum = w.sum();

  RegressionFit fit;
  fit.link = Link::Logit;
  Eigen::VectorXd bz = Eigen::VectorXd::Zero(k);
  double ll = logistic_loglik(z, y, w, bz);
  fit.loglik_trace.push_back(ll);

  bool converged = false;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double last_step = kInf;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    const Eigen::VectorXd eta = z * bz;
    Eigen::VectorXd resid(n), curv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = expit(eta(i));
      resid(i) = w(i) * (y(i) - p);
      curv(i) = w(i) * p * (1.0 - p);
    }
    const Eigen::VectorXd score = z.transpose() * resid / wsum;
    const Eigen::MatrixXd info = z.transpose() * curv.asDiagonal() * z / wsum;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) {
      throw Error(ErrorKind::Separation, "logistic information became singular");
    }
    const Eigen::VectorXd delta = ldlt.solve(score);
    last_step = delta.allFinite() ? delta.lpNorm<Eigen::Infinity>() : kInf;
    if (score.lpNorm<Eigen::Infinity>() <= opts.tolerance) {
      converged = true;
      break;
    }

    double step = 1.0;
    Eigen::VectorXd cand;
    double cand_ll = ll;
    bool improved = false;
    for (int h = 0; h < 40; ++h, step *= 0.5) {
      cand = bz + step * delta;
      cand_ll = logistic_loglik(z, y, w, cand);
      if (cand_ll >= ll) {
        improved = true;
        break;
      }
    }
    if (!improved) break;  // at numerical optimum
    bz = cand;
    ll = cand_ll;
    fit.loglik_trace.push_back(ll);
    if (bz.norm() > opts.separation_limit) {
      throw Error(ErrorKind::Separation, "logistic coefficients diverge (perfect or quasi separation)");
    }
  }

  fit.beta = bz;
  for (Eigen::Index j = 1; j < k; ++j) {
    fit.beta(j) = bz(j) / scale(j);
    fit.beta(0) -= fit.beta(j) * center(j);
  }
  fit.iterations = iter;

  const Eigen::VectorXd eta = x * fit.beta;
  Eigen::VectorXd curv(n), resid(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = expit(eta(i));
    curv(i) = w(i) * p * (1.0 - p);
    resid(i) = w(i) * (y(i) - p);
  }
  if (!converged) {
    const Eigen::VectorXd score = x.transpose() * resid / wsum;
    if (score.lpNorm<Eigen::Infinity>() > 1e-8) {
      throw Error(ErrorKind::Separation, "logistic IRLS did not converge");
    }
  }
  // Under separation the score vanishes while the Newton steps stay O(1).
  if (last_step > 1e-3 * std::max(1.0, bz.lpNorm<Eigen::Infinity>())) {
    throw Error(ErrorKind::Separation, "logistic coefficients diverge (perfect or quasi separation)");
  }
  fit.gram_inverse = invert_information(x.transpose() * curv.asDiagonal() * x / static_cast<double>(n));
  if (weights) fit.weights_used = w;
  return fit;
}

RegressionFit fit_regression(const InternalDataset& data, Link link,
                             const std::optional<Eigen::VectorXd>& weights) {
  if (link == Link::Logit) return fit_logistic(data, weights);
  return weights ? fit_wls(data, *weights) : fit_ols(data);
}

Eigen::VectorXd influence(const RegressionFit& fit, const Eigen::VectorXd& x, double y, double weight) {
  if (x.size() + 1 != fit.beta.size()) {
    throw Error(ErrorKind::DimensionMismatch, "covariate row does not match regression design");
  }
  Eigen::VectorXd xt(x.size() + 1);
  xt(0) = 1.0;
  xt.tail(x.size()) = x;
  const double r = y - mean_function(fit.link, xt.dot(fit.beta));
  return fit.gram_inverse * xt * (weight * r);
}

Eigen::VectorXd influence_ols(const RegressionFit& fit, const Eigen::VectorXd& x, double y, double weight) {
  if (fit.link != Link::Identity) {
    throw Error(ErrorKind::LinkMismatch, "influence_ols needs an identity-link fit");
  }
  return influence(fit, x, y, weight);
}

}  // namespace entbal
