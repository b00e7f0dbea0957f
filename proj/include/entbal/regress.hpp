#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "entbal/data.hpp"

namespace entbal {

struct RegressionFit {
  Eigen::VectorXd beta;  // intercept first, length d + 1
  Link link = Link::Identity;
  std::optional<Eigen::VectorXd> weights_used;
  // Inverse of the (weighted) average information n^{-1} sum w_i m'(eta_i) x~_i x~_i'.
  // For the identity link without weights this is {E_n(x~ x~')}^{-1}.
  Eigen::MatrixXd gram_inverse;
  int iterations = 0;
  std::vector<double> loglik_trace;  // logit fits: log-likelihood per accepted iterate
};

struct LogisticOptions {
  int max_iter = 100;
  double tolerance = 1e-10;       // infinity norm of the average score
  double separation_limit = 1e3;  // on standardized covariates
};

RegressionFit fit_ols(const InternalDataset& data);
RegressionFit fit_wls(const InternalDataset& data, const Eigen::VectorXd& weights);

// Weighted maximum likelihood via IRLS with step halving on the log-likelihood.
// Throws Separation when the standardized coefficients diverge.
RegressionFit fit_logistic(const InternalDataset& data,
                           const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                           const LogisticOptions& opts = {});

// Dispatch on link.
RegressionFit fit_regression(const InternalDataset& data, Link link,
                             const std::optional<Eigen::VectorXd>& weights = std::nullopt);

// Mean function m(eta) and its derivative.
double mean_function(Link link, double eta);
double mean_derivative(Link link, double eta);

// gram_inverse * w * x~ * (y - x~'beta). `weight` is the row's fitting
// weight (1 for an unweighted fit). Throws LinkMismatch for non-identity fits.
Eigen::VectorXd influence_ols(const RegressionFit& fit, const Eigen::VectorXd& x, double y,
                              double weight = 1.0);

// Link-generic form gram_inverse * w * x~ * (y - m(x~'beta)).
Eigen::VectorXd influence(const RegressionFit& fit, const Eigen::VectorXd& x, double y,
                          double weight = 1.0);

// Weighted log-likelihood for the logit link.
double logistic_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& weights, const Eigen::VectorXd& beta);

}  // namespace entbal
