#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace entbal {

// Individual-level rows from the target population.
struct InternalDataset {
  Eigen::MatrixXd covariates;  // n x d
  Eigen::VectorXd outcome;     // n
  std::vector<std::string> covariate_names;
  std::string outcome_name = "y";

  Eigen::Index n() const { return outcome.size(); }
  Eigen::Index d() const { return covariates.cols(); }

  // Throws InvalidArgument on shape mismatch, non-finite values or n < 2.
  void validate() const;

  // Rows of the regression design (1, x_i').
  Eigen::MatrixXd design() const;

  // Subset/resample by row index.
  InternalDataset take(const std::vector<Eigen::Index>& rows) const;

  // Index of a named covariate; throws InvalidArgument if absent.
  Eigen::Index column(const std::string& name) const;
};

enum class Link { Identity, Logit };

std::string to_string(Link link);
Link parse_link(const std::string& text);

// Published regression coefficients for E(Y | X, S=1) = m(beta' x~).
struct CoefficientSummary {
  Eigen::VectorXd beta;  // intercept first
  Link link = Link::Identity;
};

// Published summary statistics of the external source.
struct ExternalSummary {
  std::vector<std::string> basis;       // basis descriptor names, aligned with mu_x
  Eigen::VectorXd mu_x;                 // external means of the basis functions
  std::optional<CoefficientSummary> coefficients;
  std::optional<double> mu_y;           // external outcome mean
  long long n1 = 0;                     // external sample size
  // Asymptotic covariance of (mu_x, eta_ex) on the per-observation scale,
  // i.e. n1 * Cov(summary). eta_ex is the coefficient-based linear predictor
  // when coefficients are present, else mu_y.
  std::optional<Eigen::MatrixXd> sigma_w;

  void validate() const;
};

}  // namespace entbal
