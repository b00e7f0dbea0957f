#include "entbal/data.hpp"

#include <cmath>

#include "entbal/error.hpp"

namespace entbal {

void InternalDataset::validate() const {
  if (outcome.size() < 2) throw Error(ErrorKind::InvalidArgument, "internal data needs n >= 2 rows");
  if (covariates.rows() != outcome.size()) {
    throw Error(ErrorKind::DimensionMismatch, "covariate rows do not match outcome length");
  }
  if (!covariate_names.empty() && static_cast<Eigen::Index>(covariate_names.size()) != covariates.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "covariate names do not match covariate columns");
  }
  if (!covariates.allFinite() || !outcome.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "internal data contains missing or non-finite values");
  }
}

Eigen::MatrixXd InternalDataset::design() const {
  Eigen::MatrixXd x(n(), d() + 1);
  x.col(0).setOnes();
  x.rightCols(d()) = covariates;
  return x;
}

InternalDataset InternalDataset::take(const std::vector<Eigen::Index>& rows) const {
  InternalDataset out;
  out.covariates.resize(static_cast<Eigen::Index>(rows.size()), d());
  out.outcome.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.covariates.row(static_cast<Eigen::Index>(k)) = covariates.row(rows[k]);
    out.outcome(static_cast<Eigen::Index>(k)) = outcome(rows[k]);
  }
  out.covariate_names = covariate_names;
  out.outcome_name = outcome_name;
  return out;
}

Eigen::Index InternalDataset::column(const std::string& name) const {
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    if (covariate_names[j] == name) return static_cast<Eigen::Index>(j);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown covariate '" + name + "'");
}

std::string to_string(Link link) { return link == Link::Identity ? "identity" : "logit"; }

Link parse_link(const std::string& text) {
  if (text == "identity") return Link::Identity;
  if (text == "logit") return Link::Logit;
  throw Error(ErrorKind::Parse, "unknown link '" + text + "' (expected identity | logit)");
}

void ExternalSummary::validate() const {
  if (n1 < 1) throw Error(ErrorKind::InvalidArgument, "external sample size n1 must be >= 1");
  if (!basis.empty() && static_cast<Eigen::Index>(basis.size()) != mu_x.size()) {
    throw Error(ErrorKind::DimensionMismatch, "basis names do not match mu_x_ex length");
  }
  if (!mu_x.allFinite()) throw Error(ErrorKind::InvalidArgument, "mu_x_ex contains non-finite values");
  if (sigma_w) {
    const auto& s = *sigma_w;
    if (s.rows() != s.cols() || s.rows() != mu_x.size() + 1) {
      throw Error(ErrorKind::DimensionMismatch, "sigma_w must be square of size len(mu_x_ex) + 1");
    }
    if (!s.isApprox(s.transpose(), 1e-10) && (s - s.transpose()).norm() > 1e-12) {
      throw Error(ErrorKind::InvalidArgument, "sigma_w must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
      throw Error(ErrorKind::InvalidArgument, "sigma_w must be positive semidefinite");
    }
  }
}

}  // namespace entbal
