#include "entbal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "entbal/error.hpp"

namespace entbal {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::EB: return "EB";
    case Variant::EBw: return "EBw";
    case Variant::EBwx: return "EBwx";
    case Variant::EBL: return "EBL";
    case Variant::EBLw: return "EBLw";
    case Variant::SM: return "SM";
    case Variant::WSM: return "WSM";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  for (Variant v : {Variant::EB, Variant::EBw, Variant::EBwx, Variant::EBL, Variant::EBLw, Variant::SM,
                    Variant::WSM}) {
    std::string name = to_string(v);
    std::string a = name, b = text;
    std::transform(a.begin(), a.end(), a.begin(), ::tolower);
    std::transform(b.begin(), b.end(), b.begin(), ::tolower);
    if (a == b) return v;
  }
  throw Error(ErrorKind::Parse, "unknown variant '" + text + "' (expected EB|EBw|EBwx|EBL|EBLw|SM|WSM)");
}

bool is_balancing(Variant v) { return v != Variant::SM && v != Variant::WSM; }

bool uses_weighted_regression(Variant v) {
  return v == Variant::EBw || v == Variant::EBwx || v == Variant::EBLw;
}

// ---------------------------------------------------------------------------
// Calibration basis

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

Eigen::Index find_column(const std::string& name, const std::vector<std::string>& covariate_names) {
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    if (covariate_names[j] == name) return static_cast<Eigen::Index>(j);
  }
  throw Error(ErrorKind::DimensionMismatch, "basis term refers to unknown covariate '" + name + "'");
}

BasisTerm parse_term(const std::string& raw_text, const std::vector<std::string>& covariate_names) {
  const std::string text = trim(raw_text);
  if (text.empty()) throw Error(ErrorKind::Parse, "empty basis term");
  BasisTerm term;
  term.name = text;
  if (auto pos = text.find('^'); pos != std::string::npos) {
    if (trim(text.substr(pos + 1)) != "2") {
      throw Error(ErrorKind::Parse, "only squares are supported in basis term '" + text + "'");
    }
    term.kind = BasisTerm::Kind::Square;
    term.first = term.second = find_column(trim(text.substr(0, pos)), covariate_names);
  } else if (auto star = text.find('*'); star != std::string::npos) {
    term.kind = BasisTerm::Kind::Product;
    term.first = find_column(trim(text.substr(0, star)), covariate_names);
    term.second = find_column(trim(text.substr(star + 1)), covariate_names);
  } else {
    term.kind = BasisTerm::Kind::Raw;
    term.first = term.second = find_column(text, covariate_names);
  }
  return term;
}

}  // namespace

CalibrationBasis CalibrationBasis::parse(const std::string& spec, const std::vector<std::string>& covariate_names) {
  std::vector<std::string> names;
  std::stringstream ss(spec);
  for (std::string tok; std::getline(ss, tok, ',');) names.push_back(tok);
  return from_names(names, covariate_names);
}

CalibrationBasis CalibrationBasis::from_names(const std::vector<std::string>& names,
                                              const std::vector<std::string>& covariate_names) {
  std::vector<BasisTerm> terms;
  terms.reserve(names.size());
  for (const auto& name : names) terms.push_back(parse_term(name, covariate_names));
  if (terms.empty()) throw Error(ErrorKind::Parse, "calibration basis is empty");
  return CalibrationBasis(std::move(terms));
}

CalibrationBasis CalibrationBasis::raw(const std::vector<std::string>& covariate_names) {
  std::vector<BasisTerm> terms;
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    terms.push_back({BasisTerm::Kind::Raw, static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j),
                     covariate_names[j]});
  }
  return CalibrationBasis(std::move(terms));
}

std::vector<std::string> CalibrationBasis::names() const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.name);
  return out;
}

Eigen::MatrixXd CalibrationBasis::evaluate(const Eigen::MatrixXd& covariates) const {
  Eigen::MatrixXd b(covariates.rows(), static_cast<Eigen::Index>(terms_.size()) + 1);
  b.col(0).setOnes();
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    const auto& term = terms_[t];
    if (term.first >= covariates.cols() || term.second >= covariates.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "basis term '" + term.name + "' exceeds covariate columns");
    }
    const auto col = static_cast<Eigen::Index>(t) + 1;
    if (term.kind == BasisTerm::Kind::Raw) {
      b.col(col) = covariates.col(term.first);
    } else {
      b.col(col) = covariates.col(term.first).cwiseProduct(covariates.col(term.second));
    }
  }
  return b;
}

Eigen::VectorXd CalibrationBasis::sample_means(const Eigen::MatrixXd& covariates) const {
  const Eigen::MatrixXd b = evaluate(covariates);
  return b.colwise().mean().tail(static_cast<Eigen::Index>(terms_.size())).transpose();
}

std::optional<std::size_t> CalibrationBasis::raw_position(Eigen::Index covariate) const {
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    if (terms_[t].kind == BasisTerm::Kind::Raw && terms_[t].first == covariate) return t;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Moment functions

MomentFunction MomentFunction::mean() {
  MomentFunction m;
  m.name = "mean";
  m.evaluate = [](const Eigen::VectorXd&, double y, double theta) { return theta - y; };
  m.jacobian = [](const Eigen::VectorXd&, double, double) { return 1.0; };
  return m;
}

double solve_moment(const MomentFunction& moment, const InternalDataset& data, const Eigen::VectorXd& weights) {
  const Eigen::Index n = data.n();
  const double wsum = weights.sum();
  double theta = weights.dot(data.outcome) / wsum;
  Eigen::VectorXd x(data.d());
  for (int iter = 0; iter < 100; ++iter) {
    double f = 0.0, fp = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      x = data.covariates.row(i).transpose();
      f += weights(i) * moment.evaluate(x, data.outcome(i), theta);
      fp += weights(i) * moment.jacobian(x, data.outcome(i), theta);
    }
    if (std::abs(f) <= 1e-13 * wsum * std::max(1.0, std::abs(theta))) return theta;
    if (fp == 0.0) throw Error(ErrorKind::SingularJacobianBlock, "moment function has zero derivative");
    theta -= f / fp;
  }
  throw Error(ErrorKind::InvalidArgument, "weighted estimating equation did not converge");
}

// ---------------------------------------------------------------------------
// Targets

Eigen::VectorXd regression_means(const Eigen::VectorXd& mu_x, const CalibrationBasis& basis, Eigen::Index d) {
  if (mu_x.size() != static_cast<Eigen::Index>(basis.size())) {
    throw Error(ErrorKind::DimensionMismatch, "mu_x_ex length does not match the calibration basis");
  }
  Eigen::VectorXd m(d + 1);
  m(0) = 1.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    auto pos = basis.raw_position(j);
    if (!pos) {
      throw Error(ErrorKind::DimensionMismatch,
                  "calibration basis lacks the raw covariate needed by the regression (column " +
                      std::to_string(j) + ")");
    }
    m(j + 1) = mu_x(static_cast<Eigen::Index>(*pos));
  }
  return m;
}

double stage2_target(const ExternalSummary& summary, const Eigen::VectorXd& reg_means, EtaSource source) {
  if (source == EtaSource::OutcomeMean) {
    if (summary.mu_y) return *summary.mu_y;
    if (summary.coefficients && summary.coefficients->link == Link::Identity) {
      // OLS with an intercept reproduces the outcome mean at the covariate means.
      return summary.coefficients->beta.dot(reg_means);
    }
    throw Error(ErrorKind::DimensionMismatch, "summary provides neither mu_y_ex nor identity-link coefficients");
  }
  if (!summary.coefficients) throw Error(ErrorKind::DimensionMismatch, "summary has no regression coefficients");
  const auto& beta = summary.coefficients->beta;
  if (beta.size() != reg_means.size()) {
    throw Error(ErrorKind::DimensionMismatch, "beta_ex length does not match the regression design");
  }
  return beta.dot(reg_means);
}

EtaSource eta_source_for(Variant v, const ExternalSummary& summary) {
  if (v == Variant::EBL || v == Variant::EBLw) return EtaSource::OutcomeMean;
  return summary.coefficients ? EtaSource::Coefficients : EtaSource::OutcomeMean;
}

ResolvedSummary resolve_summary(const ExternalSummary& summary, const CalibrationBasis& basis, Eigen::Index d,
                                Variant v) {
  summary.validate();
  ResolvedSummary r;
  r.mu_x = summary.mu_x;
  r.n1 = summary.n1;
  r.source = eta_source_for(v, summary);
  r.link = r.source == EtaSource::Coefficients ? summary.coefficients->link : Link::Identity;
  if (summary.mu_y) {
    r.external_mean = summary.mu_y;
  } else if (summary.coefficients && summary.coefficients->link == Link::Identity) {
    try {
      r.external_mean = summary.coefficients->beta.dot(regression_means(summary.mu_x, basis, d));
    } catch (const Error&) {
    }
  }
  if (is_balancing(v)) {
    r.eta_ex = stage2_target(summary, regression_means(summary.mu_x, basis, d), r.source);
  } else if (r.external_mean) {
    r.eta_ex = *r.external_mean;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stages

BalanceSolution stage1_weights(const InternalDataset& data, const CalibrationBasis& basis,
                               const Eigen::VectorXd& mu_x, const EntropySpec& entropy1,
                               const SolverOptions& opts) {
  if (mu_x.size() != static_cast<Eigen::Index>(basis.size())) {
    throw Error(ErrorKind::DimensionMismatch, "mu_x_ex length does not match the calibration basis");
  }
  BalanceProblem problem;
  problem.basis = basis.evaluate(data.covariates);
  problem.target.resize(mu_x.size() + 1);
  problem.target << 1.0, mu_x;
  problem.entropy = entropy1;
  return solve_dual(problem, opts);
}

Eigen::MatrixXd build_h(const Eigen::MatrixXd& design, const RegressionFit& fit, const Eigen::VectorXd& w1) {
  if (design.cols() != fit.beta.size() || design.rows() != w1.size()) {
    throw Error(ErrorKind::DimensionMismatch, "design, coefficients and weights disagree in shape");
  }
  Eigen::MatrixXd h(design.rows(), 2);
  h.col(0).setOnes();
  h.col(1) = w1.cwiseProduct(design * fit.beta);
  return h;
}

BalanceSolution stage2_weights(const Eigen::MatrixXd& h, double eta_ex, const EntropySpec& entropy2,
                               const std::optional<ExtraCalibration>& extra, const SolverOptions& opts) {
  BalanceProblem problem;
  problem.entropy = entropy2;
  if (extra) {
    if (extra->columns.rows() != h.rows() || extra->columns.cols() != extra->targets.size()) {
      throw Error(ErrorKind::DimensionMismatch, "extra calibration columns do not match targets");
    }
    problem.basis.resize(h.rows(), h.cols() + extra->columns.cols());
    problem.basis << h, extra->columns;
    problem.target.resize(2 + extra->targets.size());
    problem.target << 1.0, eta_ex, extra->targets;
  } else {
    problem.basis = h;
    problem.target = Eigen::Vector2d(1.0, eta_ex);
  }
  return solve_dual(problem, opts);
}

// ---------------------------------------------------------------------------
// Estimation

FittedEstimate fit_estimator(const InternalDataset& data, const CalibrationBasis& basis,
                             const ResolvedSummary& summary, const EstimatorOptions& opts) {
  data.validate();
  FittedEstimate fit;
  fit.variant = opts.variant;
  fit.entropy1 = opts.entropy1;
  fit.entropy2 = opts.entropy2;
  fit.summary = summary;
  const Eigen::Index n = data.n();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  fit.sample_mean = solve_moment(opts.moment, data, ones);

  if (opts.variant == Variant::SM) {
    fit.theta = fit.sample_mean;
    return fit;
  }
  if (opts.variant == Variant::WSM) {
    if (!summary.external_mean) {
      throw Error(ErrorKind::DimensionMismatch, "WSM needs mu_y_ex or identity-link coefficients");
    }
    const double nn = static_cast<double>(n), n1 = static_cast<double>(summary.n1);
    fit.theta = (nn * data.outcome.mean() + n1 * *summary.external_mean) / (nn + n1);
    return fit;
  }

  auto exclude = [&](const std::string& why) {
    fit.excluded = true;
    fit.exclusion_reason = why;
    fit.theta = fit.sample_mean;
  };

  fit.basis_matrix = basis.evaluate(data.covariates);
  fit.mu_target.resize(summary.mu_x.size() + 1);
  fit.mu_target << 1.0, summary.mu_x;
  fit.design = data.design();
  fit.weighted_regression = uses_weighted_regression(opts.variant);

  try {
    fit.stage1 = solve_dual({fit.basis_matrix, fit.mu_target, opts.entropy1}, opts.solver);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InfeasibleTarget || opts.fallback == Fallback::None) throw;
    exclude(std::string("stage one: ") + e.what());
    return fit;
  }

  if (fit.weighted_regression) {
    fit.regression = fit_regression(data, summary.link, fit.stage1.weights);
  } else {
    fit.regression = fit_regression(data, summary.link);
  }

  fit.h = build_h(fit.design, fit.regression, fit.stage1.weights);
  std::optional<ExtraCalibration> extra;
  if (opts.variant == Variant::EBwx) {
    if (opts.extra_calibration) {
      fit.extra_columns = *opts.extra_calibration;
    } else {
      for (Eigen::Index j = 0; j < data.d(); ++j) fit.extra_columns.push_back(j);
    }
    for (const auto j : fit.extra_columns) {
      if (j < 0 || j >= data.d()) throw Error(ErrorKind::DimensionMismatch, "extra calibration column out of range");
    }
    // A covariate already in the span of H adds a redundant constraint (this
    // happens when w1 is constant, e.g. with no covariate shift); drop it.
    std::vector<Eigen::Index> kept;
    Eigen::MatrixXd span = fit.h;
    for (const auto j : fit.extra_columns) {
      Eigen::MatrixXd cand(n, span.cols() + 1);
      cand << span, data.covariates.col(j);
      Eigen::MatrixXd zc = cand;
      for (Eigen::Index c = 1; c < zc.cols(); ++c) {
        zc.col(c).array() -= zc.col(c).mean();
        const double sd = zc.col(c).norm();
        if (sd > 0.0) zc.col(c) /= sd;
      }
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(zc).singularValues();
      if (sv(sv.size() - 1) > opts.solver.rank_tolerance * sv(0)) {
        kept.push_back(j);
        span = std::move(cand);
      }
    }
    fit.extra_columns = kept;
    ExtraCalibration ec;
    ec.columns.resize(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) ec.columns.col(static_cast<Eigen::Index>(c)) = data.covariates.col(kept[c]);
    ec.targets = ec.columns.colwise().mean().transpose();
    extra = ec;
    fit.h_target.resize(2 + ec.targets.size());
    fit.h_target << 1.0, summary.eta_ex, ec.targets;
    Eigen::MatrixXd full(n, fit.h.cols() + ec.columns.cols());
    full << fit.h, ec.columns;
    fit.h = full;
  } else {
    fit.h_target = Eigen::Vector2d(1.0, summary.eta_ex);
  }

  try {
    fit.stage2 = solve_dual({fit.h, fit.h_target, opts.entropy2}, opts.solver);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InfeasibleTarget || opts.fallback == Fallback::None) throw;
    exclude(std::string("stage two: ") + e.what());
    return fit;
  }
  fit.balanced = true;
  fit.theta_balanced = solve_moment(opts.moment, data, fit.stage2.weights);
  fit.theta = fit.theta_balanced;

  const double h_coef = fit.stage2.lambda(1);
  if (std::abs(h_coef) > opts.exclusion_threshold) {
    std::ostringstream os;
    os << "|lambda2 for H| = " << std::abs(h_coef) << " exceeds threshold " << opts.exclusion_threshold;
    exclude(os.str());
  }
  return fit;
}

WeightSummary summarize_weights(const Eigen::VectorXd& w) {
  WeightSummary s;
  if (w.size() == 0) return s;
  s.min = w.minCoeff();
  s.max = w.maxCoeff();
  s.mean = w.mean();
  s.ess = w.sum() * w.sum() / w.squaredNorm();
  return s;
}

EstimateReport make_report(const FittedEstimate& fit, long long n) {
  EstimateReport r;
  r.theta_hat = fit.theta;
  r.variant = fit.variant;
  r.excluded = fit.excluded;
  r.exclusion_reason = fit.exclusion_reason;
  r.n = n;
  r.n1 = fit.summary.n1;
  r.kappa = fit.summary.n1 > 0 ? static_cast<double>(n) / static_cast<double>(fit.summary.n1) : 0.0;
  if (fit.stage1.weights.size() > 0) {
    r.lambda1.assign(fit.stage1.lambda.data(), fit.stage1.lambda.data() + fit.stage1.lambda.size());
    r.w1_summary = summarize_weights(fit.stage1.weights);
  }
  if (fit.balanced) {
    r.lambda2.assign(fit.stage2.lambda.data(), fit.stage2.lambda.data() + fit.stage2.lambda.size());
    r.w2_summary = summarize_weights(fit.stage2.weights);
  }
  if (fit.excluded) r.warnings.push_back("excluded: " + fit.exclusion_reason + "; reporting the sample mean");
  return r;
}

EstimateReport estimate(const InternalDataset& data, const CalibrationBasis& basis, const ExternalSummary& summary,
                        const EstimatorOptions& opts) {
  const ResolvedSummary resolved = resolve_summary(summary, basis, data.d(), opts.variant);
  return make_report(fit_estimator(data, basis, resolved, opts), data.n());
}

}  // namespace entbal
