#include "entbal/inference.hpp"

#include <cmath>
#include <limits>

#include "entbal/error.hpp"
#include "entbal/parallel.hpp"
#include "entbal/rng.hpp"

namespace entbal {

namespace {

constexpr double kMaxCondition = 1e12;

void check_block(const Eigen::MatrixXd& block, const char* name) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(block);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(sv.size() - 1) > 0.0) || sv(0) / sv(sv.size() - 1) > kMaxCondition) {
    throw Error(ErrorKind::SingularJacobianBlock, std::string("Jacobian block ") + name + " is singular");
  }
}

Eigen::MatrixXd empirical_covariance(const Eigen::MatrixXd& rows) {
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(rows.rows());
}

double empirical_variance(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().mean();
}

double kappa_quadratic(const SandwichComponents& c, const Eigen::MatrixXd& coef_rows) {
  if (!c.sigma_w) return 0.0;
  const Eigen::MatrixXd a = coef_rows * c.w_embedding;
  return (a * *c.sigma_w * a.transpose()).trace();
}

}  // namespace

double normal_two_sided_pvalue(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

Eigen::MatrixXd SandwichComponents::jacobian() const {
  const Eigen::Index d = dim();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(d, d);
  const Eigen::Index o1 = k, o2 = k + q, o3 = k + q + m;
  j.block(0, 0, k, k) = J00;
  j.block(0, o1, k, q) = J01;
  j.block(o1, o1, q, q) = J11;
  j.block(o2, 0, m, k) = J20;
  j.block(o2, o1, m, q) = J21;
  j.block(o2, o2, m, m) = J22;
  j.block(o3, 0, 1, k) = J30;
  j.block(o3, o1, 1, q) = J31;
  j.block(o3, o2, 1, m) = J32;
  j(o3, o3) = J33;
  return j;
}

SandwichComponents sandwich_components(const FittedEstimate& fit, const InternalDataset& data,
                                       const EstimatorOptions& opts, double kappa,
                                       const std::optional<Eigen::MatrixXd>& sigma_w) {
  if (!fit.balanced) throw Error(ErrorKind::InvalidArgument, "sandwich variance needs a balanced fit");
  const Eigen::Index n = data.n();
  const double nd = static_cast<double>(n);
  const Eigen::MatrixXd& x = fit.design;
  const Eigen::MatrixXd& b = fit.basis_matrix;
  const Eigen::MatrixXd& h = fit.h;
  const Eigen::VectorXd& lambda2 = fit.stage2.lambda;
  const Eigen::VectorXd& w1 = fit.stage1.weights;
  const Eigen::VectorXd& w2 = fit.stage2.weights;

  SandwichComponents c;
  c.k = x.cols();
  c.q = b.cols();
  c.m = h.cols();
  c.kappa = kappa;
  c.sigma_w = sigma_w;
  const Eigen::Index k = c.k, q = c.q, m = c.m;
  if (sigma_w && (sigma_w->rows() != q || sigma_w->cols() != q)) {
    throw Error(ErrorKind::DimensionMismatch, "sigma_w must be (len(mu_x_ex) + 1) square");
  }

  const Eigen::VectorXd u1 = b * fit.stage1.lambda;
  const Eigen::VectorXd v2 = h * lambda2;
  const Eigen::VectorXd eta = x * fit.regression.beta;
  const Link link = fit.regression.link;
  const Eigen::MatrixXd& a_inv = fit.regression.gram_inverse;

  c.J00 = Eigen::MatrixXd::Zero(k, k);
  c.J01 = Eigen::MatrixXd::Zero(k, q);
  c.J11 = Eigen::MatrixXd::Zero(q, q);
  c.J20 = Eigen::MatrixXd::Zero(m, k);
  c.J21 = Eigen::MatrixXd::Zero(m, q);
  c.J22 = Eigen::MatrixXd::Zero(m, m);
  c.J30 = Eigen::RowVectorXd::Zero(k);
  c.J31 = Eigen::RowVectorXd::Zero(q);
  c.J32 = Eigen::RowVectorXd::Zero(m);
  c.J33 = 0.0;
  c.psi.resize(n, c.dim());

  Eigen::VectorXd xrow(data.d());
  Eigen::MatrixXd info_sum = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd cross_sum = Eigen::MatrixXd::Zero(k, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xt = x.row(i).transpose();
    const Eigen::VectorXd bi = b.row(i).transpose();
    const Eigen::VectorXd hi = h.row(i).transpose();
    const double w1p = fit.entropy1.rho_prime_unchecked(u1(i));
    const double w2p = fit.entropy2.rho_prime_unchecked(v2(i));
    const double omega = fit.weighted_regression ? w1(i) : 1.0;
    const double omega_p = fit.weighted_regression ? w1p : 0.0;
    const double resid = data.outcome(i) - mean_function(link, eta(i));
    xrow = data.covariates.row(i).transpose();
    const double u = opts.moment.evaluate(xrow, data.outcome(i), fit.theta_balanced);
    const double up = opts.moment.jacobian(xrow, data.outcome(i), fit.theta_balanced);

    info_sum.noalias() += omega * mean_derivative(link, eta(i)) * xt * xt.transpose();
    cross_sum.noalias() += omega_p * resid * xt * bi.transpose();
    c.J11.noalias() += w1p * bi * bi.transpose();

    // Only the H coordinate of H~ depends on beta and lambda1.
    const Eigen::VectorXd r_beta = w1(i) * xt;
    const Eigen::VectorXd r_lambda = w1p * eta(i) * bi;
    c.J20.noalias() += w2p * lambda2(1) * hi * r_beta.transpose();
    c.J20.row(1).noalias() += w2(i) * r_beta.transpose();
    c.J21.noalias() += w2p * lambda2(1) * hi * r_lambda.transpose();
    c.J21.row(1).noalias() += w2(i) * r_lambda.transpose();
    c.J22.noalias() += w2p * hi * hi.transpose();
    c.J30.noalias() += u * w2p * lambda2(1) * r_beta.transpose();
    c.J31.noalias() += u * w2p * lambda2(1) * r_lambda.transpose();
    c.J32.noalias() += u * w2p * hi.transpose();
    c.J33 += w2(i) * up;

    c.psi.block(i, 0, 1, k) = (a_inv * xt * (omega * resid)).transpose();
    c.psi.block(i, k, 1, q) = (w1(i) * bi - fit.mu_target).transpose();
    Eigen::VectorXd p2 = w2(i) * hi - fit.h_target;
    // Extra covariate constraints target the internal mean, so each row
    // contributes its own value.
    for (Eigen::Index e = 2; e < m; ++e) p2(e) = (w2(i) - 1.0) * hi(e);
    c.psi.block(i, k + q, 1, m) = p2.transpose();
    c.psi(i, k + q + m) = w2(i) * u;
  }
  c.J00 = -a_inv * info_sum / nd;
  c.J01 = a_inv * cross_sum / nd;
  c.J11 /= nd;
  c.J20 /= nd;
  c.J21 /= nd;
  c.J22 /= nd;
  c.J30 /= nd;
  c.J31 /= nd;
  c.J32 /= nd;
  c.J33 /= nd;

  check_block(c.J00, "J00");
  check_block(c.J11, "J11");
  check_block(c.J22, "J22");
  if (!(std::abs(c.J33) > 1.0 / kMaxCondition)) {
    throw Error(ErrorKind::SingularJacobianBlock, "Jacobian block J33 is singular");
  }

  c.tau3 = 1.0 / c.J33;
  c.tau2 = c.J22.transpose().partialPivLu().solve(c.tau3 * c.J32.transpose());
  c.tau0 = -c.J00.transpose().partialPivLu().solve(c.J20.transpose() * c.tau2 - c.tau3 * c.J30.transpose());
  c.tau1 = -c.J11.transpose().partialPivLu().solve(c.J21.transpose() * c.tau2 - c.tau3 * c.J31.transpose() +
                                                    c.J01.transpose() * c.tau0);

  c.I_hat = empirical_covariance(c.psi);

  // mu_x noise enters l1 at the non-constant coordinates, eta_ex noise enters
  // l2 at the H coordinate.
  c.w_embedding = Eigen::MatrixXd::Zero(c.dim(), q);
  for (Eigen::Index j = 0; j + 1 < q; ++j) c.w_embedding(k + 1 + j, j) = -1.0;
  c.w_embedding(k + q + 1, q - 1) = -1.0;
  return c;
}

Eigen::VectorXd theta_influence_tau(const SandwichComponents& c) {
  const Eigen::Index k = c.k, q = c.q, m = c.m;
  return c.tau3 * c.psi.col(k + q + m) - c.psi.block(0, k + q, c.psi.rows(), m) * c.tau2 -
         c.psi.block(0, k, c.psi.rows(), q) * c.tau1 - c.psi.block(0, 0, c.psi.rows(), k) * c.tau0;
}

Eigen::VectorXd theta_influence_dense(const SandwichComponents& c) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(c.dim());
  e(c.dim() - 1) = 1.0;
  const Eigen::VectorXd row = c.jacobian().transpose().fullPivLu().solve(e);
  return c.psi * row;
}

PluginVariance plugin_variance(const SandwichComponents& c, double kappa_negligible) {
  PluginVariance v;
  const Eigen::VectorXd infl = theta_influence_tau(c);
  v.sigma_eb = empirical_variance(infl);
  Eigen::RowVectorXd coef(c.dim());
  coef << -c.tau0.transpose(), -c.tau1.transpose(), -c.tau2.transpose(), c.tau3;
  if (c.sigma_w) {
    v.kappa_term = c.kappa * kappa_quadratic(c, coef);
    v.sigma_eb += v.kappa_term;
  } else if (c.kappa > kappa_negligible) {
    v.kappa_term_omitted = true;
  }
  v.se = std::sqrt(v.sigma_eb / static_cast<double>(c.psi.rows()));
  return v;
}

PluginVariance plugin_variance(const FittedEstimate& fit, const InternalDataset& data,
                               const EstimatorOptions& opts, const std::optional<Eigen::MatrixXd>& sigma_w,
                               double kappa_negligible) {
  const double n = static_cast<double>(data.n());
  const double kappa = fit.summary.n1 > 0 ? n / static_cast<double>(fit.summary.n1) : 0.0;
  if (fit.balanced && !fit.excluded) {
    return plugin_variance(sandwich_components(fit, data, opts, kappa, sigma_w), kappa_negligible);
  }
  PluginVariance v;
  // Internal-only: influence -U_i / E_n[U'] of the sample-moment solution.
  Eigen::VectorXd infl(data.n());
  Eigen::VectorXd xrow(data.d());
  double slope = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    xrow = data.covariates.row(i).transpose();
    infl(i) = opts.moment.evaluate(xrow, data.outcome(i), fit.sample_mean);
    slope += opts.moment.jacobian(xrow, data.outcome(i), fit.sample_mean);
  }
  infl /= slope / n;
  v.sigma_eb = empirical_variance(infl);
  if (fit.variant == Variant::WSM) {
    // The external outcome variance is not published; the internal one stands in.
    const double n1 = static_cast<double>(fit.summary.n1);
    const double a = n / (n + n1), c = n1 / (n + n1);
    v.sigma_eb = a * a * v.sigma_eb + c * c * v.sigma_eb * kappa;
  }
  v.se = std::sqrt(v.sigma_eb / n);
  return v;
}

Lambda2TestResult lambda2_test(const SandwichComponents& c, const FittedEstimate& fit) {
  const Eigen::Index n = c.psi.rows();
  const Eigen::MatrixXd jinv = c.jacobian().fullPivLu().inverse();
  const Eigen::MatrixXd rows = jinv.block(c.k + c.q, 0, c.m, c.dim());
  Eigen::MatrixXd cov = rows * c.I_hat * rows.transpose();
  if (c.sigma_w) {
    const Eigen::MatrixXd a = rows * c.w_embedding;
    cov += c.kappa * a * *c.sigma_w * a.transpose();
  }
  cov /= static_cast<double>(n);

  Lambda2TestResult t;
  for (Eigen::Index j = 0; j < c.m; ++j) {
    const double est = fit.stage2.lambda(j);
    const double null = j == 0 ? fit.entropy2.baseline() : 0.0;
    const double se = std::sqrt(std::max(cov(j, j), 0.0));
    const double z = se > 0.0 ? (est - null) / se : (est == null ? 0.0 : std::numeric_limits<double>::infinity());
    t.estimate.push_back(est);
    t.null_value.push_back(null);
    t.se.push_back(se);
    t.stat.push_back(z);
    t.pvalue.push_back(normal_two_sided_pvalue(z));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Bootstrap

namespace {

std::vector<Eigen::Index> resample_rows(Engine& rng, Eigen::Index n) {
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  for (auto& r : rows) r = pick(rng);
  return rows;
}

// (mu_x, eta_ex) recomputed from a resampled internal data set.
Eigen::VectorXd summary_from_sample(const InternalDataset& sample, const CalibrationBasis& basis,
                                    const ResolvedSummary& summary) {
  const Eigen::Index p = static_cast<Eigen::Index>(basis.size());
  Eigen::VectorXd out(p + 1);
  out.head(p) = basis.sample_means(sample.covariates);
  if (summary.source == EtaSource::OutcomeMean) {
    out(p) = sample.outcome.mean();
  } else {
    const RegressionFit fit = fit_regression(sample, summary.link);
    out(p) = fit.beta.dot(regression_means(out.head(p), basis, sample.d()));
  }
  return out;
}

}  // namespace

BootstrapResult bootstrap_variance(const InternalDataset& data, const CalibrationBasis& basis,
                                   const ResolvedSummary& summary, const EstimatorOptions& opts,
                                   const BootstrapConfig& config) {
  if (config.B1 < 2 || config.B2 < 2) throw Error(ErrorKind::InvalidArgument, "bootstrap needs B1, B2 >= 2");
  if (opts.variant == Variant::WSM) {
    throw Error(ErrorKind::InvalidArgument, "bootstrap is available for balancing variants and SM");
  }
  if (summary.n1 < 1) throw Error(ErrorKind::InvalidArgument, "bootstrap needs the external sample size n1");
  data.validate();
  const Eigen::Index n = data.n();
  const Eigen::Index p = static_cast<Eigen::Index>(basis.size());

  BootstrapResult result;
  result.center.resize(p + 1);
  result.center << summary.mu_x, summary.eta_ex;

  // Variability of the summary statistics, from internal resamples.
  std::vector<std::optional<Eigen::VectorXd>> step1(static_cast<std::size_t>(config.B1));
  parallel_for(step1.size(), config.threads, [&](std::size_t b) {
    Engine rng = make_engine(config.seed, 1, b);
    const InternalDataset sample = data.take(resample_rows(rng, n));
    try {
      step1[b] = summary_from_sample(sample, basis, summary);
    } catch (const Error&) {
    }
  });
  Eigen::MatrixXd draws(config.B1, p + 1);
  Eigen::Index ok = 0;
  for (const auto& s : step1) {
    if (s) draws.row(ok++) = s->transpose();
  }
  result.step1_failures = config.B1 - static_cast<int>(ok);
  if (ok < 2) throw Error(ErrorKind::InvalidArgument, "too few successful summary-covariance bootstrap replicates");
  draws.conservativeResize(ok, p + 1);
  const Eigen::RowVectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd centered = draws.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(ok - 1);
  result.sigma_w_hat = cov * static_cast<double>(n);

  // Perturbation law N(center, (n / n1) cov).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov * (static_cast<double>(n) / static_cast<double>(summary.n1)));
  const Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  EstimatorOptions replicate_opts = opts;
  replicate_opts.exclusion_threshold = std::numeric_limits<double>::infinity();
  replicate_opts.fallback = Fallback::None;

  // Resample rows and perturb the summary; the spread of theta is the se.
  std::vector<std::optional<double>> thetas(static_cast<std::size_t>(config.B2));
  parallel_for(thetas.size(), config.threads, [&](std::size_t b) {
    Engine rng = make_engine(config.seed, 2, b);
    const InternalDataset sample = data.take(resample_rows(rng, n));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(p + 1);
    for (Eigen::Index j = 0; j <= p; ++j) z(j) = normal(rng);
    const Eigen::VectorXd perturbed = result.center + root * z;
    ResolvedSummary rs = summary;
    rs.mu_x = perturbed.head(p);
    rs.eta_ex = perturbed(p);
    try {
      thetas[b] = fit_estimator(sample, basis, rs, replicate_opts).theta;
    } catch (const Error&) {
    }
  });
  for (const auto& t : thetas) {
    if (t) result.thetas.push_back(*t);
  }
  result.failures = config.B2 - static_cast<int>(result.thetas.size());
  result.unreliable = result.failures > config.unreliable_fraction * config.B2;
  if (result.thetas.size() < 2) {
    throw Error(ErrorKind::InfeasibleTarget, "fewer than two bootstrap replicates succeeded");
  }
  double m = 0.0;
  for (double t : result.thetas) m += t;
  m /= static_cast<double>(result.thetas.size());
  double ss = 0.0;
  for (double t : result.thetas) ss += (t - m) * (t - m);
  result.se = std::sqrt(ss / static_cast<double>(result.thetas.size() - 1));
  return result;
}

BootstrapResult bootstrap_variance(const InternalDataset& data, const CalibrationBasis& basis,
                                   const ExternalSummary& summary, const EstimatorOptions& opts,
                                   const BootstrapConfig& config) {
  return bootstrap_variance(data, basis, resolve_summary(summary, basis, data.d(), opts.variant), opts, config);
}

// ---------------------------------------------------------------------------

EstimateReport estimate_with_inference(const InternalDataset& data, const CalibrationBasis& basis,
                                       const ExternalSummary& summary, const EstimatorOptions& opts,
                                       const InferenceOptions& inference) {
  const ResolvedSummary resolved = resolve_summary(summary, basis, data.d(), opts.variant);
  const FittedEstimate fit = fit_estimator(data, basis, resolved, opts);
  EstimateReport report = make_report(fit, data.n());

  // Sigma_W from the summary applies only when it describes the eta this variant uses.
  std::optional<Eigen::MatrixXd> sigma_w;
  const EtaSource published_source = summary.coefficients ? EtaSource::Coefficients : EtaSource::OutcomeMean;
  if (summary.sigma_w && resolved.source == published_source) sigma_w = summary.sigma_w;

  std::optional<BootstrapResult> boot;
  if (inference.bootstrap) {
    boot = bootstrap_variance(data, basis, resolved, opts, *inference.bootstrap);
    report.se_bootstrap = boot->se;
    report.bootstrap_failures = boot->failures;
    if (boot->unreliable) report.warnings.push_back("bootstrap se unreliable: more than 10% of replicates failed");
    if (!sigma_w && is_balancing(opts.variant)) sigma_w = boot->sigma_w_hat;
  }

  if (inference.plugin) {
    const PluginVariance pv = plugin_variance(fit, data, opts, sigma_w, inference.kappa_negligible);
    report.se_plugin = pv.se;
    report.kappa_term_omitted = pv.kappa_term_omitted;
    if (pv.kappa_term_omitted) {
      report.warnings.push_back("kappa term omitted: no Sigma_W available for the external summary");
    }
  }
  if (fit.balanced) {
    try {
      const SandwichComponents c = sandwich_components(fit, data, opts, report.kappa, sigma_w);
      report.lambda2_test = lambda2_test(c, fit);
    } catch (const Error& e) {
      report.warnings.push_back(std::string("lambda2 test unavailable: ") + e.what());
    }
  }

  std::optional<double> se;
  if (report.se_bootstrap && (inference.use_bootstrap_se || !report.se_plugin)) {
    se = report.se_bootstrap;
    report.se_source = "bootstrap";
  } else if (report.se_plugin) {
    se = report.se_plugin;
    report.se_source = "plugin";
  }
  if (se) report.ci95 = std::make_pair(report.theta_hat - kZ975 * *se, report.theta_hat + kZ975 * *se);
  return report;
}

}  // namespace entbal
