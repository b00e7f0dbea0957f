#include <doctest.h>

#include <random>
#include <sstream>

#include "entbal/error.hpp"
#include "entbal/inference.hpp"
#include "entbal/regress.hpp"
#include "entbal/simulate.hpp"
#include "oracles.hpp"

using namespace entbal;

namespace {

struct Instance {
  InternalDataset data;
  CalibrationBasis basis;
  ExternalSummary summary;
  EstimatorOptions opts;
  FittedEstimate fit;
};

Instance simulated(Scenario sc, int a, ExternalX1 law, Variant v, std::uint64_t seed,
                   EntropySpec e1 = EntropySpec::exponential(), EntropySpec e2 = EntropySpec::exponential()) {
  ScenarioConfig c;
  c.scenario = sc;
  c.a = a;
  c.x1_external = law;
  Engine rng = make_engine(seed, 0, 0);
  Instance in;
  in.data = generate_internal(c, rng);
  in.summary = generate_external_summary(c, rng);
  in.basis = scenario_basis();
  in.opts.variant = v;
  in.opts.entropy1 = e1;
  in.opts.entropy2 = e2;
  in.opts.exclusion_threshold = 1e9;
  if (v == Variant::EBwx) in.opts.extra_calibration = std::vector<Eigen::Index>{0};
  in.fit = fit_estimator(in.data, in.basis, resolve_summary(in.summary, in.basis, 2, v), in.opts);
  return in;
}

std::vector<Instance> instances() {
  std::vector<Instance> out;
  std::uint64_t seed = 100;
  for (Variant v : {Variant::EB, Variant::EBw, Variant::EBwx}) {
    for (int a : {0, 1}) {
      for (ExternalX1 law : {ExternalX1::Normal0, ExternalX1::NormalShifted, ExternalX1::ShiftedGamma}) {
        out.push_back(simulated(Scenario::S1, a, law, v, seed++));
      }
    }
  }
  for (Variant v : {Variant::EB, Variant::EBL, Variant::EBLw}) {
    for (ExternalX1 law : {ExternalX1::Normal0, ExternalX1::NormalShifted}) {
      out.push_back(simulated(Scenario::S2, 0, law, v, seed++));
    }
  }
  out.push_back(simulated(Scenario::S1, 1, ExternalX1::NormalShifted, Variant::EBw, seed++,
                          EntropySpec::empirical_likelihood(), EntropySpec::hellinger()));
  out.push_back(simulated(Scenario::S1, 0, ExternalX1::NormalShifted, Variant::EB, seed++, EntropySpec::renyi(-2.0),
                          EntropySpec::empirical_likelihood()));
  return out;
}

// Stacked estimating equations averaged over rows, at an arbitrary xi, written
// from the definitions.
Eigen::VectorXd stacked_mean(const Instance& in, const SandwichComponents& c, const Eigen::VectorXd& xi) {
  const auto& f = in.fit;
  const Eigen::Index k = c.k, q = c.q, m = c.m, n = in.data.n();
  const Eigen::VectorXd beta = xi.segment(0, k), l1 = xi.segment(k, q), l2 = xi.segment(k + q, m);
  const double theta = xi(k + q + m);
  const Eigen::MatrixXd x = in.data.design();
  const Eigen::MatrixXd b = in.basis.evaluate(in.data.covariates);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k + q + m + 1);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w1 = f.entropy1.rho(b.row(i).dot(l1));
    const double eta = x.row(i).dot(beta);
    const double omega = f.weighted_regression ? w1 : 1.0;
    score += omega * (in.data.outcome(i) - mean_function(f.regression.link, eta)) * x.row(i).transpose();
    out.segment(k, q) += w1 * b.row(i).transpose();
    Eigen::VectorXd h(m);
    h(0) = 1.0;
    h(1) = w1 * eta;
    for (Eigen::Index e = 2; e < m; ++e) h(e) = f.h(i, e);
    const double w2 = f.entropy2.rho(h.dot(l2));
    Eigen::VectorXd p2 = w2 * h;
    for (Eigen::Index e = 2; e < m; ++e) p2(e) = (w2 - 1.0) * h(e);
    out.segment(k + q, m) += p2;
    out(k + q + m) += w2 * (theta - in.data.outcome(i));
  }
  out /= static_cast<double>(n);
  out.segment(0, k) = f.regression.gram_inverse * score / static_cast<double>(n);
  out.segment(k, q) -= f.mu_target;
  out(k + q) -= 1.0;
  out(k + q + 1) -= f.summary.eta_ex;
  return out;
}

}  // namespace

TEST_CASE("tau route equals the dense inverse route") {
  for (const auto& in : instances()) {
    REQUIRE(in.fit.balanced);
    const auto c = sandwich_components(in.fit, in.data, in.opts, 0.1, in.summary.sigma_w);
    const Eigen::VectorXd a = theta_influence_tau(c), b = theta_influence_dense(c);
    CAPTURE(to_string(in.opts.variant));
    CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-8 * std::max(1.0, b.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("Jacobian blocks match finite differences of the stacked equations") {
  for (const auto& in : instances()) {
    const auto c = sandwich_components(in.fit, in.data, in.opts, 0.0, std::nullopt);
    const Eigen::Index d = c.dim();
    Eigen::VectorXd xi(d);
    xi << in.fit.regression.beta, in.fit.stage1.lambda, in.fit.stage2.lambda, in.fit.theta_balanced;
    // the stacked equations vanish at the fit
    CHECK(stacked_mean(in, c, xi).lpNorm<Eigen::Infinity>() <= 1e-7);
    Eigen::MatrixXd fd(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double h = 1e-9 * std::max(1.0, std::abs(xi(j)));
      Eigen::VectorXd up = xi, dn = xi;
      up(j) += h;
      dn(j) -= h;
      fd.col(j) = (stacked_mean(in, c, up) - stacked_mean(in, c, dn)) / (2.0 * h);
    }
    const Eigen::MatrixXd j = c.jacobian();
    CAPTURE(to_string(in.opts.variant));
    CAPTURE(in.fit.summary.link == Link::Logit);
    CAPTURE(in.opts.entropy1.to_string());
    std::ostringstream diff;
    diff << (j - fd);
    CAPTURE(diff.str());
    CHECK((j - fd).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("tau values under no shift with an identity link") {
  std::mt19937_64 rng(31);
  const auto d = oracle::random_dataset(rng, 300, 2);
  const auto basis = CalibrationBasis::raw(d.covariate_names);
  ExternalSummary s;
  s.mu_x = basis.sample_means(d.covariates);
  const auto ols = fit_ols(d);
  s.coefficients = CoefficientSummary{ols.beta, Link::Identity};
  s.n1 = 1000000;
  EstimatorOptions o;
  const auto fit = fit_estimator(d, basis, resolve_summary(s, basis, 2, o.variant), o);
  const auto c = sandwich_components(fit, d, o, 0.0, std::nullopt);
  CHECK(c.tau3 == doctest::Approx(1.0));
  CHECK(c.tau2(0) == doctest::Approx(fit.theta));
  CHECK(c.tau2(1) == doctest::Approx(-1.0));
  CHECK((c.tau1 - ols.beta).norm() <= 1e-8);
  Eigen::VectorXd mu(3);
  mu << 1.0, s.mu_x;
  CHECK((c.tau0 + mu).norm() <= 1e-8);
  // more efficient than the sample mean
  const auto pv = plugin_variance(c);
  const double var_y = (d.outcome.array() - d.outcome.mean()).square().mean();
  CHECK(pv.sigma_eb <= var_y);
  CHECK(!pv.kappa_term_omitted);
}

TEST_CASE("constant outcome has zero variance") {
  std::mt19937_64 rng(41);
  auto d = oracle::random_dataset(rng, 50, 2);
  d.outcome.setConstant(2.5);
  const auto basis = CalibrationBasis::raw(d.covariate_names);
  ExternalSummary s;
  s.mu_x = basis.sample_means(d.covariates) + Eigen::Vector2d(0.2, -0.1);
  s.coefficients = CoefficientSummary{Eigen::Vector3d(2.5, 0.0, 0.0), Link::Identity};
  s.n1 = 100;
  EstimatorOptions o;
  const auto fit = fit_estimator(d, basis, resolve_summary(s, basis, 2, o.variant), o);
  REQUIRE(fit.balanced);
  const auto pv = plugin_variance(fit, d, o, Eigen::MatrixXd::Identity(3, 3));
  CHECK(std::abs(pv.sigma_eb) <= 1e-20);
}

TEST_CASE("kappa term") {
  auto in = simulated(Scenario::S1, 0, ExternalX1::NormalShifted, Variant::EB, 7);
  const double kappa = 0.1;
  const auto with = sandwich_components(in.fit, in.data, in.opts, kappa, in.summary.sigma_w);
  const auto without = sandwich_components(in.fit, in.data, in.opts, kappa, std::nullopt);
  const auto pw = plugin_variance(with), po = plugin_variance(without);
  CHECK(po.kappa_term_omitted);
  CHECK(!pw.kappa_term_omitted);
  // c' J^{-1} E Sigma_W E' J^{-T} c via the dense inverse
  Eigen::VectorXd e = Eigen::VectorXd::Zero(with.dim());
  e(with.dim() - 1) = 1.0;
  const Eigen::RowVectorXd row = with.jacobian().transpose().fullPivLu().solve(e).transpose();
  const Eigen::RowVectorXd a = row * with.w_embedding;
  const double expect = kappa * (a * *in.summary.sigma_w * a.transpose())(0, 0);
  CHECK(pw.kappa_term == doctest::Approx(expect).epsilon(1e-10));
  CHECK(pw.sigma_eb == doctest::Approx(po.sigma_eb + expect).epsilon(1e-12));
  CHECK(pw.se == doctest::Approx(std::sqrt(pw.sigma_eb / in.data.n())));
  // below the negligible threshold nothing is flagged
  const auto tiny = sandwich_components(in.fit, in.data, in.opts, 0.001, std::nullopt);
  CHECK(!plugin_variance(tiny).kappa_term_omitted);
}

TEST_CASE("lambda2 test at the null") {
  std::mt19937_64 rng(51);
  const auto d = oracle::random_dataset(rng, 100, 2);
  const auto basis = CalibrationBasis::raw(d.covariate_names);
  ExternalSummary s;
  s.mu_x = basis.sample_means(d.covariates);
  s.coefficients = CoefficientSummary{fit_ols(d).beta, Link::Identity};
  s.n1 = 1000;
  EstimatorOptions o;
  const auto fit = fit_estimator(d, basis, resolve_summary(s, basis, 2, o.variant), o);
  const auto t = lambda2_test(sandwich_components(fit, d, o, 0.1, std::nullopt), fit);
  REQUIRE(t.stat.size() == 2);
  CHECK(t.null_value[0] == 0.0);
  CHECK(std::abs(t.stat[1]) <= 1e-8);
  CHECK(t.pvalue[1] == doctest::Approx(1.0));
  CHECK(normal_two_sided_pvalue(0.0) == 1.0);
  CHECK(normal_two_sided_pvalue(kZ975) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("sample-mean variance forms") {
  auto in = simulated(Scenario::S1, 0, ExternalX1::Normal0, Variant::SM, 8);
  const double n = static_cast<double>(in.data.n());
  const double var = (in.data.outcome.array() - in.data.outcome.mean()).square().mean();
  auto pv = plugin_variance(in.fit, in.data, in.opts, std::nullopt);
  CHECK(pv.se == doctest::Approx(std::sqrt(var / n)));
  in.opts.variant = Variant::WSM;
  in.fit = fit_estimator(in.data, in.basis, resolve_summary(in.summary, in.basis, 2, Variant::WSM), in.opts);
  pv = plugin_variance(in.fit, in.data, in.opts, std::nullopt);
  const double n1 = static_cast<double>(in.summary.n1);
  const double expect = std::pow(n / (n + n1), 2) * var / n + std::pow(n1 / (n + n1), 2) * var / n1;
  CHECK(pv.se == doctest::Approx(std::sqrt(expect)));
}

TEST_CASE("bootstrap: determinism across seeds and thread counts") {
  auto in = simulated(Scenario::S1, 1, ExternalX1::NormalShifted, Variant::EBw, 9);
  BootstrapConfig bc;
  bc.B1 = 40;
  bc.B2 = 40;
  bc.seed = 77;
  bc.threads = 1;
  const auto a = bootstrap_variance(in.data, in.basis, in.summary, in.opts, bc);
  bc.threads = 3;
  const auto b = bootstrap_variance(in.data, in.basis, in.summary, in.opts, bc);
  CHECK(a.se == b.se);
  CHECK(a.thetas == b.thetas);
  CHECK(a.sigma_w_hat == b.sigma_w_hat);
  bc.seed = 78;
  CHECK(bootstrap_variance(in.data, in.basis, in.summary, in.opts, bc).se != a.se);
  CHECK(a.sigma_w_hat.rows() == 4);
  CHECK(!a.unreliable);
}

TEST_CASE("bootstrap: kappa to zero leaves the rows-only bootstrap") {
  auto in = simulated(Scenario::S1, 0, ExternalX1::Normal0, Variant::EB, 10);
  ResolvedSummary r = resolve_summary(in.summary, in.basis, 2, Variant::EB);
  r.n1 = 1000000000000000LL;
  BootstrapConfig bc;
  bc.B1 = 30;
  bc.B2 = 60;
  bc.seed = 5;
  const auto boot = bootstrap_variance(in.data, in.basis, r, in.opts, bc);
  // Rows-only replicates drawn from the same per-replicate row streams.
  EstimatorOptions o = in.opts;
  o.exclusion_threshold = std::numeric_limits<double>::infinity();
  o.fallback = Fallback::None;
  std::vector<double> thetas;
  for (int b = 0; b < bc.B2; ++b) {
    Engine rng = make_engine(bc.seed, 2, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<Eigen::Index> pick(0, in.data.n() - 1);
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(in.data.n()));
    for (auto& i : rows) i = pick(rng);
    thetas.push_back(fit_estimator(in.data.take(rows), in.basis, r, o).theta);
  }
  double m = 0.0;
  for (double t : thetas) m += t;
  m /= thetas.size();
  double ss = 0.0;
  for (double t : thetas) ss += (t - m) * (t - m);
  CHECK(boot.se == doctest::Approx(std::sqrt(ss / (thetas.size() - 1))).epsilon(1e-5));
}

TEST_CASE("bootstrap input checks") {
  auto in = simulated(Scenario::S1, 0, ExternalX1::Normal0, Variant::WSM, 11);
  BootstrapConfig bc;
  CHECK_THROWS_AS(bootstrap_variance(in.data, in.basis, in.summary, in.opts, bc), Error);
  in.opts.variant = Variant::EB;
  bc.B1 = 1;
  CHECK_THROWS_AS(bootstrap_variance(in.data, in.basis, in.summary, in.opts, bc), Error);
}

TEST_CASE("report ci uses the selected se") {
  auto in = simulated(Scenario::S1, 0, ExternalX1::NormalShifted, Variant::EB, 12);
  InferenceOptions io;
  auto r = estimate_with_inference(in.data, in.basis, in.summary, in.opts, io);
  REQUIRE(r.se_plugin);
  REQUIRE(r.ci95);
  CHECK(r.se_source == "plugin");
  CHECK(r.ci95->first == doctest::Approx(r.theta_hat - kZ975 * *r.se_plugin));
  CHECK(r.ci95->second == doctest::Approx(r.theta_hat + kZ975 * *r.se_plugin));
  CHECK(r.lambda2_test);
  CHECK(r.kappa == doctest::Approx(0.1));
  io.bootstrap = BootstrapConfig{30, 30, 3, 1, 0.1};
  io.use_bootstrap_se = true;
  r = estimate_with_inference(in.data, in.basis, in.summary, in.opts, io);
  REQUIRE(r.se_bootstrap);
  CHECK(r.se_source == "bootstrap");
  CHECK(r.ci95->second - r.ci95->first == doctest::Approx(2.0 * kZ975 * *r.se_bootstrap));
}

TEST_CASE("bootstrap and plug-in se agree on average") {
  ScenarioConfig c;
  c.replications = 200;
  c.menu = {Variant::EB};
  c.plugin = true;
  c.bootstrap = false;
  const auto plug = run_study(c);
  c.plugin = false;
  c.bootstrap = true;
  const auto boot = run_study(c);
  const double sp = *plug.summary(Variant::EB).mean_se, sb = *boot.summary(Variant::EB).mean_se;
  CAPTURE(sp);
  CAPTURE(sb);
  CHECK(std::abs(sb - sp) <= 0.2 * sp);
}
