#include <doctest.h>

#include <random>

#include "entbal/error.hpp"
#include "entbal/regress.hpp"
#include "oracles.hpp"

using entbal::InternalDataset;

namespace {

InternalDataset make(std::initializer_list<std::pair<double, double>> rows) {
  InternalDataset d;
  d.covariates.resize(static_cast<Eigen::Index>(rows.size()), 1);
  d.outcome.resize(static_cast<Eigen::Index>(rows.size()));
  d.covariate_names = {"x"};
  Eigen::Index i = 0;
  for (auto [x, y] : rows) {
    d.covariates(i, 0) = x;
    d.outcome(i++) = y;
  }
  return d;
}

Eigen::VectorXd wls_oracle(const InternalDataset& d, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd x = oracle::design(d);
  const Eigen::MatrixXd a = x.transpose() * w.asDiagonal() * x;
  return a.fullPivLu().solve(x.transpose() * w.asDiagonal() * d.outcome);
}

}  // namespace

TEST_CASE("OLS on exact lines") {
  auto fit = entbal::fit_ols(make({{0, 0}, {1, 1}, {2, 2}}));
  CHECK(fit.beta(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fit.beta(1) == doctest::Approx(1.0));
  fit = entbal::fit_ols(make({{0, 1}, {1, 1}}));
  CHECK(fit.beta(0) == doctest::Approx(1.0));
  CHECK(std::abs(fit.beta(1)) <= 1e-12);
}

TEST_CASE("OLS and WLS match dense normal equations") {
  std::mt19937_64 rng(2);
  const auto d = oracle::random_dataset(rng, 20, 3);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(20);
  const auto ols = entbal::fit_ols(d);
  CHECK((ols.beta - wls_oracle(d, ones)).lpNorm<Eigen::Infinity>() <= 1e-10);
  // residuals orthogonal to the design
  const Eigen::MatrixXd x = oracle::design(d);
  CHECK((x.transpose() * (d.outcome - x * ols.beta) / 20.0).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK((ols.gram_inverse - (x.transpose() * x / 20.0).inverse()).norm() <= 1e-10);

  std::uniform_real_distribution<double> u(0.2, 3.0);
  Eigen::VectorXd w(20);
  for (int i = 0; i < 20; ++i) w(i) = u(rng);
  const auto wls = entbal::fit_wls(d, w);
  CHECK((wls.beta - wls_oracle(d, w)).lpNorm<Eigen::Infinity>() <= 1e-8);
  CHECK((entbal::fit_wls(d, ones).beta - ols.beta).norm() <= 1e-12);
  CHECK((entbal::fit_wls(d, 7.5 * ones).beta - ols.beta).norm() <= 1e-12);
}

TEST_CASE("regression input errors") {
  auto d = make({{1, 0}, {1, 1}, {1, 2}});
  try {
    entbal::fit_ols(d);
    FAIL("expected RankDeficientDesign");
  } catch (const entbal::Error& e) {
    CHECK(e.kind() == entbal::ErrorKind::RankDeficientDesign);
  }
  auto ok = make({{0, 0}, {1, 1}, {2, 1}});
  CHECK_THROWS_AS(entbal::fit_wls(ok, Eigen::Vector3d(1.0, 0.0, 1.0)), entbal::Error);
  CHECK_THROWS_AS(entbal::fit_wls(ok, Eigen::Vector2d(1.0, 1.0)), entbal::Error);
  CHECK_THROWS_AS(entbal::fit_logistic(make({{0, 0}, {1, 2}, {2, 1}})), entbal::Error);
}

TEST_CASE("logistic: symmetric data and intercept-only data") {
  auto fit = entbal::fit_logistic(make({{-1, 0}, {1, 1}, {-1, 1}, {1, 0}}));
  CHECK(std::abs(fit.beta(0)) <= 1e-10);
  CHECK(std::abs(fit.beta(1)) <= 1e-10);

  // intercept only: a covariate uncorrelated with y, mean(y) = 0.25
  auto d = make({{-1, 1}, {-1, 0}, {-1, 0}, {-1, 0}, {1, 1}, {1, 0}, {1, 0}, {1, 0}});
  fit = entbal::fit_logistic(d);
  CHECK(fit.beta(0) == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-10));
  CHECK(std::abs(fit.beta(1)) <= 1e-10);
}

TEST_CASE("logistic: score equations and monotone log-likelihood") {
  std::mt19937_64 rng(9);
  const auto d = oracle::random_dataset(rng, 200, 2, true);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  Eigen::VectorXd w(200);
  for (int i = 0; i < 200; ++i) w(i) = u(rng);
  for (const auto& weights : {std::optional<Eigen::VectorXd>{}, std::optional<Eigen::VectorXd>{w}}) {
    const auto fit = entbal::fit_logistic(d, weights);
    const Eigen::MatrixXd x = oracle::design(d);
    const Eigen::VectorXd ww = weights ? *weights : Eigen::VectorXd::Ones(200);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < 200; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-x.row(i).dot(fit.beta)));
      score += ww(i) * (d.outcome(i) - p) * x.row(i).transpose();
    }
    CHECK((score / 200.0).lpNorm<Eigen::Infinity>() <= 1e-8);
    for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k) {
      CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1]);
    }
  }
}

TEST_CASE("logistic separation is reported") {
  auto d = make({{-2, 0}, {-1, 0}, {1, 1}, {2, 1}});
  try {
    entbal::fit_logistic(d);
    FAIL("expected Separation");
  } catch (const entbal::Error& e) {
    CHECK(e.kind() == entbal::ErrorKind::Separation);
  }
}

TEST_CASE("OLS influence") {
  std::mt19937_64 rng(4);
  const auto d = oracle::random_dataset(rng, 20, 2);
  const auto fit = entbal::fit_ols(d);
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < 20; ++i) {
    avg += entbal::influence_ols(fit, d.covariates.row(i).transpose(), d.outcome(i));
  }
  CHECK((avg / 20.0).lpNorm<Eigen::Infinity>() <= 1e-10);

  // residual-zero row
  const Eigen::Vector2d x0(0.3, -0.2);
  const double y0 = fit.beta(0) + fit.beta.tail(2).dot(x0);
  CHECK(entbal::influence_ols(fit, x0, y0).norm() <= 1e-14);

  // epsilon-upweighting: n d beta / d eps
  const int k = 7;
  const double eps = 1e-6;
  Eigen::VectorXd wp = Eigen::VectorXd::Ones(20), wm = wp;
  wp(k) += eps;
  wm(k) -= eps;
  const Eigen::VectorXd fd = 20.0 * (wls_oracle(d, wp) - wls_oracle(d, wm)) / (2.0 * eps);
  const Eigen::VectorXd phi = entbal::influence_ols(fit, d.covariates.row(k).transpose(), d.outcome(k));
  CHECK((phi - fd).lpNorm<Eigen::Infinity>() <= 1e-4);

  auto logit = entbal::fit_logistic(oracle::random_dataset(rng, 50, 2, true));
  CHECK_THROWS_AS(entbal::influence_ols(logit, x0, 1.0), entbal::Error);
}

TEST_CASE("weights near one give near-OLS coefficients") {
  std::mt19937_64 rng(8);
  const auto d = oracle::random_dataset(rng, 50, 2);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(50);
  w(3) += 1e-10;
  CHECK((entbal::fit_wls(d, w).beta - entbal::fit_ols(d).beta).norm() <= 1e-8);
}
