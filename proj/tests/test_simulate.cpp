#include <doctest.h>

#include <cmath>

#include "entbal/error.hpp"
#include "entbal/simulate.hpp"

using namespace entbal;

namespace {

// E expit(c + 0.5 X1) for X1 ~ N(0, sd), trapezoid on +-12 sd.
double expit_normal_mean(double c, double sd) {
  const int steps = 200000;
  const double lo = -12.0 * sd, hi = 12.0 * sd, h = (hi - lo) / steps;
  double s = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * h;
    const double f = std::exp(-0.5 * x * x / (sd * sd)) / (sd * std::sqrt(2.0 * M_PI)) /
                     (1.0 + std::exp(-(c + 0.5 * x)));
    s += (i == 0 || i == steps) ? 0.5 * f : f;
  }
  return s * h;
}

double scenario2_quadrature(double sd) {
  return 0.5 * expit_normal_mean(-0.5, sd) + 0.5 * expit_normal_mean(-1.5, sd);
}

}  // namespace

TEST_CASE("scenario 1 true means") {
  ScenarioConfig c;
  CHECK(true_mean(c) == doctest::Approx(-0.5));
  c.a = 1;
  CHECK(true_mean(c) == doctest::Approx(-0.25));
  c.normal_reading = NormalReading::Variance;
  CHECK(true_mean(c) == doctest::Approx(-0.5 + 0.5 / std::sqrt(2.0)));
}

TEST_CASE("scenario 2 frozen constants match quadrature") {
  CHECK(std::abs(kScenario2TrueMean - scenario2_quadrature(1.0 / std::sqrt(2.0))) < 2e-4);
  CHECK(std::abs(kScenario2TrueMeanVarianceReading - scenario2_quadrature(std::pow(2.0, -0.25))) < 2e-4);
  ScenarioConfig c;
  c.scenario = Scenario::S2;
  CHECK(true_mean(c) == kScenario2TrueMean);
}

TEST_CASE("oracle mean agrees with the analytic scenario 1 value") {
  ScenarioConfig c;
  c.a = 1;
  const auto o = oracle_mean(c, 1000000, 3);
  CHECK(o.draws == 1000000);
  CHECK(std::abs(o.mean - (-0.25)) < 4.0 * o.mc_se);
  c.scenario = Scenario::S2;
  const auto s = oracle_mean(c, 1000000, 4);
  CHECK(std::abs(s.mean - scenario2_quadrature(1.0 / std::sqrt(2.0))) < 4.0 * s.mc_se);
}

TEST_CASE("internal draws have the stated law") {
  ScenarioConfig c;
  c.n = 200000;
  Engine rng = make_engine(11, 0, 0);
  const auto d = generate_internal(c, rng);
  REQUIRE(d.d() == 2);
  const Eigen::VectorXd x1 = d.covariates.col(0), x2 = d.covariates.col(1);
  const double n = static_cast<double>(c.n);
  CHECK(std::abs(x1.mean()) < 4.0 * std::sqrt(0.5 / n));
  CHECK((x1.array() - x1.mean()).square().mean() == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::abs(x2.mean() - 0.5) < 4.0 * 0.5 / std::sqrt(n));
  CHECK(((x2.array() == 0.0) || (x2.array() == 1.0)).all());
  const Eigen::ArrayXd resid = d.outcome.array() - (0.5 * x1.array() - x2.array());
  CHECK(resid.mean() == doctest::Approx(0.0).epsilon(0.01));
  CHECK((resid - resid.mean()).square().mean() == doctest::Approx(1.0).epsilon(0.02));

  c.scenario = Scenario::S2;
  const auto b = generate_internal(c, rng);
  CHECK(((b.outcome.array() == 0.0) || (b.outcome.array() == 1.0)).all());
  CHECK(b.outcome.mean() == doctest::Approx(kScenario2TrueMean).epsilon(0.03));
}

TEST_CASE("external laws") {
  ScenarioConfig c;
  c.n1 = 200000;
  for (ExternalX1 law : {ExternalX1::Normal0, ExternalX1::NormalShifted, ExternalX1::ShiftedGamma}) {
    c.x1_external = law;
    Engine rng = make_engine(12, 0, static_cast<std::uint64_t>(law));
    const auto rows = generate_external_rows(c, rng);
    const auto m = external_x1_moments(c);
    const Eigen::VectorXd x1 = rows.covariates.col(0);
    CAPTURE(to_string(law));
    CHECK(std::abs(x1.mean() - m.mean) < 4.0 * std::sqrt(m.variance / c.n1));
    CHECK((x1.array() - x1.mean()).square().mean() == doctest::Approx(m.variance).epsilon(0.03));
  }
  c.x1_external = ExternalX1::ShiftedGamma;
  CHECK(external_x1_moments(c).mean == doctest::Approx(std::sqrt(3.0) - 2.0));
  CHECK(external_x1_moments(c).variance == doctest::Approx(0.75));
  c.gamma_reading = GammaReading::ShapeRoot3Over4;
  CHECK(external_x1_moments(c).mean == doctest::Approx(std::sqrt(3.0) - 2.0));
  CHECK(external_x1_moments(c).variance == doctest::Approx(4.0 * std::sqrt(3.0)));
}

TEST_CASE("external summary") {
  ScenarioConfig c;
  Engine rng = make_engine(13, 0, 0);
  auto s = generate_external_summary(c, rng);
  REQUIRE(s.mu_x.size() == 3);
  CHECK(s.n1 == 2000);
  CHECK(s.basis == std::vector<std::string>{"x1", "x1^2", "x2"});
  CHECK(std::abs(s.mu_x(0)) < 3.0 * (1.0 / std::sqrt(2.0)) / std::sqrt(2000.0));
  REQUIRE(s.coefficients);
  CHECK(s.coefficients->link == Link::Identity);
  CHECK(s.coefficients->beta.size() == 3);
  REQUIRE(s.mu_y);
  REQUIRE(s.sigma_w);
  CHECK(s.sigma_w->rows() == 4);
  CHECK((*s.sigma_w - s.sigma_w->transpose()).norm() < 1e-12);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(*s.sigma_w).eigenvalues().minCoeff() > -1e-10);
  // mu_x1 variance on the per-observation scale
  CHECK((*s.sigma_w)(0, 0) == doctest::Approx(0.5).epsilon(0.15));

  c.x1_external = ExternalX1::NormalShifted;
  s = generate_external_summary(c, rng);
  CHECK(std::abs(s.mu_x(0) - 1.0 / std::sqrt(2.0)) < 3.0 * (1.0 / std::sqrt(2.0)) / std::sqrt(2000.0));

  c.scenario = Scenario::S2;
  s = generate_external_summary(c, rng);
  REQUIRE(s.coefficients);
  CHECK(s.coefficients->link == Link::Logit);
}

TEST_CASE("summary without coefficients carries the outcome mean") {
  InternalDataset rows;
  rows.covariate_names = {"x1", "x2"};
  rows.covariates.resize(4, 2);
  rows.covariates << 0, 1, 1, 0, 2, 1, 3, 0;
  rows.outcome.resize(4);
  rows.outcome << 1, 2, 3, 6;
  const auto s = summarize_external(rows, scenario_basis(), Link::Identity, false);
  CHECK(!s.coefficients);
  CHECK(*s.mu_y == doctest::Approx(3.0));
  CHECK(s.mu_x(0) == doctest::Approx(1.5));
  CHECK(s.mu_x(1) == doctest::Approx(3.5));
  CHECK(s.mu_x(2) == doctest::Approx(0.5));
  // last diagonal entry: population variance of y
  CHECK((*s.sigma_w)(3, 3) == doctest::Approx(3.5));
}

TEST_CASE("study counts and determinism across thread counts") {
  ScenarioConfig c;
  c.replications = 24;
  c.scenario = Scenario::S2;
  c.plugin = true;
  c.keep_raw = true;
  c.seed = 99;
  c.threads = 1;
  const auto a = run_study(c);
  c.threads = 4;
  const auto b = run_study(c);
  REQUIRE(a.raw.size() == b.raw.size());
  CHECK(a.raw.size() == 24 * default_menu(Scenario::S2).size());
  for (std::size_t i = 0; i < a.raw.size(); ++i) {
    CHECK(a.raw[i].theta == b.raw[i].theta);
    CHECK(a.raw[i].excluded == b.raw[i].excluded);
    CHECK(a.raw[i].se_plugin == b.raw[i].se_plugin);
  }
  for (const auto& s : a.summaries) {
    const auto& t = b.summary(s.variant);
    CHECK(s.mean == t.mean);
    CHECK(s.sd == t.sd);
    CHECK(s.used + s.excluded == s.replications);
    CHECK(s.exclusion_rate == doctest::Approx(static_cast<double>(s.excluded) / s.replications));
    CHECK(s.failed <= s.excluded);
  }
  c.seed = 100;
  CHECK(run_study(c).summary(Variant::EB).mean != a.summary(Variant::EB).mean);
}

TEST_CASE("sample mean is unbiased in the study") {
  ScenarioConfig c;
  c.replications = 300;
  c.menu = {Variant::SM, Variant::EB};
  const auto r = run_study(c);
  const auto& sm = r.summary(Variant::SM);
  CHECK(std::abs(sm.bias) < 4.0 * sm.mc_se);
  CHECK(sm.mse == doctest::Approx(sm.bias * sm.bias + sm.sd * sm.sd).epsilon(0.02));
  CHECK_THROWS_AS(r.summary(Variant::WSM), Error);
}

TEST_CASE("config parsing") {
  CHECK(parse_scenario("s2") == Scenario::S2);
  CHECK(parse_external_x1("gamma") == ExternalX1::ShiftedGamma);
  CHECK_THROWS_AS(parse_scenario("s3"), Error);
  CHECK_THROWS_AS(parse_external_x1("cauchy"), Error);
  CHECK(default_menu(Scenario::S1).size() == 5);
}
