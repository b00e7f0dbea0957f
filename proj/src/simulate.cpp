#include "entbal/simulate.hpp"

#include <cmath>
#include <random>

#include "entbal/error.hpp"
#include "entbal/parallel.hpp"
#include "entbal/regress.hpp"

namespace entbal {

namespace {

// Neumaier-compensated running sum.
class Accumulator {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double draw_outcome(const ScenarioConfig& config, double x1, double x2, Engine& rng) {
  if (config.scenario == Scenario::S1) {
    std::normal_distribution<double> noise(0.0, 1.0);
    return 0.5 * x1 - x2 + config.a * 0.5 * x1 * x1 + noise(rng);
  }
  std::bernoulli_distribution y(expit(-0.5 + 0.5 * x1 - x2));
  return y(rng) ? 1.0 : 0.0;
}

InternalDataset draw_rows(const ScenarioConfig& config, long long count, bool external, Engine& rng) {
  InternalDataset d;
  d.covariates.resize(count, 2);
  d.outcome.resize(count);
  d.covariate_names = {"x1", "x2"};
  d.outcome_name = "y";
  const double sd = config.x1_sd();
  std::normal_distribution<double> x1_normal(external ? config.x1_external_mean() : 0.0, sd);
  const double shape = config.gamma_reading == GammaReading::Shape4 ? 4.0 : std::sqrt(3.0) / 4.0;
  const double scale = config.gamma_reading == GammaReading::Shape4 ? std::sqrt(3.0) / 4.0 : 4.0;
  std::gamma_distribution<double> x1_gamma(shape, scale);
  std::bernoulli_distribution x2_draw(0.5);
  const bool gamma = external && config.x1_external == ExternalX1::ShiftedGamma;
  for (long long i = 0; i < count; ++i) {
    const double x1 = gamma ? x1_gamma(rng) + config.gamma_shift : x1_normal(rng);
    const double x2 = x2_draw(rng) ? 1.0 : 0.0;
    d.covariates(i, 0) = x1;
    d.covariates(i, 1) = x2;
    d.outcome(i) = draw_outcome(config, x1, x2, rng);
  }
  return d;
}

}  // namespace

std::string to_string(Scenario s) { return s == Scenario::S1 ? "s1" : "s2"; }

std::string to_string(ExternalX1 x) {
  switch (x) {
    case ExternalX1::Normal0: return "normal0";
    case ExternalX1::NormalShifted: return "normal_shifted";
    case ExternalX1::ShiftedGamma: return "shifted_gamma";
  }
  return "?";
}

Scenario parse_scenario(const std::string& text) {
  if (text == "s1" || text == "S1" || text == "1") return Scenario::S1;
  if (text == "s2" || text == "S2" || text == "2") return Scenario::S2;
  throw Error(ErrorKind::Parse, "unknown scenario '" + text + "' (expected s1 | s2)");
}

ExternalX1 parse_external_x1(const std::string& text) {
  if (text == "normal0" || text == "0") return ExternalX1::Normal0;
  if (text == "normal_shifted" || text == "shifted" || text == "0.7071067811865476") return ExternalX1::NormalShifted;
  if (text == "shifted_gamma" || text == "gamma") return ExternalX1::ShiftedGamma;
  throw Error(ErrorKind::Parse, "unknown external X1 law '" + text + "' (expected normal0 | normal_shifted | gamma)");
}

double ScenarioConfig::x1_sd() const {
  return normal_reading == NormalReading::StdDev ? 1.0 / std::sqrt(2.0) : std::pow(2.0, -0.25);
}

double ScenarioConfig::x1_external_mean() const {
  return x1_external == ExternalX1::NormalShifted ? 1.0 / std::sqrt(2.0) : 0.0;
}

std::vector<Variant> default_menu(Scenario s) {
  if (s == Scenario::S1) return {Variant::EB, Variant::EBw, Variant::EBwx, Variant::SM, Variant::WSM};
  return {Variant::EB, Variant::EBL, Variant::EBLw, Variant::SM, Variant::WSM};
}

CalibrationBasis scenario_basis() { return CalibrationBasis::parse("x1,x1^2,x2", {"x1", "x2"}); }

double true_mean(const ScenarioConfig& config) {
  if (config.scenario == Scenario::S1) {
    const double var = config.x1_sd() * config.x1_sd();
    return -0.5 + config.a * 0.5 * var;
  }
  return config.normal_reading == NormalReading::StdDev ? kScenario2TrueMean : kScenario2TrueMeanVarianceReading;
}

Moments external_x1_moments(const ScenarioConfig& config) {
  if (config.x1_external == ExternalX1::ShiftedGamma) {
    const double shape = config.gamma_reading == GammaReading::Shape4 ? 4.0 : std::sqrt(3.0) / 4.0;
    const double scale = config.gamma_reading == GammaReading::Shape4 ? std::sqrt(3.0) / 4.0 : 4.0;
    return {shape * scale + config.gamma_shift, shape * scale * scale};
  }
  return {config.x1_external_mean(), config.x1_sd() * config.x1_sd()};
}

InternalDataset generate_internal(const ScenarioConfig& config, Engine& rng) {
  return draw_rows(config, config.n, false, rng);
}

InternalDataset generate_external_rows(const ScenarioConfig& config, Engine& rng) {
  return draw_rows(config, config.n1, true, rng);
}

ExternalSummary summarize_external(const InternalDataset& rows, const CalibrationBasis& basis, Link link,
                                   bool with_coefficients) {
  const Eigen::Index n1 = rows.n();
  const Eigen::Index p = static_cast<Eigen::Index>(basis.size());
  ExternalSummary s;
  s.basis = basis.names();
  s.n1 = n1;
  const Eigen::MatrixXd b = basis.evaluate(rows.covariates).rightCols(p);
  s.mu_x = b.colwise().mean().transpose();
  s.mu_y = rows.outcome.mean();

  // Per-row influence of (mu_x, eta_ex); Sigma_W is their covariance.
  Eigen::MatrixXd infl(n1, p + 1);
  infl.leftCols(p) = b.rowwise() - s.mu_x.transpose();
  if (with_coefficients) {
    const RegressionFit fit = fit_regression(rows, link);
    s.coefficients = CoefficientSummary{fit.beta, link};
    const Eigen::MatrixXd x = rows.design();
    const Eigen::VectorXd mu_tilde = x.colwise().mean().transpose();
    for (Eigen::Index i = 0; i < n1; ++i) {
      const Eigen::VectorXd xt = x.row(i).transpose();
      const double r = rows.outcome(i) - mean_function(link, xt.dot(fit.beta));
      const Eigen::VectorXd phi = fit.gram_inverse * xt * r;
      infl(i, p) = mu_tilde.dot(phi) + fit.beta.dot(xt - mu_tilde);
    }
  } else {
    infl.col(p) = rows.outcome.array() - *s.mu_y;
  }
  const Eigen::MatrixXd centered = infl.rowwise() - infl.colwise().mean();
  s.sigma_w = centered.transpose() * centered / static_cast<double>(n1);
  return s;
}

ExternalSummary generate_external_summary(const ScenarioConfig& config, Engine& rng) {
  const InternalDataset rows = generate_external_rows(config, rng);
  const Link link = config.scenario == Scenario::S1 ? Link::Identity : Link::Logit;
  return summarize_external(rows, scenario_basis(), link, true);
}

const VariantSummary& SimulationResult::summary(Variant v) const {
  for (const auto& s : summaries) {
    if (s.variant == v) return s;
  }
  throw Error(ErrorKind::InvalidArgument, "variant " + to_string(v) + " was not part of the study");
}

namespace {

ReplicationRecord run_variant(const ScenarioConfig& config, const InternalDataset& data,
                              const ExternalSummary& summary, const CalibrationBasis& basis, Variant variant,
                              int rep, std::size_t variant_index, double truth) {
  ReplicationRecord rec;
  rec.replication = rep;
  rec.variant = variant;
  rec.sample_var_y = (data.outcome.array() - data.outcome.mean()).square().mean();

  EstimatorOptions opts;
  opts.variant = variant;
  opts.exclusion_threshold = config.exclusion_threshold;
  if (variant == Variant::EBwx) opts.extra_calibration = std::vector<Eigen::Index>{0};

  ResolvedSummary resolved;
  FittedEstimate fit;
  try {
    resolved = resolve_summary(summary, basis, data.d(), variant);
    fit = fit_estimator(data, basis, resolved, opts);
  } catch (const Error&) {
    rec.failed = true;
    rec.excluded = true;
    rec.theta = data.outcome.mean();
    return rec;
  }
  rec.theta = fit.theta;
  rec.excluded = fit.excluded;
  if (rec.excluded) return rec;

  std::optional<Eigen::MatrixXd> sigma_w;
  const EtaSource published = summary.coefficients ? EtaSource::Coefficients : EtaSource::OutcomeMean;
  if (summary.sigma_w && resolved.source == published) sigma_w = summary.sigma_w;

  if (config.plugin) {
    try {
      const PluginVariance pv = plugin_variance(fit, data, opts, sigma_w);
      rec.se_plugin = pv.se;
      rec.sigma_eb = pv.sigma_eb;
      if (fit.balanced) {
        const double kappa = static_cast<double>(data.n()) / static_cast<double>(resolved.n1);
        const SandwichComponents c = sandwich_components(fit, data, opts, kappa, sigma_w);
        rec.lambda2_pvalue = lambda2_test(c, fit).pvalue.at(1);
      }
    } catch (const Error&) {
    }
  }
  if (config.bootstrap && is_balancing(variant)) {
    BootstrapConfig bc;
    bc.B1 = config.B1;
    bc.B2 = config.B2;
    bc.seed = derive_seed(config.seed, 3, static_cast<std::uint64_t>(rep) * 16 + variant_index);
    bc.threads = 1;
    try {
      rec.se_bootstrap = bootstrap_variance(data, basis, resolved, opts, bc).se;
    } catch (const Error&) {
    }
  }
  const std::optional<double> se = rec.se_bootstrap ? rec.se_bootstrap : rec.se_plugin;
  if (se) rec.covered = std::abs(rec.theta - truth) <= kZ975 * *se;
  return rec;
}

}  // namespace

SimulationResult run_study(const ScenarioConfig& config) {
  if (config.replications < 1) throw Error(ErrorKind::InvalidArgument, "replications must be >= 1");
  if (config.n < 2 || config.n1 < 2) throw Error(ErrorKind::InvalidArgument, "n and n1 must be >= 2");
  if (config.a != 0 && config.a != 1) throw Error(ErrorKind::InvalidArgument, "a must be 0 or 1");
  SimulationResult result;
  result.config = config;
  if (result.config.menu.empty()) result.config.menu = default_menu(config.scenario);
  const auto& menu = result.config.menu;
  result.true_value = true_mean(config);
  const CalibrationBasis basis = scenario_basis();
  const std::size_t nv = menu.size();

  std::vector<ReplicationRecord> records(static_cast<std::size_t>(config.replications) * nv);
  parallel_for(static_cast<std::size_t>(config.replications), config.threads, [&](std::size_t r) {
    Engine rng = make_engine(config.seed, 0, r);
    const InternalDataset data = generate_internal(config, rng);
    ExternalSummary summary;
    try {
      summary = generate_external_summary(config, rng);
    } catch (const Error&) {
      // The external logistic fit can separate; keep the moments only.
      Engine again = make_engine(config.seed, 4, r);
      summary = summarize_external(generate_external_rows(config, again), basis, Link::Identity, false);
    }
    for (std::size_t v = 0; v < nv; ++v) {
      records[r * nv + v] = run_variant(config, data, summary, basis, menu[v], static_cast<int>(r), v,
                                        result.true_value);
    }
  });

  for (std::size_t v = 0; v < nv; ++v) {
    VariantSummary s;
    s.variant = menu[v];
    s.replications = config.replications;
    Accumulator sum, covered, with_ci, se_sum, rejected, tested, below, with_sigma;
    for (int r = 0; r < config.replications; ++r) {
      const auto& rec = records[static_cast<std::size_t>(r) * nv + v];
      if (rec.failed) ++s.failed;
      if (rec.excluded) {
        ++s.excluded;
        continue;
      }
      ++s.used;
      sum.add(rec.theta);
      if (rec.covered) {
        with_ci.add(1.0);
        covered.add(*rec.covered ? 1.0 : 0.0);
        se_sum.add(rec.se_bootstrap ? *rec.se_bootstrap : *rec.se_plugin);
      }
      if (rec.lambda2_pvalue) {
        tested.add(1.0);
        rejected.add(*rec.lambda2_pvalue < 0.05 ? 1.0 : 0.0);
      }
      if (rec.sigma_eb) {
        with_sigma.add(1.0);
        below.add(*rec.sigma_eb <= rec.sample_var_y ? 1.0 : 0.0);
      }
    }
    s.exclusion_rate = static_cast<double>(s.excluded) / static_cast<double>(s.replications);
    if (s.used > 0) {
      s.mean = sum.value() / s.used;
      s.bias = s.mean - result.true_value;
      Accumulator ss, sq;
      for (int r = 0; r < config.replications; ++r) {
        const auto& rec = records[static_cast<std::size_t>(r) * nv + v];
        if (rec.excluded) continue;
        ss.add((rec.theta - s.mean) * (rec.theta - s.mean));
        sq.add((rec.theta - result.true_value) * (rec.theta - result.true_value));
      }
      s.sd = s.used > 1 ? std::sqrt(ss.value() / (s.used - 1)) : 0.0;
      s.mse = sq.value() / s.used;
      s.mc_se = s.sd / std::sqrt(static_cast<double>(s.used));
    }
    if (with_ci.value() > 0) {
      s.coverage = covered.value() / with_ci.value();
      s.mean_se = se_sum.value() / with_ci.value();
    }
    if (tested.value() > 0) s.lambda2_rejection_rate = rejected.value() / tested.value();
    if (with_sigma.value() > 0) s.plugin_below_var_rate = below.value() / with_sigma.value();
    result.summaries.push_back(s);
  }
  if (config.keep_raw) result.raw = std::move(records);
  return result;
}

OracleResult oracle_mean(const ScenarioConfig& config, long long draws, std::uint64_t seed) {
  if (draws < 2) throw Error(ErrorKind::InvalidArgument, "oracle needs at least two draws");
  // Chunked so the answer does not depend on the worker count.
  constexpr long long kChunk = 100000;
  const long long chunks = (draws + kChunk - 1) / kChunk;
  std::vector<std::pair<double, double>> parts(static_cast<std::size_t>(chunks));
  parallel_for(parts.size(), config.threads, [&](std::size_t c) {
    Engine rng = make_engine(seed, 5, c);
    const long long count = std::min(kChunk, draws - static_cast<long long>(c) * kChunk);
    ScenarioConfig internal = config;
    const InternalDataset d = draw_rows(internal, count, false, rng);
    Accumulator s, s2;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      s.add(d.outcome(i));
      s2.add(d.outcome(i) * d.outcome(i));
    }
    parts[c] = {s.value(), s2.value()};
  });
  Accumulator s, s2;
  for (const auto& [a, b] : parts) {
    s.add(a);
    s2.add(b);
  }
  OracleResult out;
  out.draws = draws;
  out.seed = seed;
  const double nd = static_cast<double>(draws);
  out.mean = s.value() / nd;
  const double var = (s2.value() - nd * out.mean * out.mean) / (nd - 1.0);
  out.mc_se = std::sqrt(std::max(var, 0.0) / nd);
  return out;
}

}  // namespace entbal
