#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "entbal/data.hpp"
#include "entbal/inference.hpp"
#include "entbal/pipeline.hpp"
#include "entbal/rng.hpp"

namespace entbal {

// Scenario 1: Y | x ~ N(0.5 x1 - x2 + a 0.5 x1^2, 1)
// Scenario 2: Y | x ~ Ber(expit(-0.5 + 0.5 x1 - x2))
// Internal X1 ~ N(0, 1/sqrt 2), X2 ~ Ber(0.5).
enum class Scenario { S1, S2 };

enum class ExternalX1 { Normal0, NormalShifted, ShiftedGamma };

// How "N(mu, 1/sqrt 2)" is read: standard deviation 1/sqrt 2 (default) or
// variance 1/sqrt 2.
enum class NormalReading { StdDev, Variance };

// "Gamma(4, sqrt 3 / 4) shifted by 2": shape 4 and scale sqrt(3)/4 (default),
// or shape sqrt(3)/4 and scale 4.
enum class GammaReading { Shape4, ShapeRoot3Over4 };

std::string to_string(Scenario s);
std::string to_string(ExternalX1 x);
Scenario parse_scenario(const std::string& text);
ExternalX1 parse_external_x1(const std::string& text);

struct ScenarioConfig {
  Scenario scenario = Scenario::S1;
  int a = 0;
  ExternalX1 x1_external = ExternalX1::Normal0;
  long long n = 200;
  long long n1 = 2000;
  int replications = 2000;
  std::uint64_t seed = 1;
  std::vector<Variant> menu;  // empty: the scenario's default menu
  NormalReading normal_reading = NormalReading::StdDev;
  GammaReading gamma_reading = GammaReading::Shape4;
  double gamma_shift = -2.0;  // added to the gamma draw

  double exclusion_threshold = 5.0;
  bool plugin = false;     // plug-in se, Sigma_EB and the lambda2 test per replication
  bool bootstrap = false;  // two-level bootstrap se per replication (balancing variants)
  int B1 = 200;
  int B2 = 200;
  int threads = 0;  // <= 0: default_threads()
  bool keep_raw = false;

  double x1_sd() const;
  double x1_external_mean() const;  // for the normal laws
};

std::vector<Variant> default_menu(Scenario s);

// Calibration basis (x1, x1^2, x2) over covariates (x1, x2).
CalibrationBasis scenario_basis();

// True E(Y) in the internal population.
double true_mean(const ScenarioConfig& config);

InternalDataset generate_internal(const ScenarioConfig& config, Engine& rng);

// Draws n1 external rows, then keeps only their summary: basis means, the
// scenario's regression coefficients (identity for S1, logit for S2), the
// outcome mean and the influence-based covariance of (mu_x, eta_ex).
ExternalSummary generate_external_summary(const ScenarioConfig& config, Engine& rng);

// Raw external draws, before summarization.
InternalDataset generate_external_rows(const ScenarioConfig& config, Engine& rng);
ExternalSummary summarize_external(const InternalDataset& rows, const CalibrationBasis& basis, Link link,
                                   bool with_coefficients);

struct ReplicationRecord {
  int replication = 0;
  Variant variant = Variant::EB;
  double theta = 0.0;
  bool excluded = false;
  bool failed = false;  // estimation error other than infeasibility
  std::optional<double> se_plugin;
  std::optional<double> sigma_eb;
  std::optional<double> se_bootstrap;
  std::optional<bool> covered;
  std::optional<double> lambda2_pvalue;  // H coordinate
  double sample_var_y = 0.0;
};

struct VariantSummary {
  Variant variant = Variant::EB;
  int replications = 0;
  int used = 0;
  int excluded = 0;
  int failed = 0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mse = 0.0;
  double mc_se = 0.0;  // sd / sqrt(used)
  double exclusion_rate = 0.0;
  std::optional<double> coverage;
  std::optional<double> mean_se;
  std::optional<double> lambda2_rejection_rate;  // nominal 5%
  std::optional<double> plugin_below_var_rate;   // share with Sigma_EB <= var(Y)
};

struct SimulationResult {
  ScenarioConfig config;
  double true_value = 0.0;
  std::vector<VariantSummary> summaries;
  std::vector<ReplicationRecord> raw;  // when keep_raw

  const VariantSummary& summary(Variant v) const;
};

SimulationResult run_study(const ScenarioConfig& config);

// Monte Carlo estimate of E(Y) for the oracle subcommand.
struct OracleResult {
  double mean = 0.0;
  double mc_se = 0.0;
  long long draws = 0;
  std::uint64_t seed = 0;
};
OracleResult oracle_mean(const ScenarioConfig& config, long long draws, std::uint64_t seed);

// Mean and variance of the external X1 under the configured law.
struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};
Moments external_x1_moments(const ScenarioConfig& config);

// Frozen Scenario 2 oracle constants (10^7 draws each); regenerate with
// `entbal oracle`.
inline constexpr double kScenario2TrueMean = 0.28457;
inline constexpr double kScenario2TrueMeanVarianceReading = 0.28638;

}  // namespace entbal
