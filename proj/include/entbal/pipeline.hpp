#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entbal/balance.hpp"
#include "entbal/data.hpp"
#include "entbal/entropy.hpp"
#include "entbal/regress.hpp"

namespace entbal {

enum class Variant { EB, EBw, EBwx, EBL, EBLw, SM, WSM };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);
bool is_balancing(Variant v);
bool uses_weighted_regression(Variant v);

// One calibration basis function of the covariates.
struct BasisTerm {
  enum class Kind { Raw, Square, Product };
  Kind kind = Kind::Raw;
  Eigen::Index first = 0;
  Eigen::Index second = 0;
  std::string name;
};

// Stage-one basis: the constant plus the listed terms. External moments
// correspond positionally to terms().
class CalibrationBasis {
 public:
  CalibrationBasis() = default;
  explicit CalibrationBasis(std::vector<BasisTerm> terms) : terms_(std::move(terms)) {}

  // Comma-separated "x1,x1^2,x2,x1*x2" over the given covariate names.
  static CalibrationBasis parse(const std::string& spec, const std::vector<std::string>& covariate_names);
  static CalibrationBasis from_names(const std::vector<std::string>& names,
                                     const std::vector<std::string>& covariate_names);
  // Every raw covariate, in column order.
  static CalibrationBasis raw(const std::vector<std::string>& covariate_names);

  const std::vector<BasisTerm>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  std::vector<std::string> names() const;

  // n x (size() + 1) with a leading column of ones.
  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& covariates) const;
  // Sample means of the terms (without the constant).
  Eigen::VectorXd sample_means(const Eigen::MatrixXd& covariates) const;
  std::optional<std::size_t> raw_position(Eigen::Index covariate) const;

 private:
  std::vector<BasisTerm> terms_;
};

// Estimating function U(z; theta) for a scalar parameter.
struct MomentFunction {
  std::string name;
  std::function<double(const Eigen::VectorXd& x, double y, double theta)> evaluate;
  std::function<double(const Eigen::VectorXd& x, double y, double theta)> jacobian;

  // U(z; theta) = theta - y
  static MomentFunction mean();
};

// Solves sum_i w_i U(z_i; theta) = 0.
double solve_moment(const MomentFunction& moment, const InternalDataset& data, const Eigen::VectorXd& weights);

enum class EtaSource { Coefficients, OutcomeMean };
enum class Fallback { SampleMean, None };

struct EstimatorOptions {
  Variant variant = Variant::EB;
  EntropySpec entropy1 = EntropySpec::exponential();
  EntropySpec entropy2 = EntropySpec::exponential();
  double exclusion_threshold = 5.0;
  Fallback fallback = Fallback::SampleMean;
  // Covariate columns for the extra stage-two constraints of EBwx; all when unset.
  std::optional<std::vector<Eigen::Index>> extra_calibration;
  SolverOptions solver;
  MomentFunction moment = MomentFunction::mean();
};

// External information reduced to what the estimator consumes.
struct ResolvedSummary {
  Eigen::VectorXd mu_x;  // basis means, without the constant
  double eta_ex = 0.0;
  EtaSource source = EtaSource::Coefficients;
  Link link = Link::Identity;
  long long n1 = 0;
  std::optional<double> external_mean;  // for WSM
};

// Raw-coordinate means (1, mu_x[raw positions]) aligned with the regression design.
Eigen::VectorXd regression_means(const Eigen::VectorXd& mu_x, const CalibrationBasis& basis, Eigen::Index d);

// eta_ex = beta_ex' (1, mu_x) for coefficient summaries, mu_y for outcome-mean ones.
double stage2_target(const ExternalSummary& summary, const Eigen::VectorXd& regression_means,
                     EtaSource source);

EtaSource eta_source_for(Variant v, const ExternalSummary& summary);
ResolvedSummary resolve_summary(const ExternalSummary& summary, const CalibrationBasis& basis, Eigen::Index d,
                                Variant v);

BalanceSolution stage1_weights(const InternalDataset& data, const CalibrationBasis& basis,
                               const Eigen::VectorXd& mu_x, const EntropySpec& entropy1,
                               const SolverOptions& opts = {});

// Rows (1, w1_i * beta' x~_i) with x~ the regression design.
Eigen::MatrixXd build_h(const Eigen::MatrixXd& design, const RegressionFit& fit, const Eigen::VectorXd& w1);

struct ExtraCalibration {
  Eigen::MatrixXd columns;  // n x e
  Eigen::VectorXd targets;  // e
};

BalanceSolution stage2_weights(const Eigen::MatrixXd& h, double eta_ex, const EntropySpec& entropy2,
                               const std::optional<ExtraCalibration>& extra = std::nullopt,
                               const SolverOptions& opts = {});

// Everything computed along the way; inference works from this.
struct FittedEstimate {
  Variant variant = Variant::EB;
  double theta = 0.0;           // reported value (sample mean when excluded)
  double theta_balanced = 0.0;  // solution of the weighted equation, when balanced
  double sample_mean = 0.0;
  bool excluded = false;
  std::string exclusion_reason;
  bool balanced = false;  // stage one and two both solved

  EntropySpec entropy1 = EntropySpec::exponential();
  EntropySpec entropy2 = EntropySpec::exponential();
  ResolvedSummary summary;
  Eigen::MatrixXd basis_matrix;  // n x q
  Eigen::VectorXd mu_target;     // (1, mu_x)
  Eigen::MatrixXd design;        // n x k
  RegressionFit regression;
  bool weighted_regression = false;
  BalanceSolution stage1;
  Eigen::MatrixXd h;             // n x m
  Eigen::VectorXd h_target;      // (1, eta_ex, extra targets)
  std::vector<Eigen::Index> extra_columns;
  BalanceSolution stage2;
};

FittedEstimate fit_estimator(const InternalDataset& data, const CalibrationBasis& basis,
                             const ResolvedSummary& summary, const EstimatorOptions& opts);

struct WeightSummary {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double ess = 0.0;  // (sum w)^2 / sum w^2

  bool operator==(const WeightSummary&) const = default;
};

WeightSummary summarize_weights(const Eigen::VectorXd& w);

struct Lambda2TestResult {
  std::vector<double> estimate;
  std::vector<double> null_value;
  std::vector<double> se;
  std::vector<double> stat;
  std::vector<double> pvalue;

  bool operator==(const Lambda2TestResult&) const = default;
};

struct EstimateReport {
  double theta_hat = 0.0;
  Variant variant = Variant::EB;
  std::vector<double> lambda1;
  std::vector<double> lambda2;
  std::optional<WeightSummary> w1_summary;
  std::optional<WeightSummary> w2_summary;
  std::optional<double> se_plugin;
  std::optional<double> se_bootstrap;
  std::string se_source = "none";
  std::optional<std::pair<double, double>> ci95;
  std::optional<Lambda2TestResult> lambda2_test;
  bool excluded = false;
  std::string exclusion_reason;
  long long n = 0;
  long long n1 = 0;
  double kappa = 0.0;
  bool kappa_term_omitted = false;
  std::optional<int> bootstrap_failures;
  std::vector<std::string> warnings;

  bool operator==(const EstimateReport&) const = default;
};

// Point estimate only; inference fills in the standard errors.
EstimateReport make_report(const FittedEstimate& fit, long long n);

EstimateReport estimate(const InternalDataset& data, const CalibrationBasis& basis, const ExternalSummary& summary,
                        const EstimatorOptions& opts);

}  // namespace entbal
