#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "entbal/pipeline.hpp"

namespace entbal {

// Stacked estimating equations for xi = (beta, lambda1, lambda2, theta),
// evaluated at the fitted values. Jacobian blocks follow the lower
// triangular layout
//
//        beta  lambda1 lambda2 theta
//   l0 [ J00   J01                  ]    J01 != 0 only for weighted fits
//   l1 [       J11                  ]
//   l2 [ J20   J21     J22          ]
//   l3 [ J30   J31     J32     J33  ]    J30, J31 vanish when lambda2 is at its null
//
// and the influence of theta_hat is
//   tau3 U - tau2'(w2 H~ - t~) - tau1'(w1 b - mu~) - tau0' phi
// with
//   tau3  = 1 / J33
//   tau2' = tau3 J32 J22^{-1}
//   tau0' = -(tau2' J20 - tau3 J30) J00^{-1}
//   tau1' = -(tau2' J21 - tau3 J31 + tau0' J01) J11^{-1}.
struct SandwichComponents {
  Eigen::Index k = 0, q = 0, m = 0;  // block sizes of beta, lambda1, lambda2

  Eigen::MatrixXd J00, J01, J11, J20, J21, J22;
  Eigen::RowVectorXd J30, J31, J32;
  double J33 = 1.0;

  Eigen::VectorXd tau0, tau1, tau2;
  double tau3 = 1.0;

  Eigen::MatrixXd psi;    // n x (k + q + m + 1): per-row estimating functions
  Eigen::MatrixXd I_hat;  // empirical covariance of psi rows
  // Places the external noise (W1 on mu_x, W2 on eta_ex) into the stacked
  // equations; columns follow sigma_w.
  Eigen::MatrixXd w_embedding;

  double kappa = 0.0;
  std::optional<Eigen::MatrixXd> sigma_w;

  Eigen::Index dim() const { return k + q + m + 1; }
  Eigen::MatrixXd jacobian() const;
};

// Throws SingularJacobianBlock when a diagonal block has condition number above 1e12,
// InvalidArgument when the fit has no balancing stages.
SandwichComponents sandwich_components(const FittedEstimate& fit, const InternalDataset& data,
                                       const EstimatorOptions& opts, double kappa,
                                       const std::optional<Eigen::MatrixXd>& sigma_w);

// Per-row influence of theta_hat via the tau recursions.
Eigen::VectorXd theta_influence_tau(const SandwichComponents& c);
// Per-row influence of theta_hat via e_last' J^{-1} psi_i with a dense inverse.
Eigen::VectorXd theta_influence_dense(const SandwichComponents& c);

struct PluginVariance {
  double sigma_eb = 0.0;   // asymptotic variance of sqrt(n)(theta_hat - theta)
  double se = 0.0;         // sqrt(sigma_eb / n)
  double kappa_term = 0.0;
  bool kappa_term_omitted = false;
};

// kappa_negligible: below this kappa a missing Sigma_W is not flagged.
PluginVariance plugin_variance(const SandwichComponents& c, double kappa_negligible = 0.01);

// Convenience: SM / WSM / excluded fits get the internal-only form.
PluginVariance plugin_variance(const FittedEstimate& fit, const InternalDataset& data,
                               const EstimatorOptions& opts, const std::optional<Eigen::MatrixXd>& sigma_w,
                               double kappa_negligible = 0.01);

// Wald test of lambda2 against (rho2^{-1}(1), 0, ...).
Lambda2TestResult lambda2_test(const SandwichComponents& c, const FittedEstimate& fit);

struct BootstrapConfig {
  int B1 = 200;
  int B2 = 200;
  std::uint64_t seed = 1;
  int threads = 1;
  double unreliable_fraction = 0.10;
};

struct BootstrapResult {
  double se = 0.0;
  Eigen::MatrixXd sigma_w_hat;  // per-observation scale: n * Cov of the B1 replicates
  Eigen::VectorXd center;       // (mu_x, eta_ex) the perturbations are centered on
  std::vector<double> thetas;   // successful B2 replicates, in replicate order
  int failures = 0;
  int step1_failures = 0;
  bool unreliable = false;
};

// Resampling variance for balancing variants and SM.
BootstrapResult bootstrap_variance(const InternalDataset& data, const CalibrationBasis& basis,
                                   const ExternalSummary& summary, const EstimatorOptions& opts,
                                   const BootstrapConfig& config);

// Same, from an already-resolved summary (used by the simulation harness).
BootstrapResult bootstrap_variance(const InternalDataset& data, const CalibrationBasis& basis,
                                   const ResolvedSummary& summary, const EstimatorOptions& opts,
                                   const BootstrapConfig& config);

// Point estimate plus plug-in (and optionally bootstrap) inference.
struct InferenceOptions {
  bool plugin = true;
  std::optional<BootstrapConfig> bootstrap;
  bool use_bootstrap_se = false;  // CI from the bootstrap se when both are present
  double kappa_negligible = 0.01;
};

EstimateReport estimate_with_inference(const InternalDataset& data, const CalibrationBasis& basis,
                                       const ExternalSummary& summary, const EstimatorOptions& opts,
                                       const InferenceOptions& inference);

double normal_two_sided_pvalue(double z);
inline constexpr double kZ975 = 1.959963984540054;

}  // namespace entbal
