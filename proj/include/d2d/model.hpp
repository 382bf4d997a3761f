#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/network.hpp"

namespace d2d {

// Shared behavioral parameters plus optional initial-valuation offsets
// delta(j) = V1(j) - V1(1) for routes 2..M (route 1 pinned at zero).
struct PooledParams {
  double eta = 0.5;
  double theta = 1.0;
  double rho = 0.0;
  std::optional<Eigen::VectorXd> delta;
};

// Population hyperparameters plus standardized individual offsets
// (columns: eta, theta, rho).  logit(eta^n) = mu_eta + sigma_eta * z(n,0), etc.
struct HierParams {
  Hyperparams hyper;
  Eigen::MatrixXd z;

  int num_commuters() const { return int(z.rows()); }
  HierDraw individual() const;
};

struct NormalPrior {
  double mu = 0.0;
  double sigma = 1.0;
};

struct HalfNormalPrior {
  double sigma = 1.0;
};

struct PriorSpec {
  // Pooled-model priors on transformed parameters.
  NormalPrior eta_logit{0.0, 1.5};
  NormalPrior theta_log{0.0, 1.0};
  NormalPrior rho_logit{-2.0, 1.0};
  NormalPrior delta{0.0, 5.0};
  // Hierarchical hyperpriors.
  NormalPrior mu_eta{-1.5, 0.5};
  NormalPrior mu_theta{0.0, 0.5};
  NormalPrior mu_rho{-2.0, 1.0};
  HalfNormalPrior sigma_eta{0.5};
  HalfNormalPrior sigma_theta{0.5};
  HalfNormalPrior sigma_rho{1.0};
};

// Initial route valuations implied by the parameters: delta offsets when
// present, otherwise the supplied base (free-flow costs say), otherwise zeros.
Eigen::VectorXd initial_values_from(const PooledParams& params, int num_routes,
                                    const Eigen::VectorXd* base = nullptr);

// Log-likelihood of per-commuter choices under shared parameters; every
// commuter faces the same valuation recursion.
double loglik_pooled(const PooledParams& params, const ChoiceTrajectory& traj,
                     const CostSequence& costs, const Eigen::VectorXd* initial_values = nullptr);

// Multinomial likelihood of daily counts under shared parameters; equals the
// trajectory likelihood plus a parameter-free combinatorial constant.
double loglik_pooled_counts(const PooledParams& params, const CountSeries& counts,
                            const CostSequence& costs,
                            const Eigen::VectorXd* initial_values = nullptr);

// Log of the multinomial coefficient sum_t log( N! / prod_i o_t(i)! ).
double multinomial_constant(const CountSeries& counts);

double loglik_hier(const HierDraw& params, const ChoiceTrajectory& traj, const CostSequence& costs,
                   const Eigen::VectorXd* initial_values = nullptr);

// Counts likelihood under heterogeneous commuters, approximating the sum of
// independent categoricals by a multinomial at the mean daily probability.
double loglik_hier_counts_approx(const HierDraw& params, const CountSeries& counts,
                                 const CostSequence& costs,
                                 const Eigen::VectorXd* initial_values = nullptr);

// Moments of the sum of independent categorical indicators with heterogeneous
// cell probabilities: mean sum_n p^n, covariance sum_n (diag(p^n) - p^n p^n').
std::pair<Eigen::VectorXd, Eigen::MatrixXd> pmd_moments(const std::vector<Eigen::VectorXd>& probs);

// Exact pmf of that sum by dynamic programming over commuters; practical only
// for tiny populations, so it refuses more than 10.
double pmd_exact_pmf(const std::vector<Eigen::VectorXd>& probs, const Eigen::VectorXi& outcome);

double log_prior_pooled(const PooledParams& params, const PriorSpec& prior, bool rho_sampled = true);
double log_prior_hier(const HierParams& params, const PriorSpec& prior, bool centered = false);

struct ParamLayout {
  std::vector<std::string> names;
  int dim() const { return int(names.size()); }
};

struct UnconstrainedVector {
  Eigen::VectorXd values;
  ParamLayout layout;
  // log |d constrain / d values| at this point.
  double log_jacobian = 0.0;
};

// Bijection between the sampler's unconstrained coordinates and PooledParams:
// eta and rho through the logistic map, theta through exp, delta untouched.
struct PooledTransform {
  int num_delta = 0;
  bool sample_rho = true;
  double fixed_rho = 0.0;

  ParamLayout layout() const;
  int dim() const { return (sample_rho ? 3 : 2) + num_delta; }
  PooledParams constrain(const Eigen::VectorXd& u, double* log_jacobian = nullptr) const;
  UnconstrainedVector unconstrain(const PooledParams& params) const;
};

// Hyper block (mu_eta, sigma_eta, mu_theta, sigma_theta, mu_rho, sigma_rho with
// log-scale sigmas) followed by per-commuter blocks.  Non-centered coordinates
// are the standardized offsets z; centered coordinates are the transformed
// individual parameters themselves (logit(eta^n), log(theta^n), logit(rho^n)).
struct HierTransform {
  int num_commuters = 0;
  bool centered = false;

  ParamLayout layout() const;
  int dim() const { return 6 + 3 * num_commuters; }
  HierParams constrain(const Eigen::VectorXd& u, double* log_jacobian = nullptr) const;
  UnconstrainedVector unconstrain(const HierParams& params) const;
};

}  // namespace d2d
