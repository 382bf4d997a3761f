#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/network.hpp"

namespace d2d {

struct HdiResult {
  double lo = 0.0;
  double hi = 0.0;
  // Number of order statistics inside the window: floor(mass * S) + 1.
  int contained_draws = 0;
};

struct RopeResult {
  double below = 0.0;
  double inside = 0.0;
  double above = 0.0;
  std::string verdict;  // "equivalent", "rejected-below", "rejected-above", "undecided"
};

struct PredictiveSummary {
  Eigen::MatrixXd mean;  // days x alternatives (column 0 = non-travel)
  Eigen::MatrixXd lo50, hi50, lo95, hi95;
  int replications = 0;
  int draws_used = 0;
};

struct ExtrapolationResult {
  Eigen::MatrixXd mean;  // future days x alternatives (column 0 = non-travel)
  Eigen::MatrixXd lo50, hi50, lo95, hi95;
};

double posterior_mean(const Eigen::VectorXd& draws);

// Narrowest window of floor(mass*S)+1 consecutive order statistics; ties on
// width resolve to the smallest start index.
HdiResult hdi(const Eigen::VectorXd& draws, double mass);

// Posterior mass below / inside / above a closed interval, with a verdict at
// the 0.95 threshold (strict outside mass on a single side rejects).
RopeResult rope_test(const Eigen::VectorXd& draws, double lo, double hi);

// Draws of logit(eta_a) - logit(eta_b).  Paired by draw index when the two
// vectors have equal length; otherwise resampled with the given seed.
Eigen::VectorXd logit_contrast(const Eigen::VectorXd& eta_a, const Eigen::VectorXd& eta_b,
                               std::uint64_t seed = 0);

// Replays observed days: for each retained posterior draw, simulates count
// replications and summarizes per day/alternative central intervals.
// pooled_draws columns: eta, theta, rho, then any delta offsets.
PredictiveSummary posterior_predictive(const Eigen::MatrixXd& pooled_draws,
                                       const CostSequence& costs, int population,
                                       int replications = 500, std::uint64_t seed = 0,
                                       int max_draws = 200);

// Continues each draw's valuation recursion through the training days, then
// reports choice-probability paths over the future cost sequence.
ExtrapolationResult extrapolate(const Eigen::MatrixXd& pooled_draws, const CostSequence& train,
                                const CostSequence& future);

// Mean absolute error of extrapolated mean probabilities against a reference
// probability path (same day x alternative shape).
double extrapolation_mae(const ExtrapolationResult& result, const Eigen::MatrixXd& truth);

struct PopulationDensity {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;
};

// Posterior-averaged population densities from hyperparameter draws
// (columns mu_eta, sigma_eta, mu_theta, sigma_theta, mu_rho, sigma_rho):
// logit-normal for eta and rho on (0,1) grids, log-normal for theta.
PopulationDensity population_distribution_eta(const Eigen::MatrixXd& hyper_draws,
                                              const Eigen::VectorXd& grid);
PopulationDensity population_distribution_theta(const Eigen::MatrixXd& hyper_draws,
                                                const Eigen::VectorXd& grid);
PopulationDensity population_distribution_rho(const Eigen::MatrixXd& hyper_draws,
                                              const Eigen::VectorXd& grid);

}  // namespace d2d
