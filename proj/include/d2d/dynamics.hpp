#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "d2d/network.hpp"
#include "d2d/rng.hpp"

namespace d2d {

// Behavioral parameters of one commuter: smoothing weight eta in (0,1),
// sensitivity theta > 0, non-travel probability rho in [0,1).
struct BehaviorParams {
  double eta = 0.5;
  double theta = 1.0;
  double rho = 0.0;
};

struct Hyperparams {
  double mu_eta = 0.0, sigma_eta = 1.0;
  double mu_theta = 0.0, sigma_theta = 1.0;
  double mu_rho = 0.0, sigma_rho = 1.0;
};

// Per-commuter perceived route values on a given day (rows = commuters).
struct ValuationState {
  Eigen::MatrixXd values;
  int day = 1;
};

// Choice 0 is the non-travel alternative; 1..M are routes.
struct ChoiceTrajectory {
  std::string od_id;
  Eigen::MatrixXi choices;  // commuters x days
  int num_routes = 0;

  int num_commuters() const { return int(choices.rows()); }
  int horizon() const { return int(choices.cols()); }
  void validate() const;
};

// Daily tallies over alternatives 0..M; every row sums to the population size.
struct CountSeries {
  std::string od_id;
  Eigen::MatrixXi counts;  // days x (routes + 1)
  int population = 0;

  int horizon() const { return int(counts.rows()); }
  int num_routes() const { return int(counts.cols()) - 1; }
  void validate() const;
};

struct SmithParams {
  double tau = 0.1;
  double epsilon = 0.05;
};

// One exponential-smoothing step applied to every commuter row.
ValuationState update_values(const ValuationState& state, double eta,
                             const Eigen::VectorXd& realized_costs);

// Probabilities over alternatives 0..M given current values: non-travel gets
// rho exactly, routes share (1-rho) by a softmax of -theta * value.
Eigen::VectorXd choice_probabilities(const Eigen::VectorXd& values, double theta, double rho);

// All commuters share one valuation state; values update from realized costs
// whether or not a commuter traveled.
ChoiceTrajectory simulate_pooled(const BehaviorParams& params, const Eigen::VectorXd& initial_values,
                                 const CostSequence& costs, int num_commuters, std::uint64_t seed);

struct HierDraw {
  Eigen::VectorXd eta, theta, rho;  // one entry per commuter
};

// Draws per-commuter parameters (logit-normal eta and rho, log-normal theta)
// and simulates each commuter's own valuation recursion.
std::pair<HierDraw, ChoiceTrajectory> simulate_hierarchical(const Hyperparams& hyper,
                                                            const Eigen::VectorXd& initial_values,
                                                            const CostSequence& costs, int num_commuters,
                                                            std::uint64_t seed);

ChoiceTrajectory simulate_from_individual_params(const HierDraw& params,
                                                 const Eigen::VectorXd& initial_values,
                                                 const CostSequence& costs, std::uint64_t seed);

// Aggregate deterministic dynamics: smooth perceived costs, then split a
// fixed demand by softmax.  Returns (updated perceived costs, route flows).
std::pair<Eigen::VectorXd, Eigen::VectorXd> horowitz_step(const Eigen::VectorXd& perceived,
                                                          const Eigen::VectorXd& realized_costs,
                                                          double eta, double theta, double demand);

// Route-switching probability matrix given yesterday's costs: row i holds the
// distribution of today's route for a commuter who rode route i.
Eigen::MatrixXd smith_move_matrix(const Eigen::VectorXd& previous_costs,
                                  const SmithParams& params);

// Pairwise-swap dynamics: each commuter on route i moves to route j with
// probability tau * (c_i - c_j) when j was strictly cheaper yesterday, and
// with probability epsilon otherwise.  Choices are 1-based routes.
Eigen::VectorXi smith_step(const Eigen::VectorXi& previous_choices,
                           const Eigen::VectorXd& previous_costs, const SmithParams& params,
                           RngStream& rng);

// Full swap-dynamics trajectory; day 1 assigns routes uniformly at random.
ChoiceTrajectory simulate_smith(const SmithParams& params, const CostSequence& costs,
                                int num_commuters, std::uint64_t seed);

struct BackgroundConfig {
  int days = 50;
  int warmup = 20;
  double noise_sd = 1.0;      // day-to-day perception noise on path valuations
  double eta = 0.5;           // background smoothing weight
  double theta = 0.1;         // background sensitivity (per minute)
  int study_od = -1;          // -1: use the network's last OD pair
  BprParams bpr;
};

// Runs aggregate day-to-day dynamics for the background OD pairs and records
// the study pair's realized path costs after warmup.  Study demand does not
// contribute to link flows, so study costs are exogenous to study choices.
CostSequence simulate_background(const Network& net, const BackgroundConfig& config,
                                 std::uint64_t seed);

CountSeries anonymize(const ChoiceTrajectory& trajectory);

}  // namespace d2d
