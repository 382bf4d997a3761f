#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "d2d/sampler.hpp"

namespace d2d {

// Potential scale reduction over half-split chains.  Returns +inf when the
// within-half variance is zero but the halves disagree; throws when every
// value is identical (no variance to compare at all).
double split_rhat(const std::vector<Eigen::VectorXd>& chains);

// Effective sample size from combined-chain autocovariances with Geyer's
// initial monotone positive-pair truncation: ess = m*n / tau.  Throws on
// constant input.
double ess(const std::vector<Eigen::VectorXd>& chains);

// Fraction of draws strictly below the truth, counting ties as half.
double rank_of_truth(const Eigen::VectorXd& draws, double truth);

struct Diagnostics {
  std::vector<std::string> names;
  Eigen::VectorXd rhat;
  Eigen::VectorXd ess;
  int divergences = 0;
  double max_rhat = 0.0;
  double min_ess = 0.0;
};

// Per-parameter diagnostics on the constrained draws; split-half chains feed
// both statistics.  Constant columns get NaN instead of an exception.
Diagnostics compute_diagnostics(const PosteriorDraws& draws);

// Split each chain's draws for one parameter into halves.
std::vector<Eigen::VectorXd> split_chain_halves(const PosteriorDraws& draws, int column);

}  // namespace d2d
