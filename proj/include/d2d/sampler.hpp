#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "d2d/posterior.hpp"

namespace d2d {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int draws = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 0;
  double init_jitter = 1.0;

  void validate() const;
};

struct PosteriorDraws {
  Eigen::MatrixXd samples;        // (chains*draws) x d, constrained scale
  Eigen::MatrixXd unconstrained;  // same shape, sampler coordinates
  std::vector<std::string> names;
  std::vector<int> chain_id;      // per row
  std::vector<char> divergent;    // per row
  std::vector<double> step_size;  // per chain
  Eigen::MatrixXd inv_mass_diag;  // chains x d
  int chains = 0;
  int draws_per_chain = 0;

  int total_draws() const { return int(samples.rows()); }
  Eigen::VectorXd column(int j) const { return samples.col(j); }
  int column_index(const std::string& name) const;
  int total_divergences() const;
};

// No-U-turn sampler with multinomial state selection, dual-averaged step
// size, and a diagonal mass matrix adapted over expanding warmup windows.
// Chains use disjoint sub-streams of the seed and run in listed order, so
// identical configs reproduce identical draws.
PosteriorDraws nuts_sample(const Posterior& target, const SamplerConfig& config);

}  // namespace d2d
