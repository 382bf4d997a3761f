#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "d2d/model.hpp"

namespace d2d {

enum class Regime { pooled_complete, pooled_counts, hier_complete, hier_counts };
enum class InitValues { zeros, free_flow, endogenous_delta };

// One origin-destination pair's observations.  Complete regimes read
// trajectory, anonymized regimes read counts; costs are always required.
// v1_base sets the day-1 valuations for the free_flow mode (empty = zeros).
struct DataBlock {
  CostSequence costs;
  std::optional<ChoiceTrajectory> trajectory;
  std::optional<CountSeries> counts;
  Eigen::VectorXd v1_base;
};

struct PosteriorOptions {
  Regime regime = Regime::pooled_complete;
  InitValues init_values = InitValues::zeros;
  bool sample_rho = true;   // pooled only; false pins rho at fixed_rho
  double fixed_rho = 0.0;
  bool centered = false;    // hierarchical only
};

// Log posterior density over unconstrained coordinates with analytic
// gradient.  Evaluations are const and safe to call from several threads.
class Posterior {
 public:
  virtual ~Posterior() = default;
  virtual int dim() const = 0;
  virtual const ParamLayout& unconstrained_layout() const = 0;
  // Returns -inf (with zero gradient) outside the numerically representable
  // region instead of propagating NaNs into the sampler.
  virtual double value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const = 0;
  virtual Eigen::VectorXd to_constrained(const Eigen::VectorXd& u) const = 0;
  virtual const std::vector<std::string>& constrained_names() const = 0;

  double value(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g(dim());
    return value_and_gradient(u, g);
  }
};

// Pooled regimes accept several blocks sharing (eta, theta, rho) with one
// delta block per OD pair; hierarchical regimes require exactly one block.
std::unique_ptr<Posterior> make_posterior(std::vector<DataBlock> blocks, const PriorSpec& prior,
                                          const PosteriorOptions& options);

double log_posterior(const Eigen::VectorXd& unconstrained, const std::vector<DataBlock>& blocks,
                     const PriorSpec& prior, const PosteriorOptions& options);

Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& unconstrained,
                                   const std::vector<DataBlock>& blocks, const PriorSpec& prior,
                                   const PosteriorOptions& options);

}  // namespace d2d
