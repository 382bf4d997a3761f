#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "d2d/inference.hpp"
#include "d2d/model.hpp"
#include "d2d/posterior.hpp"
#include "d2d/sampler.hpp"

namespace d2d {

struct GridCell {
  int num_commuters = 10;
  int num_days = 30;
};

// Shared setup for the replication studies.  Every cell reads its costs from
// the leading days of `costs`; truths are drawn from `priors` unless a
// scenario overrides the generating distributions.
struct RecoveryConfig {
  std::vector<GridCell> cells;
  int replications = 50;
  CostSequence costs;
  PriorSpec priors;
  SamplerConfig sampler;
  Regime regime = Regime::pooled_complete;
  std::uint64_t seed = 0;
  int workers = 0;  // 0: one per hardware thread

  void validate() const;
};

struct MetricsRow {
  int num_commuters = 0;
  int num_days = 0;
  std::string param;
  double bias = 0.0;
  double abs_bias = 0.0;  // mean |bias| across replications; not serialized
  double coverage = 0.0;
  double width = 0.0;
  int reps = 0;      // successful replications entering the averages
  int failures = 0;  // replications lost to sampler errors
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  // Throws std::out_of_range when the (N, T, param) cell is absent.
  const MetricsRow& at(int num_commuters, int num_days, const std::string& param) const;
};

// Header `N,T,param,bias,coverage,width,reps,failures`, one row per cell and
// parameter in table order.
void store_metrics_csv(const std::string& path, const MetricsTable& table);

// Per cell and replication: draw a truth triple, simulate a shared-parameter
// population, fit the pooled model, and record bias / 95% HDI coverage /
// interval width per parameter.  A cell with more than 10% failed
// replications throws.
MetricsTable run_pooled_recovery(const RecoveryConfig& config);

// Hierarchical analogue over the six hyperparameters; truths come from the
// hyperprior block of `priors`.
MetricsTable run_hier_recovery(const RecoveryConfig& config);

enum class MisspecScenario { shifted_prior, alt_family, heterogeneous_pooled, smith };

MisspecScenario parse_scenario(const std::string& name);
std::string scenario_name(MisspecScenario scenario);

// Extrapolation accuracy of one grid cell under a behavioral misspecification:
// fit on the first num_days, predict the next test_days, score mean absolute
// error against the scenario's exact choice-probability path.
struct ExtrapolationCell {
  int num_commuters = 0;
  int num_days = 0;
  int test_days = 0;
  Eigen::VectorXd mae;  // successful replications, replication order
  double mean_mae = 0.0;
  int failures = 0;
};

struct MisspecReport {
  MisspecScenario scenario = MisspecScenario::shifted_prior;
  // shifted_prior / alt_family: recovery metrics under a wrong fitting prior.
  MetricsTable metrics;
  // heterogeneous_pooled / smith: extrapolation errors of a pooled fit.
  std::vector<ExtrapolationCell> extrapolation;

  // Metrics view usable by the common CSV writer; behavioral scenarios map a
  // cell to one `mae` row carrying mean_mae in the bias column.
  MetricsTable as_metrics() const;
};

// Data generated off-model, fit with the default pooled machinery.  Behavioral
// scenarios pin rho = 0 and need costs covering num_days + test_days.
MisspecReport run_misspecification(MisspecScenario scenario, const RecoveryConfig& config,
                                   int test_days = 20);

// One heterogeneous population fit twice: on the full trajectory and on its
// daily counts.  Spread fields are standard deviations across commuters of
// the per-individual posterior-mean eta.
struct AnonymizedComparison {
  Hyperparams truth;
  HierDraw individuals;
  std::vector<std::string> hyper_names;
  Eigen::VectorXd complete_mean, complete_lo, complete_hi;
  Eigen::VectorXd anonymized_mean, anonymized_lo, anonymized_hi;
  double complete_eta_spread = 0.0;
  double anonymized_eta_spread = 0.0;
  int complete_divergences = 0;
  int anonymized_divergences = 0;
};

// Uses the first grid cell; the trajectory fit and the count fit share the
// simulated data.
AnonymizedComparison run_anonymized_comparison(const RecoveryConfig& config,
                                               const Hyperparams& truth);

}  // namespace d2d
