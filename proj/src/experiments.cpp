#include "d2d/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>
#include <utility>

#include "d2d/math.hpp"
#include "d2d/rng.hpp"

namespace d2d {
namespace {

constexpr std::uint64_t kPooledNamespace = 0x504F4F4Cull;   // "POOL"
constexpr std::uint64_t kHierNamespace = 0x48494552ull;     // "HIER"
constexpr std::uint64_t kMisspecNamespace = 0x4D495353ull;  // "MISS"
constexpr std::uint64_t kAnonNamespace = 0x414E4F4Eull;     // "ANON"

// Shifted generating distributions for the prior-misspecification study.
constexpr double kShiftedEtaMu = -0.85, kShiftedEtaSd = 0.5;
constexpr double kShiftedThetaMu = 1.1, kShiftedThetaSd = 0.6;
constexpr double kShiftedRhoMu = -1.5, kShiftedRhoSd = 0.7;

struct RepMetrics {
  bool ok = false;
  std::string error;
  Eigen::VectorXd bias, width;
  std::vector<char> cover;
  double mae = 0.0;
};

int worker_count(const RecoveryConfig& config, int jobs) {
  int w = config.workers > 0 ? config.workers : int(std::thread::hardware_concurrency());
  if (w < 1) w = 1;
  return std::min(w, std::max(jobs, 1));
}

// Runs fn(0..jobs-1) on a bounded pool.  fn must not throw; failures are
// recorded inside each job's result slot.
template <typename Fn>
void run_jobs(int jobs, int workers, Fn&& fn) {
  std::atomic<int> next{0};
  auto work = [&] {
    for (int j = next.fetch_add(1); j < jobs; j = next.fetch_add(1)) fn(j);
  };
  if (workers <= 1) {
    work();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
}

std::uint64_t rep_stream_id(std::uint64_t ns, int cell_index, int rep) {
  return derive_stream(derive_stream(ns, std::uint64_t(cell_index)), std::uint64_t(rep));
}

// Truths are drawn per replication but shared across grid cells, so contrasts
// between cells (more days, more commuters) are paired comparisons on the
// same parameter draws instead of comparisons across independent draws.  The
// salt keeps the stream clear of any cell index.
std::uint64_t truth_stream_id(std::uint64_t ns, int rep) {
  return derive_stream(derive_stream(ns, 0x5452555448ull), std::uint64_t(rep));
}

std::uint64_t rep_seed(const RecoveryConfig& config, std::uint64_t rep_stream, std::uint64_t leaf) {
  return derive_stream(derive_stream(config.seed, rep_stream), leaf);
}

void summarize_column(const Eigen::VectorXd& col, double truth, double& bias, double& width,
                      char& cover) {
  const HdiResult h = hdi(col, 0.95);
  bias = posterior_mean(col) - truth;
  width = h.hi - h.lo;
  cover = (truth >= h.lo && truth <= h.hi) ? 1 : 0;
}

// Aggregates one cell's replications in replication-index order and appends a
// row per tracked parameter.  More than 10% failures fails the whole run.
void reduce_cell(const RecoveryConfig& config, const GridCell& cell,
                 const std::vector<RepMetrics>& reps, const std::vector<std::string>& params,
                 MetricsTable& out) {
  int failures = 0;
  std::string first_error;
  for (const RepMetrics& r : reps)
    if (!r.ok) {
      ++failures;
      if (first_error.empty()) first_error = r.error;
    }
  if (failures * 10 > config.replications)
    throw std::runtime_error("recovery cell N=" + std::to_string(cell.num_commuters) +
                             " T=" + std::to_string(cell.num_days) + ": " +
                             std::to_string(failures) + "/" +
                             std::to_string(config.replications) +
                             " replications failed; first failure: " + first_error);

  const int ok = config.replications - failures;
  for (int k = 0; k < int(params.size()); ++k) {
    MetricsRow row;
    row.num_commuters = cell.num_commuters;
    row.num_days = cell.num_days;
    row.param = params[std::size_t(k)];
    row.reps = ok;
    row.failures = failures;
    for (const RepMetrics& r : reps) {
      if (!r.ok) continue;
      row.bias += r.bias[k] / ok;
      row.abs_bias += std::abs(r.bias[k]) / ok;
      row.width += r.width[k] / ok;
      row.coverage += r.cover[std::size_t(k)] ? 1.0 / ok : 0.0;
    }
    out.rows.push_back(std::move(row));
  }
}

PooledParams draw_pooled_truth(const PriorSpec& prior, RngStream& rng) {
  PooledParams p;
  p.eta = logistic(prior.eta_logit.mu + prior.eta_logit.sigma * rng.normal());
  p.theta = std::exp(prior.theta_log.mu + prior.theta_log.sigma * rng.normal());
  p.rho = logistic(prior.rho_logit.mu + prior.rho_logit.sigma * rng.normal());
  return p;
}

Hyperparams draw_hyper_truth(const PriorSpec& prior, RngStream& rng) {
  Hyperparams h;
  h.mu_eta = prior.mu_eta.mu + prior.mu_eta.sigma * rng.normal();
  h.sigma_eta = std::abs(prior.sigma_eta.sigma * rng.normal());
  h.mu_theta = prior.mu_theta.mu + prior.mu_theta.sigma * rng.normal();
  h.sigma_theta = std::abs(prior.sigma_theta.sigma * rng.normal());
  h.mu_rho = prior.mu_rho.mu + prior.mu_rho.sigma * rng.normal();
  h.sigma_rho = std::abs(prior.sigma_rho.sigma * rng.normal());
  return h;
}

PosteriorDraws fit_blocks(std::vector<DataBlock> blocks, const PriorSpec& prior,
                          const PosteriorOptions& options, SamplerConfig sampler,
                          std::uint64_t seed) {
  auto post = make_posterior(std::move(blocks), prior, options);
  sampler.seed = seed;
  return nuts_sample(*post, sampler);
}

RepMetrics one_pooled_rep(const RecoveryConfig& config, const GridCell& cell, int cell_index,
                          int rep, std::uint64_t ns,
                          const std::function<PooledParams(RngStream&)>& draw_truth) {
  RepMetrics out;
  try {
    const std::uint64_t stream = rep_stream_id(ns, cell_index, rep);
    RngStream truth_rng(config.seed, truth_stream_id(ns, rep));
    const PooledParams truth = draw_truth(truth_rng);

    const CostSequence costs = slice_days(config.costs, 0, cell.num_days);
    const Eigen::VectorXd init = Eigen::VectorXd::Zero(costs.num_routes());
    ChoiceTrajectory traj =
        simulate_pooled(BehaviorParams{truth.eta, truth.theta, truth.rho}, init, costs,
                        cell.num_commuters, rep_seed(config, stream, 1));

    DataBlock block;
    block.costs = costs;
    PosteriorOptions opt;
    opt.regime = config.regime;
    if (config.regime == Regime::pooled_counts)
      block.counts = anonymize(traj);
    else
      block.trajectory = std::move(traj);

    std::vector<DataBlock> blocks;
    blocks.push_back(std::move(block));
    const PosteriorDraws draws =
        fit_blocks(std::move(blocks), config.priors, opt, config.sampler,
                   rep_seed(config, stream, 2));

    const double truths[3] = {truth.eta, truth.theta, truth.rho};
    const char* names[3] = {"eta", "theta", "rho"};
    out.bias.resize(3);
    out.width.resize(3);
    out.cover.resize(3);
    for (int k = 0; k < 3; ++k)
      summarize_column(draws.column(draws.column_index(names[k])), truths[k], out.bias[k],
                       out.width[k], out.cover[std::size_t(k)]);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = "replication " + std::to_string(rep) + ": " + e.what();
  }
  return out;
}

MetricsTable pooled_sweep(const RecoveryConfig& config, std::uint64_t ns,
                          const std::function<PooledParams(RngStream&)>& draw_truth) {
  config.validate();
  if (config.regime != Regime::pooled_complete && config.regime != Regime::pooled_counts)
    throw std::invalid_argument("pooled recovery: config regime must be pooled");

  const int cells = int(config.cells.size());
  const int reps = config.replications;
  std::vector<RepMetrics> results(std::size_t(cells) * std::size_t(reps));
  run_jobs(cells * reps, worker_count(config, cells * reps), [&](int j) {
    const int ci = j / reps;
    const int r = j % reps;
    results[std::size_t(j)] =
        one_pooled_rep(config, config.cells[std::size_t(ci)], ci, r, ns, draw_truth);
  });

  MetricsTable table;
  const std::vector<std::string> params = {"eta", "theta", "rho"};
  for (int ci = 0; ci < cells; ++ci) {
    const auto first = results.begin() + std::ptrdiff_t(ci) * reps;
    reduce_cell(config, config.cells[std::size_t(ci)],
                std::vector<RepMetrics>(first, first + reps), params, table);
  }
  return table;
}

RepMetrics one_hier_rep(const RecoveryConfig& config, const GridCell& cell, int cell_index,
                        int rep) {
  RepMetrics out;
  try {
    const std::uint64_t stream = rep_stream_id(kHierNamespace, cell_index, rep);
    RngStream truth_rng(config.seed, truth_stream_id(kHierNamespace, rep));
    const Hyperparams truth = draw_hyper_truth(config.priors, truth_rng);

    const CostSequence costs = slice_days(config.costs, 0, cell.num_days);
    const Eigen::VectorXd init = Eigen::VectorXd::Zero(costs.num_routes());
    auto [indiv, traj] = simulate_hierarchical(truth, init, costs, cell.num_commuters,
                                               rep_seed(config, stream, 1));
    (void)indiv;

    DataBlock block;
    block.costs = costs;
    PosteriorOptions opt;
    opt.regime = config.regime;
    if (config.regime == Regime::hier_counts)
      block.counts = anonymize(traj);
    else
      block.trajectory = std::move(traj);

    std::vector<DataBlock> blocks;
    blocks.push_back(std::move(block));
    const PosteriorDraws draws =
        fit_blocks(std::move(blocks), config.priors, opt, config.sampler,
                   rep_seed(config, stream, 2));

    const double truths[6] = {truth.mu_eta, truth.sigma_eta,  truth.mu_theta,
                              truth.sigma_theta, truth.mu_rho, truth.sigma_rho};
    const char* names[6] = {"mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho",
                            "sigma_rho"};
    out.bias.resize(6);
    out.width.resize(6);
    out.cover.resize(6);
    for (int k = 0; k < 6; ++k)
      summarize_column(draws.column(draws.column_index(names[k])), truths[k], out.bias[k],
                       out.width[k], out.cover[std::size_t(k)]);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = "replication " + std::to_string(rep) + ": " + e.what();
  }
  return out;
}

// Deterministic aggregate choice-probability path of a heterogeneous
// population over the test window; day indexing matches the simulators (the
// day-t distribution uses valuations smoothed through day t-1).
Eigen::MatrixXd hetero_truth_probs(const HierDraw& draw, const Eigen::MatrixXd& costs,
                                   int train_days, int test_days) {
  const int m = int(costs.cols());
  const int n = int(draw.eta.size());
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(test_days, m + 1);
  for (int c = 0; c < n; ++c) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
    for (int t = 0; t < train_days + test_days; ++t) {
      if (t >= train_days)
        truth.row(t - train_days) +=
            choice_probabilities(v, draw.theta[c], draw.rho[c]).transpose() / double(n);
      v = (1.0 - draw.eta[c]) * v + draw.eta[c] * costs.row(t).transpose();
    }
  }
  return truth;
}

// Marginal route distribution of the swap dynamics; every commuter shares it
// because the transition matrix depends only on realized costs.
Eigen::MatrixXd smith_truth_probs(const SmithParams& params, const Eigen::MatrixXd& costs,
                                  int train_days, int test_days) {
  const int m = int(costs.cols());
  Eigen::VectorXd q = Eigen::VectorXd::Constant(m, 1.0 / double(m));
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(test_days, m + 1);
  for (int t = 0; t < train_days + test_days; ++t) {
    if (t >= train_days) truth.row(t - train_days).tail(m) = q;
    q = smith_move_matrix(costs.row(t).transpose(), params).transpose() * q;
  }
  return truth;
}

RepMetrics one_extrapolation_rep(const RecoveryConfig& config, const GridCell& cell,
                                 int cell_index, int rep, MisspecScenario scenario,
                                 int test_days) {
  RepMetrics out;
  try {
    const std::uint64_t ns = derive_stream(kMisspecNamespace, std::uint64_t(scenario));
    const std::uint64_t stream = rep_stream_id(ns, cell_index, rep);
    RngStream truth_rng(config.seed, truth_stream_id(ns, rep));

    const CostSequence train = slice_days(config.costs, 0, cell.num_days);
    const CostSequence test = slice_days(config.costs, cell.num_days, test_days);
    const Eigen::MatrixXd full = config.costs.costs.topRows(cell.num_days + test_days);
    const Eigen::VectorXd init = Eigen::VectorXd::Zero(train.num_routes());

    ChoiceTrajectory traj;
    Eigen::MatrixXd truth;
    if (scenario == MisspecScenario::heterogeneous_pooled) {
      const Hyperparams h = draw_hyper_truth(config.priors, truth_rng);
      HierDraw draw;
      const int n = cell.num_commuters;
      draw.eta.resize(n);
      draw.theta.resize(n);
      draw.rho = Eigen::VectorXd::Zero(n);
      for (int c = 0; c < n; ++c) {
        draw.eta[c] = logistic(h.mu_eta + h.sigma_eta * truth_rng.normal());
        draw.theta[c] = std::exp(h.mu_theta + h.sigma_theta * truth_rng.normal());
      }
      traj = simulate_from_individual_params(draw, init, train, rep_seed(config, stream, 1));
      truth = hetero_truth_probs(draw, full, cell.num_days, test_days);
    } else {
      const SmithParams sp;
      traj = simulate_smith(sp, train, cell.num_commuters, rep_seed(config, stream, 1));
      truth = smith_truth_probs(sp, full, cell.num_days, test_days);
    }

    DataBlock block;
    block.costs = train;
    block.trajectory = std::move(traj);
    PosteriorOptions opt;
    opt.regime = Regime::pooled_complete;
    opt.sample_rho = false;
    opt.fixed_rho = 0.0;

    std::vector<DataBlock> blocks;
    blocks.push_back(std::move(block));
    const PosteriorDraws draws =
        fit_blocks(std::move(blocks), config.priors, opt, config.sampler,
                   rep_seed(config, stream, 2));

    Eigen::MatrixXd mat(draws.total_draws(), 3);
    mat.col(0) = draws.column(draws.column_index("eta"));
    mat.col(1) = draws.column(draws.column_index("theta"));
    mat.col(2).setZero();
    out.mae = extrapolation_mae(extrapolate(mat, train, test), truth);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = "replication " + std::to_string(rep) + ": " + e.what();
  }
  return out;
}

}  // namespace

void RecoveryConfig::validate() const {
  if (replications < 1)
    throw std::invalid_argument("recovery config: replications must be positive");
  if (cells.empty()) throw std::invalid_argument("recovery config: need at least one grid cell");
  if (workers < 0) throw std::invalid_argument("recovery config: workers must be nonnegative");
  costs.validate();
  sampler.validate();
  for (const GridCell& cell : cells) {
    if (cell.num_commuters < 1 || cell.num_days < 1)
      throw std::invalid_argument("recovery config: grid cells must be positive");
    if (cell.num_days > costs.horizon())
      throw std::invalid_argument("recovery config: cell horizon exceeds the recorded costs");
  }
}

const MetricsRow& MetricsTable::at(int num_commuters, int num_days,
                                   const std::string& param) const {
  for (const MetricsRow& row : rows)
    if (row.num_commuters == num_commuters && row.num_days == num_days && row.param == param)
      return row;
  throw std::out_of_range("metrics table: no cell N=" + std::to_string(num_commuters) +
                          " T=" + std::to_string(num_days) + " param=" + param);
}

void store_metrics_csv(const std::string& path, const MetricsTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "N,T,param,bias,coverage,width,reps,failures\n";
  char buf[256];
  for (const MetricsRow& row : table.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%s,%.17g,%.17g,%.17g,%d,%d\n", row.num_commuters,
                  row.num_days, row.param.c_str(), row.bias, row.coverage, row.width, row.reps,
                  row.failures);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

MetricsTable run_pooled_recovery(const RecoveryConfig& config) {
  const PriorSpec prior = config.priors;
  return pooled_sweep(config, kPooledNamespace,
                      [prior](RngStream& rng) { return draw_pooled_truth(prior, rng); });
}

MetricsTable run_hier_recovery(const RecoveryConfig& config) {
  config.validate();
  if (config.regime != Regime::hier_complete && config.regime != Regime::hier_counts)
    throw std::invalid_argument("hierarchical recovery: config regime must be hierarchical");

  const int cells = int(config.cells.size());
  const int reps = config.replications;
  std::vector<RepMetrics> results(std::size_t(cells) * std::size_t(reps));
  run_jobs(cells * reps, worker_count(config, cells * reps), [&](int j) {
    const int ci = j / reps;
    const int r = j % reps;
    results[std::size_t(j)] = one_hier_rep(config, config.cells[std::size_t(ci)], ci, r);
  });

  MetricsTable table;
  const std::vector<std::string> params = {"mu_eta",      "sigma_eta", "mu_theta",
                                           "sigma_theta", "mu_rho",    "sigma_rho"};
  for (int ci = 0; ci < cells; ++ci) {
    const auto first = results.begin() + std::ptrdiff_t(ci) * reps;
    reduce_cell(config, config.cells[std::size_t(ci)],
                std::vector<RepMetrics>(first, first + reps), params, table);
  }
  return table;
}

MisspecScenario parse_scenario(const std::string& name) {
  if (name == "shifted-prior") return MisspecScenario::shifted_prior;
  if (name == "alt-family") return MisspecScenario::alt_family;
  if (name == "heterogeneous-pooled") return MisspecScenario::heterogeneous_pooled;
  if (name == "smith") return MisspecScenario::smith;
  throw std::invalid_argument("unknown misspecification scenario: " + name);
}

std::string scenario_name(MisspecScenario scenario) {
  switch (scenario) {
    case MisspecScenario::shifted_prior: return "shifted-prior";
    case MisspecScenario::alt_family: return "alt-family";
    case MisspecScenario::heterogeneous_pooled: return "heterogeneous-pooled";
    case MisspecScenario::smith: return "smith";
  }
  throw std::invalid_argument("unknown misspecification scenario");
}

MetricsTable MisspecReport::as_metrics() const {
  if (scenario == MisspecScenario::shifted_prior || scenario == MisspecScenario::alt_family)
    return metrics;
  MetricsTable table;
  for (const ExtrapolationCell& cell : extrapolation) {
    MetricsRow row;
    row.num_commuters = cell.num_commuters;
    row.num_days = cell.num_days;
    row.param = "mae";
    row.bias = cell.mean_mae;
    row.abs_bias = cell.mean_mae;
    row.reps = int(cell.mae.size());
    row.failures = cell.failures;
    table.rows.push_back(std::move(row));
  }
  return table;
}

MisspecReport run_misspecification(MisspecScenario scenario, const RecoveryConfig& config,
                                   int test_days) {
  MisspecReport report;
  report.scenario = scenario;

  if (scenario == MisspecScenario::shifted_prior) {
    report.metrics = pooled_sweep(
        config, derive_stream(kMisspecNamespace, std::uint64_t(scenario)), [](RngStream& rng) {
          PooledParams p;
          p.eta = logistic(kShiftedEtaMu + kShiftedEtaSd * rng.normal());
          p.theta = std::exp(kShiftedThetaMu + kShiftedThetaSd * rng.normal());
          p.rho = logistic(kShiftedRhoMu + kShiftedRhoSd * rng.normal());
          return p;
        });
    return report;
  }
  if (scenario == MisspecScenario::alt_family) {
    report.metrics = pooled_sweep(
        config, derive_stream(kMisspecNamespace, std::uint64_t(scenario)), [](RngStream& rng) {
          PooledParams p;
          p.eta = rng.beta(2.0, 5.0);
          p.theta = rng.gamma(2.0, 1.0);
          p.rho = rng.beta(2.0, 8.0);
          return p;
        });
    return report;
  }

  config.validate();
  if (test_days < 1) throw std::invalid_argument("misspecification: test_days must be positive");
  for (const GridCell& cell : config.cells)
    if (cell.num_days + test_days > config.costs.horizon())
      throw std::invalid_argument(
          "misspecification: training plus test window exceeds the recorded costs");

  const int cells = int(config.cells.size());
  const int reps = config.replications;
  std::vector<RepMetrics> results(std::size_t(cells) * std::size_t(reps));
  run_jobs(cells * reps, worker_count(config, cells * reps), [&](int j) {
    const int ci = j / reps;
    const int r = j % reps;
    results[std::size_t(j)] = one_extrapolation_rep(config, config.cells[std::size_t(ci)], ci, r,
                                                    scenario, test_days);
  });

  for (int ci = 0; ci < cells; ++ci) {
    const GridCell& cell = config.cells[std::size_t(ci)];
    ExtrapolationCell agg;
    agg.num_commuters = cell.num_commuters;
    agg.num_days = cell.num_days;
    agg.test_days = test_days;

    int failures = 0;
    std::string first_error;
    std::vector<double> maes;
    for (int r = 0; r < reps; ++r) {
      const RepMetrics& res = results[std::size_t(ci) * std::size_t(reps) + std::size_t(r)];
      if (res.ok)
        maes.push_back(res.mae);
      else {
        ++failures;
        if (first_error.empty()) first_error = res.error;
      }
    }
    if (failures * 10 > reps)
      throw std::runtime_error("misspecification cell N=" + std::to_string(cell.num_commuters) +
                               " T=" + std::to_string(cell.num_days) + ": " +
                               std::to_string(failures) + "/" + std::to_string(reps) +
                               " replications failed; first failure: " + first_error);
    agg.failures = failures;
    agg.mae = Eigen::Map<const Eigen::VectorXd>(maes.data(), std::ptrdiff_t(maes.size()));
    agg.mean_mae = maes.empty() ? 0.0 : agg.mae.mean();
    report.extrapolation.push_back(std::move(agg));
  }
  return report;
}

AnonymizedComparison run_anonymized_comparison(const RecoveryConfig& config,
                                               const Hyperparams& truth) {
  config.validate();
  const GridCell& cell = config.cells.front();
  const CostSequence costs = slice_days(config.costs, 0, cell.num_days);
  const Eigen::VectorXd init = Eigen::VectorXd::Zero(costs.num_routes());

  AnonymizedComparison result;
  result.truth = truth;
  result.hyper_names = {"mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho", "sigma_rho"};

  const std::uint64_t stream = derive_stream(kAnonNamespace, 0);
  auto [indiv, traj] = simulate_hierarchical(truth, init, costs, cell.num_commuters,
                                             rep_seed(config, stream, 1));
  result.individuals = indiv;
  CountSeries counts = anonymize(traj);

  const auto fit_one = [&](bool use_counts, std::uint64_t leaf, Eigen::VectorXd& mean,
                           Eigen::VectorXd& lo, Eigen::VectorXd& hi, double& spread,
                           int& divergences) {
    DataBlock block;
    block.costs = costs;
    PosteriorOptions opt;
    if (use_counts) {
      opt.regime = Regime::hier_counts;
      block.counts = counts;
    } else {
      opt.regime = Regime::hier_complete;
      block.trajectory = traj;
    }
    std::vector<DataBlock> blocks;
    blocks.push_back(std::move(block));
    const PosteriorDraws draws = fit_blocks(std::move(blocks), config.priors, opt, config.sampler,
                                            rep_seed(config, stream, leaf));

    mean.resize(6);
    lo.resize(6);
    hi.resize(6);
    for (int k = 0; k < 6; ++k) {
      const Eigen::VectorXd col = draws.column(draws.column_index(result.hyper_names[std::size_t(k)]));
      const HdiResult h = hdi(col, 0.95);
      mean[k] = posterior_mean(col);
      lo[k] = h.lo;
      hi[k] = h.hi;
    }
    std::vector<double> eta_means(std::size_t(cell.num_commuters));
    for (int n = 0; n < cell.num_commuters; ++n)
      eta_means[std::size_t(n)] =
          posterior_mean(draws.column(draws.column_index("eta_" + std::to_string(n + 1))));
    spread = std::sqrt(variance_of(eta_means));
    divergences = draws.total_divergences();
  };

  fit_one(false, 2, result.complete_mean, result.complete_lo, result.complete_hi,
          result.complete_eta_spread, result.complete_divergences);
  fit_one(true, 3, result.anonymized_mean, result.anonymized_lo, result.anonymized_hi,
          result.anonymized_eta_spread, result.anonymized_divergences);
  return result;
}

}  // namespace d2d
