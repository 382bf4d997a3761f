#include "d2d/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "d2d/math.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {
constexpr std::uint64_t kContrastNamespace = 0x434F4E54;
constexpr std::uint64_t kPredictiveNamespace = 0x50524544;
}  // namespace

double posterior_mean(const Eigen::VectorXd& draws) {
  if (draws.size() == 0) throw std::invalid_argument("posterior mean: empty draws");
  return draws.mean();
}

HdiResult hdi(const Eigen::VectorXd& draws, double mass) {
  const int s = int(draws.size());
  if (s < 1) throw std::invalid_argument("hdi: empty draws");
  if (!(mass > 0.0 && mass < 1.0)) throw std::invalid_argument("hdi: mass must lie in (0,1)");
  std::vector<double> sorted(draws.data(), draws.data() + s);
  std::sort(sorted.begin(), sorted.end());
  const int window = int(std::floor(mass * double(s))) + 1;
  if (window > s) throw std::invalid_argument("hdi: too few draws for requested mass");

  int best_start = 0;
  double best_width = sorted[window - 1] - sorted[0];
  for (int start = 1; start + window <= s; ++start) {
    const double width = sorted[start + window - 1] - sorted[start];
    if (width < best_width) {  // ties keep the smallest start index
      best_width = width;
      best_start = start;
    }
  }
  return {sorted[best_start], sorted[best_start + window - 1], window};
}

RopeResult rope_test(const Eigen::VectorXd& draws, double lo, double hi) {
  const int s = int(draws.size());
  if (s < 1) throw std::invalid_argument("rope: empty draws");
  if (!(lo <= hi)) throw std::invalid_argument("rope: interval bounds out of order");
  double below = 0.0, inside = 0.0, above = 0.0;
  for (int i = 0; i < s; ++i) {
    if (draws[i] < lo)
      below += 1.0;
    else if (draws[i] > hi)
      above += 1.0;
    else
      inside += 1.0;  // closed interval
  }
  RopeResult out{below / s, inside / s, above / s, "undecided"};
  if (out.inside >= 0.95)
    out.verdict = "equivalent";
  else if (out.below >= 0.95)
    out.verdict = "rejected-below";
  else if (out.above >= 0.95)
    out.verdict = "rejected-above";
  return out;
}

Eigen::VectorXd logit_contrast(const Eigen::VectorXd& eta_a, const Eigen::VectorXd& eta_b,
                               std::uint64_t seed) {
  if (eta_a.size() == 0 || eta_b.size() == 0)
    throw std::invalid_argument("contrast: empty draws");
  if (eta_a.size() == eta_b.size()) {
    Eigen::VectorXd out(eta_a.size());
    for (int i = 0; i < eta_a.size(); ++i) out[i] = logit(eta_a[i]) - logit(eta_b[i]);
    return out;
  }
  const int s = int(std::max(eta_a.size(), eta_b.size()));
  RngStream rng(seed, kContrastNamespace);
  Eigen::VectorXd out(s);
  for (int i = 0; i < s; ++i) {
    const int ia = int(rng.next_u64() % std::uint64_t(eta_a.size()));
    const int ib = int(rng.next_u64() % std::uint64_t(eta_b.size()));
    out[i] = logit(eta_a[ia]) - logit(eta_b[ib]);
  }
  return out;
}

namespace {

// v1 implied by a draw row: columns past (eta, theta, rho) are delta offsets.
Eigen::VectorXd draw_initial_values(const Eigen::VectorXd& row, int m) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  if (row.size() > 3) {
    if (row.size() - 3 != m - 1)
      throw std::invalid_argument("draws: delta columns must cover routes 2..M");
    v.tail(m - 1) = row.tail(m - 1);
  }
  return v;
}

std::vector<int> thin_indices(int total, int keep) {
  std::vector<int> idx;
  const int k = std::min(total, keep);
  idx.reserve(k);
  for (int i = 0; i < k; ++i) idx.push_back(int(std::int64_t(i) * total / k));
  return idx;
}

}  // namespace

PredictiveSummary posterior_predictive(const Eigen::MatrixXd& pooled_draws,
                                       const CostSequence& costs, int population,
                                       int replications, std::uint64_t seed, int max_draws) {
  costs.validate();
  if (pooled_draws.rows() < 1 || pooled_draws.cols() < 3)
    throw std::invalid_argument("predictive: draws need eta, theta, rho columns");
  if (population < 1) throw std::invalid_argument("predictive: population must be positive");
  if (replications < 1) throw std::invalid_argument("predictive: need at least one replication");
  const int t_days = costs.horizon();
  const int m = costs.num_routes();
  const std::vector<int> kept = thin_indices(int(pooled_draws.rows()), max_draws);

  // Counts live on 0..population, so exact quantiles come from histograms.
  std::vector<std::vector<std::vector<std::int64_t>>> hist(
      t_days, std::vector<std::vector<std::int64_t>>(m + 1, std::vector<std::int64_t>(population + 1, 0)));

  RngStream root(seed, kPredictiveNamespace);
  for (std::size_t ki = 0; ki < kept.size(); ++ki) {
    const Eigen::VectorXd row = pooled_draws.row(kept[ki]).transpose();
    const double eta = row[0], theta = row[1], rho = row[2];
    Eigen::VectorXd v1 = draw_initial_values(row, m);
    RngStream draw_stream = root.substream(ki);
    for (int r = 0; r < replications; ++r) {
      RngStream rep_stream = draw_stream.substream(r);
      Eigen::VectorXd v = v1;
      for (int t = 0; t < t_days; ++t) {
        const Eigen::VectorXd p = choice_probabilities(v, theta, rho);
        Eigen::VectorXi day_counts = Eigen::VectorXi::Zero(m + 1);
        for (int n = 0; n < population; ++n) day_counts[rep_stream.categorical(p.data(), m + 1)] += 1;
        for (int a = 0; a <= m; ++a) hist[t][a][day_counts[a]] += 1;
        v = (1.0 - eta) * v + eta * costs.costs.row(t).transpose();
      }
    }
  }

  const std::int64_t total = std::int64_t(kept.size()) * replications;
  auto hist_quantile = [&](const std::vector<std::int64_t>& h, double q) {
    const std::int64_t target = std::int64_t(std::ceil(q * double(total)));
    std::int64_t cum = 0;
    for (int v = 0; v <= population; ++v) {
      cum += h[v];
      if (cum >= std::max<std::int64_t>(target, 1)) return double(v);
    }
    return double(population);
  };

  PredictiveSummary out;
  out.replications = replications;
  out.draws_used = int(kept.size());
  out.mean.resize(t_days, m + 1);
  out.lo50.resize(t_days, m + 1);
  out.hi50.resize(t_days, m + 1);
  out.lo95.resize(t_days, m + 1);
  out.hi95.resize(t_days, m + 1);
  for (int t = 0; t < t_days; ++t)
    for (int a = 0; a <= m; ++a) {
      double s = 0.0;
      for (int v = 0; v <= population; ++v) s += double(v) * double(hist[t][a][v]);
      out.mean(t, a) = s / double(total);
      out.lo50(t, a) = hist_quantile(hist[t][a], 0.25);
      out.hi50(t, a) = hist_quantile(hist[t][a], 0.75);
      out.lo95(t, a) = hist_quantile(hist[t][a], 0.025);
      out.hi95(t, a) = hist_quantile(hist[t][a], 0.975);
    }
  return out;
}

ExtrapolationResult extrapolate(const Eigen::MatrixXd& pooled_draws, const CostSequence& train,
                                const CostSequence& future) {
  train.validate();
  future.validate();
  if (train.num_routes() != future.num_routes())
    throw std::invalid_argument("extrapolate: route count changed between train and future");
  if (pooled_draws.rows() < 1 || pooled_draws.cols() < 3)
    throw std::invalid_argument("extrapolate: draws need eta, theta, rho columns");
  const int m = train.num_routes();
  const int t_future = future.horizon();
  const int s = int(pooled_draws.rows());

  Eigen::MatrixXd paths(s, t_future * (m + 1));
  for (int d = 0; d < s; ++d) {
    const Eigen::VectorXd row = pooled_draws.row(d).transpose();
    const double eta = row[0], theta = row[1], rho = row[2];
    Eigen::VectorXd v = draw_initial_values(row, m);
    for (int t = 0; t < train.horizon(); ++t)
      v = (1.0 - eta) * v + eta * train.costs.row(t).transpose();
    for (int t = 0; t < t_future; ++t) {
      const Eigen::VectorXd p = choice_probabilities(v, theta, rho);
      paths.row(d).segment(t * (m + 1), m + 1) = p.transpose();
      v = (1.0 - eta) * v + eta * future.costs.row(t).transpose();
    }
  }

  ExtrapolationResult out;
  out.mean.resize(t_future, m + 1);
  out.lo50.resize(t_future, m + 1);
  out.hi50.resize(t_future, m + 1);
  out.lo95.resize(t_future, m + 1);
  out.hi95.resize(t_future, m + 1);
  for (int t = 0; t < t_future; ++t)
    for (int a = 0; a <= m; ++a) {
      std::vector<double> cell(s);
      for (int d = 0; d < s; ++d) cell[d] = paths(d, t * (m + 1) + a);
      std::sort(cell.begin(), cell.end());
      out.mean(t, a) = paths.col(t * (m + 1) + a).mean();
      out.lo50(t, a) = quantile_sorted(cell, 0.25);
      out.hi50(t, a) = quantile_sorted(cell, 0.75);
      out.lo95(t, a) = quantile_sorted(cell, 0.025);
      out.hi95(t, a) = quantile_sorted(cell, 0.975);
    }
  return out;
}

double extrapolation_mae(const ExtrapolationResult& result, const Eigen::MatrixXd& truth) {
  if (truth.rows() != result.mean.rows() || truth.cols() != result.mean.cols())
    throw std::invalid_argument("extrapolation mae: shape mismatch");
  return (result.mean - truth).cwiseAbs().mean();
}

namespace {

PopulationDensity averaged_density(const Eigen::MatrixXd& hyper_draws, const Eigen::VectorXd& grid,
                                   int mu_col, int sigma_col, bool log_scale) {
  if (hyper_draws.cols() < 6)
    throw std::invalid_argument("population density: need six hyperparameter columns");
  if (grid.size() < 2) throw std::invalid_argument("population density: need a grid");
  PopulationDensity out;
  out.grid = grid;
  out.density = Eigen::VectorXd::Zero(grid.size());
  const int s = int(hyper_draws.rows());
  for (int d = 0; d < s; ++d) {
    const double mu = hyper_draws(d, mu_col);
    const double sigma = hyper_draws(d, sigma_col);
    for (int g = 0; g < grid.size(); ++g)
      out.density[g] += log_scale ? std::exp(lognormal_logpdf(grid[g], mu, sigma))
                                  : std::exp(logitnormal_logpdf(grid[g], mu, sigma));
  }
  out.density /= double(s);
  return out;
}

}  // namespace

PopulationDensity population_distribution_eta(const Eigen::MatrixXd& hyper_draws,
                                              const Eigen::VectorXd& grid) {
  for (int g = 0; g < grid.size(); ++g)
    if (!(grid[g] > 0.0 && grid[g] < 1.0))
      throw std::invalid_argument("population density: eta grid must lie in (0,1)");
  return averaged_density(hyper_draws, grid, 0, 1, false);
}

PopulationDensity population_distribution_theta(const Eigen::MatrixXd& hyper_draws,
                                                const Eigen::VectorXd& grid) {
  for (int g = 0; g < grid.size(); ++g)
    if (!(grid[g] > 0.0))
      throw std::invalid_argument("population density: theta grid must be positive");
  return averaged_density(hyper_draws, grid, 2, 3, true);
}

PopulationDensity population_distribution_rho(const Eigen::MatrixXd& hyper_draws,
                                              const Eigen::VectorXd& grid) {
  for (int g = 0; g < grid.size(); ++g)
    if (!(grid[g] > 0.0 && grid[g] < 1.0))
      throw std::invalid_argument("population density: rho grid must lie in (0,1)");
  return averaged_density(hyper_draws, grid, 4, 5, false);
}

}  // namespace d2d
