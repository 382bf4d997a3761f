#include "d2d/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace d2d {

namespace {

void check_chains(const std::vector<Eigen::VectorXd>& chains, int min_len) {
  if (chains.empty()) throw std::invalid_argument("diagnostics: need at least one chain");
  const auto len = chains.front().size();
  if (len < min_len) throw std::invalid_argument("diagnostics: chains too short");
  for (const Eigen::VectorXd& c : chains)
    if (c.size() != len) throw std::invalid_argument("diagnostics: chains must have equal length");
}

}  // namespace

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  check_chains(chains, 4);
  std::vector<Eigen::VectorXd> halves;
  for (const Eigen::VectorXd& c : chains) {
    const int n = int(c.size());
    const int half = n / 2;
    halves.push_back(c.head(half));
    halves.push_back(c.tail(half));  // middle draw dropped when n is odd
  }
  const int m = int(halves.size());
  const int n = int(halves.front().size());

  Eigen::VectorXd means(m), vars(m);
  for (int j = 0; j < m; ++j) {
    means[j] = halves[j].mean();
    vars[j] = (halves[j].array() - means[j]).square().sum() / double(n - 1);
  }
  const double w = vars.mean();
  const double grand = means.mean();
  const double b = m > 1 ? double(n) * (means.array() - grand).square().sum() / double(m - 1) : 0.0;

  if (w == 0.0) {
    if (b > 0.0) return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("diagnostics: constant chains have no scale to compare");
  }
  const double var_plus = double(n - 1) / double(n) * w + b / double(n);
  return std::sqrt(var_plus / w);
}

double ess(const std::vector<Eigen::VectorXd>& chains) {
  check_chains(chains, 4);
  const int m = int(chains.size());
  const int n = int(chains.front().size());

  // Centered chains; autocovariances (biased, 1/n normalization) are computed
  // lag by lag since Geyer truncation rarely needs more than a few dozen.
  std::vector<Eigen::VectorXd> centered(m);
  Eigen::VectorXd means(m), vars(m);
  for (int j = 0; j < m; ++j) {
    means[j] = chains[j].mean();
    centered[j] = chains[j].array() - means[j];
    vars[j] = centered[j].squaredNorm() / double(n - 1);
  }

  const double w = vars.mean();
  const double grand = means.mean();
  const double b = m > 1 ? double(n) * (means.array() - grand).square().sum() / double(m - 1) : 0.0;
  const double var_plus = double(n - 1) / double(n) * w + b / double(n);
  if (var_plus <= 0.0 || w == 0.0)
    throw std::invalid_argument("diagnostics: constant chains have no effective sample size");

  auto rho = [&](int lag) {
    double mean_acov = 0.0;
    for (int j = 0; j < m; ++j)
      mean_acov += centered[j].head(n - lag).dot(centered[j].tail(n - lag)) / double(n);
    mean_acov /= double(m);
    return 1.0 - (w - mean_acov) / var_plus;
  };

  // Geyer pairs: sum while the paired autocorrelations stay positive, then
  // enforce monotone decrease.
  double tau = -1.0 + 2.0 * rho(0);
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int k = 1; k + 1 < n; k += 2) {
    double pair = rho(k) + (k + 1 < n ? rho(k + 1) : 0.0);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::numeric_limits<double>::max());
  return double(m) * double(n) / tau;
}

double rank_of_truth(const Eigen::VectorXd& draws, double truth) {
  if (draws.size() == 0) throw std::invalid_argument("rank: empty draws");
  double below = 0.0, equal = 0.0;
  for (int i = 0; i < draws.size(); ++i) {
    if (draws[i] < truth) below += 1.0;
    if (draws[i] == truth) equal += 1.0;
  }
  return (below + 0.5 * equal) / double(draws.size());
}

std::vector<Eigen::VectorXd> split_chain_halves(const PosteriorDraws& draws, int column) {
  std::vector<Eigen::VectorXd> out;
  for (int c = 0; c < draws.chains; ++c) {
    Eigen::VectorXd chain(draws.draws_per_chain);
    int at = 0;
    for (int r = 0; r < draws.total_draws(); ++r)
      if (draws.chain_id[r] == c) chain[at++] = draws.samples(r, column);
    const int half = draws.draws_per_chain / 2;
    out.push_back(chain.head(half));
    out.push_back(chain.tail(half));
  }
  return out;
}

Diagnostics compute_diagnostics(const PosteriorDraws& draws) {
  Diagnostics diag;
  diag.names = draws.names;
  const int d = int(draws.samples.cols());
  diag.rhat.resize(d);
  diag.ess.resize(d);
  diag.divergences = draws.total_divergences();
  for (int j = 0; j < d; ++j) {
    // split_rhat halves the chains itself; ess gets pre-split halves.
    std::vector<Eigen::VectorXd> whole;
    for (int c = 0; c < draws.chains; ++c) {
      Eigen::VectorXd chain(draws.draws_per_chain);
      int at = 0;
      for (int r = 0; r < draws.total_draws(); ++r)
        if (draws.chain_id[r] == c) chain[at++] = draws.samples(r, j);
      whole.push_back(std::move(chain));
    }
    const std::vector<Eigen::VectorXd> halves = split_chain_halves(draws, j);
    try {
      diag.rhat[j] = split_rhat(whole);
    } catch (const std::invalid_argument&) {
      diag.rhat[j] = std::numeric_limits<double>::quiet_NaN();
    }
    try {
      diag.ess[j] = ess(halves);
    } catch (const std::invalid_argument&) {
      diag.ess[j] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  diag.max_rhat = -std::numeric_limits<double>::infinity();
  diag.min_ess = std::numeric_limits<double>::infinity();
  for (int j = 0; j < d; ++j) {
    if (std::isfinite(diag.rhat[j])) diag.max_rhat = std::max(diag.max_rhat, diag.rhat[j]);
    if (std::isfinite(diag.ess[j])) diag.min_ess = std::min(diag.min_ess, diag.ess[j]);
  }
  return diag;
}

}  // namespace d2d
