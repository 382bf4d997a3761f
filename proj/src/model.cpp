#include "d2d/model.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "d2d/math.hpp"

namespace d2d {

HierDraw HierParams::individual() const {
  HierDraw draw;
  const int n = num_commuters();
  draw.eta.resize(n);
  draw.theta.resize(n);
  draw.rho.resize(n);
  for (int i = 0; i < n; ++i) {
    draw.eta[i] = logistic(hyper.mu_eta + hyper.sigma_eta * z(i, 0));
    draw.theta[i] = std::exp(hyper.mu_theta + hyper.sigma_theta * z(i, 1));
    draw.rho[i] = logistic(hyper.mu_rho + hyper.sigma_rho * z(i, 2));
  }
  return draw;
}

Eigen::VectorXd initial_values_from(const PooledParams& params, int num_routes,
                                    const Eigen::VectorXd* base) {
  if (params.delta) {
    if (params.delta->size() != num_routes - 1)
      throw std::invalid_argument("initial values: delta must have one entry per route after the first");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(num_routes);
    v.tail(num_routes - 1) = *params.delta;
    return v;
  }
  if (base) {
    if (base->size() != num_routes)
      throw std::invalid_argument("initial values: base must match route count");
    return *base;
  }
  return Eigen::VectorXd::Zero(num_routes);
}

static void check_behavior(double eta, double theta, double rho) {
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("likelihood: eta must lie in (0,1)");
  if (!(theta > 0.0)) throw std::invalid_argument("likelihood: theta must be positive");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("likelihood: rho must lie in [0,1)");
}

// Shared-core likelihood over daily tallies k (days x alternatives 0..M).
// Cells with zero count contribute nothing, so rho = 0 stays finite as long
// as nobody is tallied on the non-travel alternative.
static double tally_loglik(double eta, double theta, double rho, Eigen::VectorXd values,
                           const Eigen::MatrixXd& costs, const Eigen::MatrixXi& k) {
  const int t_days = int(costs.rows());
  const int m = int(costs.cols());
  double ll = 0.0;
  const double log_rho = rho > 0.0 ? std::log(rho) : -std::numeric_limits<double>::infinity();
  const double log_travel = std::log1p(-rho);
  for (int t = 0; t < t_days; ++t) {
    // Centering by the day's best valuation keeps each term on the scale of
    // the answer even at extreme theta.
    const double vmin = values.minCoeff();
    const Eigen::VectorXd neg = -theta * (values.array() - vmin).matrix();
    const double lse = logsumexp(neg);
    if (k(t, 0) > 0) ll += double(k(t, 0)) * log_rho;
    for (int i = 0; i < m; ++i)
      if (k(t, i + 1) > 0) ll += double(k(t, i + 1)) * (log_travel + neg[i] - lse);
    values = (1.0 - eta) * values + eta * costs.row(t).transpose();
  }
  return ll;
}

static Eigen::MatrixXi tally(const ChoiceTrajectory& traj) {
  Eigen::MatrixXi k = Eigen::MatrixXi::Zero(traj.horizon(), traj.num_routes + 1);
  for (int n = 0; n < traj.num_commuters(); ++n)
    for (int t = 0; t < traj.horizon(); ++t) k(t, traj.choices(n, t)) += 1;
  return k;
}

static void check_alignment(int data_days, int data_routes, const CostSequence& costs) {
  if (costs.horizon() != data_days)
    throw std::invalid_argument("likelihood: observation horizon must match cost horizon");
  if (costs.num_routes() != data_routes)
    throw std::invalid_argument("likelihood: observation routes must match cost routes");
}

double loglik_pooled(const PooledParams& params, const ChoiceTrajectory& traj,
                     const CostSequence& costs, const Eigen::VectorXd* initial_values) {
  traj.validate();
  costs.validate();
  check_alignment(traj.horizon(), traj.num_routes, costs);
  check_behavior(params.eta, params.theta, params.rho);
  const Eigen::VectorXd v1 = initial_values_from(params, costs.num_routes(), initial_values);
  return tally_loglik(params.eta, params.theta, params.rho, v1, costs.costs, tally(traj));
}

double multinomial_constant(const CountSeries& counts) {
  double c = 0.0;
  const double log_n_fact = std::lgamma(double(counts.population) + 1.0);
  for (int t = 0; t < counts.horizon(); ++t) {
    c += log_n_fact;
    for (int i = 0; i < counts.counts.cols(); ++i)
      c -= std::lgamma(double(counts.counts(t, i)) + 1.0);
  }
  return c;
}

double loglik_pooled_counts(const PooledParams& params, const CountSeries& counts,
                            const CostSequence& costs, const Eigen::VectorXd* initial_values) {
  counts.validate();
  costs.validate();
  check_alignment(counts.horizon(), counts.num_routes(), costs);
  check_behavior(params.eta, params.theta, params.rho);
  const Eigen::VectorXd v1 = initial_values_from(params, costs.num_routes(), initial_values);
  return multinomial_constant(counts) +
         tally_loglik(params.eta, params.theta, params.rho, v1, costs.costs, counts.counts);
}

double loglik_hier(const HierDraw& params, const ChoiceTrajectory& traj, const CostSequence& costs,
                   const Eigen::VectorXd* initial_values) {
  traj.validate();
  costs.validate();
  check_alignment(traj.horizon(), traj.num_routes, costs);
  const int n = traj.num_commuters();
  if (params.eta.size() != n || params.theta.size() != n || params.rho.size() != n)
    throw std::invalid_argument("likelihood: individual parameters must cover every commuter");
  const int m = costs.num_routes();
  const Eigen::VectorXd v1 =
      initial_values ? *initial_values : Eigen::VectorXd::Zero(m);
  if (v1.size() != m) throw std::invalid_argument("likelihood: initial values must match route count");

  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    check_behavior(params.eta[i], params.theta[i], params.rho[i]);
    Eigen::MatrixXi k = Eigen::MatrixXi::Zero(traj.horizon(), m + 1);
    for (int t = 0; t < traj.horizon(); ++t) k(t, traj.choices(i, t)) += 1;
    ll += tally_loglik(params.eta[i], params.theta[i], params.rho[i], v1, costs.costs, k);
  }
  return ll;
}

double loglik_hier_counts_approx(const HierDraw& params, const CountSeries& counts,
                                 const CostSequence& costs, const Eigen::VectorXd* initial_values) {
  counts.validate();
  costs.validate();
  check_alignment(counts.horizon(), counts.num_routes(), costs);
  const int n = int(params.eta.size());
  if (n != counts.population)
    throw std::invalid_argument("likelihood: individual parameters must cover the population");
  if (params.theta.size() != n || params.rho.size() != n)
    throw std::invalid_argument("likelihood: ragged individual parameter vectors");
  const int m = costs.num_routes();
  const Eigen::VectorXd v1 = initial_values ? *initial_values : Eigen::VectorXd::Zero(m);
  if (v1.size() != m) throw std::invalid_argument("likelihood: initial values must match route count");
  for (int i = 0; i < n; ++i) check_behavior(params.eta[i], params.theta[i], params.rho[i]);

  Eigen::MatrixXd values(n, m);
  values.rowwise() = v1.transpose();
  double ll = multinomial_constant(counts);
  for (int t = 0; t < counts.horizon(); ++t) {
    Eigen::VectorXd mean_p = Eigen::VectorXd::Zero(m + 1);
    for (int i = 0; i < n; ++i)
      mean_p += choice_probabilities(values.row(i).transpose(), params.theta[i], params.rho[i]);
    mean_p /= double(n);
    for (int a = 0; a <= m; ++a)
      if (counts.counts(t, a) > 0) ll += double(counts.counts(t, a)) * std::log(mean_p[a]);
    for (int i = 0; i < n; ++i)
      values.row(i) = (1.0 - params.eta[i]) * values.row(i) + params.eta[i] * costs.costs.row(t);
  }
  return ll;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> pmd_moments(const std::vector<Eigen::VectorXd>& probs) {
  if (probs.empty()) throw std::invalid_argument("pmd moments: need at least one commuter");
  const int k = int(probs.front().size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
  for (const Eigen::VectorXd& p : probs) {
    if (p.size() != k) throw std::invalid_argument("pmd moments: ragged probability vectors");
    if (p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > 1e-8)
      throw std::invalid_argument("pmd moments: rows must be probability vectors");
    mean += p;
    cov += Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
  }
  return {mean, cov};
}

double pmd_exact_pmf(const std::vector<Eigen::VectorXd>& probs, const Eigen::VectorXi& outcome) {
  const int n = int(probs.size());
  if (n < 1) throw std::invalid_argument("pmd pmf: need at least one commuter");
  if (n > 10) throw std::invalid_argument("pmd pmf: enumeration is limited to 10 commuters");
  const int k = int(probs.front().size());
  if (outcome.size() != k) throw std::invalid_argument("pmd pmf: outcome size mismatch");
  int total = 0;
  for (int a = 0; a < k; ++a) {
    if (outcome[a] < 0) throw std::invalid_argument("pmd pmf: negative outcome count");
    total += outcome[a];
  }
  if (total != n) throw std::invalid_argument("pmd pmf: outcome must allocate every commuter");

  std::map<std::vector<int>, double> dist;
  dist[std::vector<int>(k, 0)] = 1.0;
  for (const Eigen::VectorXd& p : probs) {
    if (p.size() != k) throw std::invalid_argument("pmd pmf: ragged probability vectors");
    std::map<std::vector<int>, double> next;
    for (const auto& [counts, mass] : dist)
      for (int a = 0; a < k; ++a) {
        if (p[a] <= 0.0) continue;
        std::vector<int> c = counts;
        c[a] += 1;
        next[c] += mass * p[a];
      }
    dist = std::move(next);
  }
  std::vector<int> key(outcome.data(), outcome.data() + k);
  const auto it = dist.find(key);
  return it == dist.end() ? 0.0 : it->second;
}

double log_prior_pooled(const PooledParams& params, const PriorSpec& prior, bool rho_sampled) {
  double lp = logitnormal_logpdf(params.eta, prior.eta_logit.mu, prior.eta_logit.sigma) +
              lognormal_logpdf(params.theta, prior.theta_log.mu, prior.theta_log.sigma);
  if (rho_sampled)
    lp += logitnormal_logpdf(params.rho, prior.rho_logit.mu, prior.rho_logit.sigma);
  if (params.delta)
    for (int j = 0; j < params.delta->size(); ++j)
      lp += normal_logpdf((*params.delta)[j], prior.delta.mu, prior.delta.sigma);
  return lp;
}

double log_prior_hier(const HierParams& params, const PriorSpec& prior, bool centered) {
  const Hyperparams& h = params.hyper;
  double lp = normal_logpdf(h.mu_eta, prior.mu_eta.mu, prior.mu_eta.sigma) +
              normal_logpdf(h.mu_theta, prior.mu_theta.mu, prior.mu_theta.sigma) +
              normal_logpdf(h.mu_rho, prior.mu_rho.mu, prior.mu_rho.sigma) +
              halfnormal_logpdf(h.sigma_eta, prior.sigma_eta.sigma) +
              halfnormal_logpdf(h.sigma_theta, prior.sigma_theta.sigma) +
              halfnormal_logpdf(h.sigma_rho, prior.sigma_rho.sigma);
  for (int n = 0; n < params.num_commuters(); ++n) {
    if (centered) {
      lp += normal_logpdf(h.mu_eta + h.sigma_eta * params.z(n, 0), h.mu_eta, h.sigma_eta);
      lp += normal_logpdf(h.mu_theta + h.sigma_theta * params.z(n, 1), h.mu_theta, h.sigma_theta);
      lp += normal_logpdf(h.mu_rho + h.sigma_rho * params.z(n, 2), h.mu_rho, h.sigma_rho);
    } else {
      for (int c = 0; c < 3; ++c) lp += normal_logpdf(params.z(n, c), 0.0, 1.0);
    }
  }
  return lp;
}

ParamLayout PooledTransform::layout() const {
  ParamLayout l;
  l.names = {"eta", "theta"};
  if (sample_rho) l.names.push_back("rho");
  for (int j = 0; j < num_delta; ++j) l.names.push_back("delta_" + std::to_string(j + 2));
  return l;
}

PooledParams PooledTransform::constrain(const Eigen::VectorXd& u, double* log_jacobian) const {
  if (u.size() != dim()) throw std::invalid_argument("constrain: dimension mismatch");
  PooledParams p;
  p.eta = logistic(u[0]);
  p.theta = std::exp(u[1]);
  double lj = -softplus(u[0]) - softplus(-u[0]) + u[1];
  int at = 2;
  if (sample_rho) {
    p.rho = logistic(u[at]);
    lj += -softplus(u[at]) - softplus(-u[at]);
    ++at;
  } else {
    p.rho = fixed_rho;
  }
  if (num_delta > 0) p.delta = u.segment(at, num_delta);
  if (log_jacobian) *log_jacobian = lj;
  return p;
}

UnconstrainedVector PooledTransform::unconstrain(const PooledParams& params) const {
  const int expected_delta = params.delta ? int(params.delta->size()) : 0;
  if (expected_delta != num_delta)
    throw std::invalid_argument("unconstrain: delta block size mismatch");
  UnconstrainedVector out;
  out.layout = layout();
  out.values.resize(dim());
  out.values[0] = logit(params.eta);
  out.values[1] = std::log(params.theta);
  int at = 2;
  if (sample_rho) out.values[at++] = logit(params.rho);
  if (num_delta > 0) out.values.segment(at, num_delta) = *params.delta;
  constrain(out.values, &out.log_jacobian);
  return out;
}

ParamLayout HierTransform::layout() const {
  ParamLayout l;
  l.names = {"mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho", "sigma_rho"};
  const char* z_names[3] = {"z_eta_", "z_theta_", "z_rho_"};
  const char* w_names[3] = {"logit_eta_", "log_theta_", "logit_rho_"};
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < num_commuters; ++n)
      l.names.push_back(std::string(centered ? w_names[c] : z_names[c]) + std::to_string(n + 1));
  return l;
}

HierParams HierTransform::constrain(const Eigen::VectorXd& u, double* log_jacobian) const {
  if (u.size() != dim()) throw std::invalid_argument("constrain: dimension mismatch");
  HierParams p;
  p.hyper.mu_eta = u[0];
  p.hyper.sigma_eta = std::exp(u[1]);
  p.hyper.mu_theta = u[2];
  p.hyper.sigma_theta = std::exp(u[3]);
  p.hyper.mu_rho = u[4];
  p.hyper.sigma_rho = std::exp(u[5]);
  p.z.resize(num_commuters, 3);
  const double mu[3] = {p.hyper.mu_eta, p.hyper.mu_theta, p.hyper.mu_rho};
  const double sigma[3] = {p.hyper.sigma_eta, p.hyper.sigma_theta, p.hyper.sigma_rho};
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < num_commuters; ++n) {
      const double coord = u[6 + c * num_commuters + n];
      p.z(n, c) = centered ? (coord - mu[c]) / sigma[c] : coord;
    }
  // Only the scale coordinates change measure; the per-commuter coordinates
  // (z or transformed individual parameters) are sampled as-is.
  if (log_jacobian) *log_jacobian = u[1] + u[3] + u[5];
  return p;
}

UnconstrainedVector HierTransform::unconstrain(const HierParams& params) const {
  if (params.num_commuters() != num_commuters)
    throw std::invalid_argument("unconstrain: commuter count mismatch");
  UnconstrainedVector out;
  out.layout = layout();
  out.values.resize(dim());
  out.values[0] = params.hyper.mu_eta;
  out.values[1] = std::log(params.hyper.sigma_eta);
  out.values[2] = params.hyper.mu_theta;
  out.values[3] = std::log(params.hyper.sigma_theta);
  out.values[4] = params.hyper.mu_rho;
  out.values[5] = std::log(params.hyper.sigma_rho);
  const double mu[3] = {params.hyper.mu_eta, params.hyper.mu_theta, params.hyper.mu_rho};
  const double sigma[3] = {params.hyper.sigma_eta, params.hyper.sigma_theta, params.hyper.sigma_rho};
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < num_commuters; ++n)
      out.values[6 + c * num_commuters + n] =
          centered ? mu[c] + sigma[c] * params.z(n, c) : params.z(n, c);
  out.log_jacobian = out.values[1] + out.values[3] + out.values[5];
  return out;
}

}  // namespace d2d
