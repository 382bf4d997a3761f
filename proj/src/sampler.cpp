#include "d2d/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "d2d/math.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kDivergenceEnergy = 1000.0;
constexpr std::uint64_t kSamplerNamespace = 0x53414D50;  // keeps sampler streams
                                                         // away from simulation streams
}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("sampler: chains must be at least 1");
  if (warmup < 100) throw std::invalid_argument("sampler: warmup must be at least 100");
  if (draws < 1) throw std::invalid_argument("sampler: draws must be at least 1");
  if (!(target_accept > 0.5 && target_accept < 1.0))
    throw std::invalid_argument("sampler: target accept must lie in (0.5,1)");
  if (max_tree_depth < 1 || max_tree_depth > 12)
    throw std::invalid_argument("sampler: max tree depth must lie in 1..12");
  if (!(init_jitter >= 0.0)) throw std::invalid_argument("sampler: init jitter must be nonnegative");
}

int PosteriorDraws::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return int(i);
  throw std::invalid_argument("draws: no parameter named " + name);
}

int PosteriorDraws::total_divergences() const {
  int n = 0;
  for (char d : divergent) n += d != 0;
  return n;
}

namespace {

struct Leaf {
  Eigen::VectorXd q, p, grad;
  double logp = kNegInf;
};

struct Hamiltonian {
  const Posterior* target = nullptr;
  Eigen::VectorXd inv_mass;

  double energy(const Leaf& z) const {
    return -z.logp + 0.5 * (z.p.array().square() * inv_mass.array()).sum();
  }

  void leapfrog(Leaf& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * (inv_mass.array() * z.p.array()).matrix();
    z.logp = target->value_and_gradient(z.q, z.grad);
    z.p += 0.5 * eps * z.grad;
  }
};

// Classic no-U-turn criterion on the time-ordered ends of a subtree.
bool u_turn(const Leaf& time_minus, const Leaf& time_plus, const Eigen::VectorXd& inv_mass) {
  const Eigen::VectorXd span = time_plus.q - time_minus.q;
  return span.dot((inv_mass.array() * time_minus.p.array()).matrix()) < 0.0 ||
         span.dot((inv_mass.array() * time_plus.p.array()).matrix()) < 0.0;
}

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Subtree {
  Leaf near, far;  // first and last new leaf along the build direction
  Leaf sample;
  double log_weight = kNegInf;
  double sum_alpha = 0.0;
  int n_alpha = 0;
  bool turned = false;
  bool divergent = false;
};

Subtree build_tree(int depth, const Leaf& from, double signed_eps, double h0,
                   const Hamiltonian& ham, RngStream& rng) {
  if (depth == 0) {
    Subtree sub;
    Leaf z = from;
    ham.leapfrog(z, signed_eps);
    const double h = ham.energy(z);
    const double delta = h0 - h;  // log weight of this leaf
    sub.near = z;
    sub.far = z;
    sub.sample = std::move(z);
    sub.n_alpha = 1;
    if (std::isfinite(delta)) {
      sub.log_weight = delta;
      sub.sum_alpha = std::min(1.0, std::exp(delta));
      sub.divergent = h - h0 > kDivergenceEnergy;
    } else {
      sub.log_weight = kNegInf;
      sub.sum_alpha = 0.0;
      sub.divergent = true;
    }
    return sub;
  }

  Subtree first = build_tree(depth - 1, from, signed_eps, h0, ham, rng);
  if (first.divergent || first.turned) return first;
  Subtree second = build_tree(depth - 1, first.far, signed_eps, h0, ham, rng);

  Subtree merged;
  merged.near = first.near;
  merged.far = second.far;
  merged.sum_alpha = first.sum_alpha + second.sum_alpha;
  merged.n_alpha = first.n_alpha + second.n_alpha;
  merged.divergent = second.divergent;
  merged.log_weight = logaddexp(first.log_weight, second.log_weight);
  // Multinomial selection between the halves.
  const double p_second =
      merged.log_weight == kNegInf ? 0.0 : std::exp(second.log_weight - merged.log_weight);
  merged.sample = rng.uniform() < p_second ? std::move(second.sample) : std::move(first.sample);

  const bool forward = signed_eps > 0.0;
  merged.turned = second.turned ||
                  u_turn(forward ? merged.near : merged.far, forward ? merged.far : merged.near,
                         ham.inv_mass);
  return merged;
}

Leaf make_leaf(const Posterior& target, const Eigen::VectorXd& q) {
  Leaf z;
  z.q = q;
  z.p = Eigen::VectorXd::Zero(q.size());
  z.grad.resize(q.size());
  z.logp = target.value_and_gradient(z.q, z.grad);
  return z;
}

double find_step_size(const Hamiltonian& ham, const Leaf& at, RngStream& rng) {
  double eps = 1.0;
  Leaf z = at;
  for (int i = 0; i < z.q.size(); ++i)
    z.p[i] = rng.normal() / std::sqrt(ham.inv_mass[i]);
  const double h0 = ham.energy(z);

  auto accept_ratio = [&](double e) {
    Leaf trial = z;
    ham.leapfrog(trial, e);
    const double h = ham.energy(trial);
    return std::isfinite(h) ? std::exp(h0 - h) : 0.0;
  };

  double r = accept_ratio(eps);
  const bool grow = r > 0.5;
  for (int iter = 0; iter < 100; ++iter) {
    if (grow) {
      if (r <= 0.5 || eps > 1e7) break;
      eps *= 2.0;
    } else {
      if (r >= 0.5 || eps < 1e-10) break;
      eps *= 0.5;
    }
    r = accept_ratio(eps);
  }
  if (grow) eps *= 0.5;  // last doubling overshot the 0.5 crossing
  return std::clamp(eps, 1e-10, 1e7);
}

struct DualAveraging {
  double mu = 0.0;
  double log_eps = 0.0;
  double log_eps_bar = 0.0;
  double h_bar = 0.0;
  int m = 0;
  static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    log_eps = std::log(eps);
    log_eps_bar = std::log(eps);
    h_bar = 0.0;
    m = 0;
  }
  double update(double target_accept, double accept) {
    ++m;
    const double w = 1.0 / (double(m) + t0);
    h_bar = (1.0 - w) * h_bar + w * (target_accept - accept);
    log_eps = mu - std::sqrt(double(m)) / gamma * h_bar;
    const double v = std::pow(double(m), -kappa);
    log_eps_bar = v * log_eps + (1.0 - v) * log_eps_bar;
    return std::exp(log_eps);
  }
};

struct Welford {
  Eigen::VectorXd mean, m2;
  int n = 0;
  void reset(int dim) {
    mean = Eigen::VectorXd::Zero(dim);
    m2 = Eigen::VectorXd::Zero(dim);
    n = 0;
  }
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd d = x - mean;
    mean += d / double(n);
    m2 += d.cwiseProduct(x - mean);
  }
  Eigen::VectorXd variance() const { return m2 / double(std::max(1, n - 1)); }
};

struct ChainResult {
  Eigen::MatrixXd unconstrained;
  std::vector<char> divergent;
  double step_size = 0.0;
  Eigen::VectorXd inv_mass;
};

ChainResult run_chain(const Posterior& target, const SamplerConfig& cfg, int chain) {
  const int d = target.dim();
  RngStream rng = RngStream(cfg.seed, kSamplerNamespace).substream(std::uint64_t(chain));

  // Jittered initialization with bounded retries.
  Leaf current;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    Eigen::VectorXd q0(d);
    for (int i = 0; i < d; ++i) q0[i] = cfg.init_jitter * rng.normal();
    current = make_leaf(target, q0);
    ok = std::isfinite(current.logp);
  }
  if (!ok)
    throw std::runtime_error("sampler: no finite starting density after 100 jittered attempts");

  Hamiltonian ham{&target, Eigen::VectorXd::Ones(d)};
  double eps = find_step_size(ham, current, rng);
  DualAveraging da;
  da.restart(eps);

  // Expanding adaptation windows: fast start, doubling slow windows for the
  // mass matrix, fast tail for the final step-size run.
  int init_buffer = 75, term_buffer = 50, base_window = 25;
  if (init_buffer + base_window + term_buffer > cfg.warmup) {
    init_buffer = std::max(1, int(0.15 * cfg.warmup));
    term_buffer = std::max(1, int(0.10 * cfg.warmup));
    base_window = cfg.warmup - init_buffer - term_buffer;
  }
  int window_end = init_buffer + base_window;
  int window_size = base_window;
  Welford welford;
  welford.reset(d);

  ChainResult out;
  out.unconstrained.resize(cfg.draws, d);
  out.divergent.assign(cfg.draws, 0);

  int warmup_divergences = 0;
  const int total_iters = cfg.warmup + cfg.draws;
  for (int iter = 0; iter < total_iters; ++iter) {
    const bool warming = iter < cfg.warmup;

    // One NUTS transition.
    for (int i = 0; i < d; ++i) current.p[i] = rng.normal() / std::sqrt(ham.inv_mass[i]);
    const double h0 = ham.energy(current);
    Leaf time_minus = current, time_plus = current;
    Leaf selected = current;
    double log_weight = 0.0;
    double sum_alpha = 0.0;
    int n_alpha = 0;
    bool divergent_iter = false;

    for (int depth = 0; depth < cfg.max_tree_depth; ++depth) {
      const bool forward = rng.uniform() < 0.5;
      Subtree sub = forward ? build_tree(depth, time_plus, eps, h0, ham, rng)
                            : build_tree(depth, time_minus, -eps, h0, ham, rng);
      sum_alpha += sub.sum_alpha;
      n_alpha += sub.n_alpha;
      if (sub.divergent) divergent_iter = true;
      if (sub.divergent || sub.turned) break;
      // Biased progressive selection toward the fresh subtree.
      if (std::log(rng.uniform()) < sub.log_weight - log_weight) selected = sub.sample;
      log_weight = logaddexp(log_weight, sub.log_weight);
      if (forward)
        time_plus = sub.far;
      else
        time_minus = sub.far;
      if (u_turn(time_minus, time_plus, ham.inv_mass)) break;
    }

    current = std::move(selected);
    const double accept = n_alpha > 0 ? sum_alpha / double(n_alpha) : 0.0;

    if (warming) {
      if (divergent_iter) ++warmup_divergences;
      eps = da.update(cfg.target_accept, accept);

      const bool in_slow = iter >= init_buffer && iter < cfg.warmup - term_buffer;
      if (in_slow) welford.add(current.q);
      if (in_slow && iter + 1 == window_end) {
        // Regularized variance estimate, then a fresh step-size run.
        const double n = double(welford.n);
        const Eigen::VectorXd var = welford.variance();
        ham.inv_mass =
            ((n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0))).matrix();
        welford.reset(d);
        window_size *= 2;
        window_end += window_size;
        if (window_end + window_size > cfg.warmup - term_buffer)
          window_end = cfg.warmup - term_buffer;
        eps = find_step_size(ham, current, rng);
        da.restart(eps);
      }
      if (iter + 1 == cfg.warmup) {
        eps = std::exp(da.log_eps_bar);
        if (warmup_divergences == cfg.warmup)
          throw std::runtime_error("sampler: every warmup iteration diverged");
      }
    } else {
      const int s = iter - cfg.warmup;
      out.unconstrained.row(s) = current.q.transpose();
      out.divergent[s] = divergent_iter ? 1 : 0;
    }
  }

  out.step_size = eps;
  out.inv_mass = ham.inv_mass;
  return out;
}

}  // namespace

PosteriorDraws nuts_sample(const Posterior& target, const SamplerConfig& config) {
  config.validate();
  const int d = target.dim();

  PosteriorDraws draws;
  draws.chains = config.chains;
  draws.draws_per_chain = config.draws;
  draws.names = target.constrained_names();
  draws.samples.resize(config.chains * config.draws, d);
  draws.unconstrained.resize(config.chains * config.draws, d);
  draws.chain_id.resize(config.chains * config.draws);
  draws.divergent.assign(config.chains * config.draws, 0);
  draws.step_size.resize(config.chains);
  draws.inv_mass_diag.resize(config.chains, d);

  for (int chain = 0; chain < config.chains; ++chain) {
    ChainResult res = run_chain(target, config, chain);
    const int base = chain * config.draws;
    for (int s = 0; s < config.draws; ++s) {
      draws.unconstrained.row(base + s) = res.unconstrained.row(s);
      draws.samples.row(base + s) =
          target.to_constrained(res.unconstrained.row(s).transpose()).transpose();
      draws.chain_id[base + s] = chain;
      draws.divergent[base + s] = res.divergent[s];
    }
    draws.step_size[chain] = res.step_size;
    draws.inv_mass_diag.row(chain) = res.inv_mass.transpose();
  }
  return draws;
}

}  // namespace d2d
