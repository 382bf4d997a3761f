#include "d2d/dynamics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "d2d/math.hpp"

namespace d2d {

void ChoiceTrajectory::validate() const {
  if (num_routes < 2) throw std::invalid_argument("trajectory: need at least two routes");
  if (choices.rows() < 1 || choices.cols() < 1)
    throw std::invalid_argument("trajectory: need at least one commuter and one day");
  for (int n = 0; n < choices.rows(); ++n)
    for (int t = 0; t < choices.cols(); ++t)
      if (choices(n, t) < 0 || choices(n, t) > num_routes)
        throw std::invalid_argument("trajectory: choice outside 0.." + std::to_string(num_routes));
}

void CountSeries::validate() const {
  if (counts.cols() < 3) throw std::invalid_argument("count series: need at least two routes");
  if (counts.rows() < 1) throw std::invalid_argument("count series: need at least one day");
  for (int t = 0; t < counts.rows(); ++t) {
    int sum = 0;
    for (int i = 0; i < counts.cols(); ++i) {
      if (counts(t, i) < 0) throw std::invalid_argument("count series: negative count");
      sum += counts(t, i);
    }
    if (sum != population)
      throw std::invalid_argument("count series: day " + std::to_string(t + 1) +
                                  " sums to " + std::to_string(sum) + ", expected population " +
                                  std::to_string(population));
  }
}

ValuationState update_values(const ValuationState& state, double eta,
                             const Eigen::VectorXd& realized_costs) {
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("update values: eta must lie in (0,1)");
  if (realized_costs.size() != state.values.cols())
    throw std::invalid_argument("update values: cost vector must match route count");
  ValuationState next;
  next.values = (1.0 - eta) * state.values;
  next.values.rowwise() += eta * realized_costs.transpose();
  next.day = state.day + 1;
  return next;
}

Eigen::VectorXd choice_probabilities(const Eigen::VectorXd& values, double theta, double rho) {
  if (!(theta > 0.0)) throw std::invalid_argument("choice probabilities: theta must be positive");
  if (!(rho >= 0.0 && rho < 1.0))
    throw std::invalid_argument("choice probabilities: rho must lie in [0,1)");
  const int m = int(values.size());
  if (m < 2) throw std::invalid_argument("choice probabilities: need at least two routes");
  const Eigen::VectorXd s = softmax(-theta * values);
  Eigen::VectorXd p(m + 1);
  p[0] = rho;
  p.tail(m) = (1.0 - rho) * s;
  return p;
}

ChoiceTrajectory simulate_pooled(const BehaviorParams& params, const Eigen::VectorXd& initial_values,
                                 const CostSequence& costs, int num_commuters, std::uint64_t seed) {
  costs.validate();
  if (num_commuters < 1) throw std::invalid_argument("simulate: need at least one commuter");
  const int t_days = costs.horizon();
  const int m = costs.num_routes();
  if (initial_values.size() != m)
    throw std::invalid_argument("simulate: initial values must match route count");

  RngStream root(seed);
  RngStream choice_root = root.substream(0);
  std::vector<RngStream> streams;
  streams.reserve(num_commuters);
  for (int n = 0; n < num_commuters; ++n) streams.push_back(choice_root.substream(n));

  ChoiceTrajectory traj;
  traj.od_id = costs.od_id;
  traj.num_routes = m;
  traj.choices.resize(num_commuters, t_days);

  Eigen::VectorXd values = initial_values;
  for (int t = 0; t < t_days; ++t) {
    const Eigen::VectorXd p = choice_probabilities(values, params.theta, params.rho);
    for (int n = 0; n < num_commuters; ++n)
      traj.choices(n, t) = streams[n].categorical(p.data(), m + 1);
    // Realized costs update everyone's values, travelers and stayers alike.
    values = (1.0 - params.eta) * values + params.eta * costs.costs.row(t).transpose();
  }
  return traj;
}

std::pair<HierDraw, ChoiceTrajectory> simulate_hierarchical(const Hyperparams& hyper,
                                                            const Eigen::VectorXd& initial_values,
                                                            const CostSequence& costs, int num_commuters,
                                                            std::uint64_t seed) {
  if (num_commuters < 1) throw std::invalid_argument("simulate: need at least one commuter");
  RngStream root(seed);
  RngStream param_stream = root.substream(1);
  HierDraw draw;
  draw.eta.resize(num_commuters);
  draw.theta.resize(num_commuters);
  draw.rho.resize(num_commuters);
  for (int n = 0; n < num_commuters; ++n) {
    draw.eta[n] = logistic(param_stream.normal(hyper.mu_eta, hyper.sigma_eta));
    draw.theta[n] = std::exp(param_stream.normal(hyper.mu_theta, hyper.sigma_theta));
    draw.rho[n] = logistic(param_stream.normal(hyper.mu_rho, hyper.sigma_rho));
  }
  return {draw, simulate_from_individual_params(draw, initial_values, costs, seed)};
}

ChoiceTrajectory simulate_from_individual_params(const HierDraw& params,
                                                 const Eigen::VectorXd& initial_values,
                                                 const CostSequence& costs, std::uint64_t seed) {
  costs.validate();
  const int num_commuters = int(params.eta.size());
  if (num_commuters < 1) throw std::invalid_argument("simulate: need at least one commuter");
  if (params.theta.size() != num_commuters || params.rho.size() != num_commuters)
    throw std::invalid_argument("simulate: ragged individual parameter vectors");
  const int t_days = costs.horizon();
  const int m = costs.num_routes();
  if (initial_values.size() != m)
    throw std::invalid_argument("simulate: initial values must match route count");

  RngStream root(seed);
  RngStream choice_root = root.substream(0);

  ChoiceTrajectory traj;
  traj.od_id = costs.od_id;
  traj.num_routes = m;
  traj.choices.resize(num_commuters, t_days);

  for (int n = 0; n < num_commuters; ++n) {
    RngStream stream = choice_root.substream(n);
    Eigen::VectorXd v = initial_values;
    for (int t = 0; t < t_days; ++t) {
      const Eigen::VectorXd p = choice_probabilities(v, params.theta[n], params.rho[n]);
      traj.choices(n, t) = stream.categorical(p.data(), m + 1);
      v = (1.0 - params.eta[n]) * v + params.eta[n] * costs.costs.row(t).transpose();
    }
  }
  return traj;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> horowitz_step(const Eigen::VectorXd& perceived,
                                                          const Eigen::VectorXd& realized_costs,
                                                          double eta, double theta, double demand) {
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("horowitz step: eta must lie in (0,1)");
  if (!(theta > 0.0)) throw std::invalid_argument("horowitz step: theta must be positive");
  if (perceived.size() != realized_costs.size())
    throw std::invalid_argument("horowitz step: size mismatch");
  Eigen::VectorXd next = eta * realized_costs + (1.0 - eta) * perceived;
  Eigen::VectorXd flows = demand * softmax(-theta * next);
  return {next, flows};
}

Eigen::MatrixXd smith_move_matrix(const Eigen::VectorXd& previous_costs,
                                  const SmithParams& params) {
  const int m = int(previous_costs.size());
  if (m < 2) throw std::invalid_argument("smith step: need at least two routes");
  if (!(params.tau > 0.0) || !(params.epsilon >= 0.0))
    throw std::invalid_argument("smith step: tau must be positive and epsilon nonnegative");

  Eigen::MatrixXd move(m, m);
  for (int i = 0; i < m; ++i) {
    double away = 0.0;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      const double q = previous_costs[j] < previous_costs[i]
                           ? params.tau * (previous_costs[i] - previous_costs[j])
                           : params.epsilon;
      move(i, j) = q;
      away += q;
    }
    if (away > 1.0)
      throw std::invalid_argument("smith step: switch probabilities on route " +
                                  std::to_string(i + 1) + " sum past 1");
    move(i, i) = 1.0 - away;
  }
  return move;
}

Eigen::VectorXi smith_step(const Eigen::VectorXi& previous_choices,
                           const Eigen::VectorXd& previous_costs, const SmithParams& params,
                           RngStream& rng) {
  const int m = int(previous_costs.size());
  // Switch distribution depends only on the current route; build all M rows once.
  const Eigen::MatrixXd move = smith_move_matrix(previous_costs, params);

  Eigen::VectorXi next(previous_choices.size());
  for (int n = 0; n < previous_choices.size(); ++n) {
    const int i = previous_choices[n] - 1;
    if (i < 0 || i >= m) throw std::invalid_argument("smith step: choices must lie in 1..M");
    next[n] = 1 + rng.categorical(move.row(i).data(), m);
  }
  return next;
}

ChoiceTrajectory simulate_smith(const SmithParams& params, const CostSequence& costs,
                                int num_commuters, std::uint64_t seed) {
  costs.validate();
  if (num_commuters < 1) throw std::invalid_argument("simulate: need at least one commuter");
  const int t_days = costs.horizon();
  const int m = costs.num_routes();

  ChoiceTrajectory traj;
  traj.od_id = costs.od_id;
  traj.num_routes = m;
  traj.choices.resize(num_commuters, t_days);

  RngStream root(seed);
  Eigen::VectorXi current(num_commuters);
  {
    RngStream day0 = root.substream(0);
    const Eigen::VectorXd uniform_routes = Eigen::VectorXd::Constant(m, 1.0 / double(m));
    for (int n = 0; n < num_commuters; ++n)
      current[n] = 1 + day0.categorical(uniform_routes.data(), m);
  }
  traj.choices.col(0) = current;
  for (int t = 1; t < t_days; ++t) {
    RngStream day_stream = root.substream(t);
    current = smith_step(current, costs.costs.row(t - 1).transpose(), params, day_stream);
    traj.choices.col(t) = current;
  }
  return traj;
}

CostSequence simulate_background(const Network& net, const BackgroundConfig& config,
                                 std::uint64_t seed) {
  net.validate();
  if (config.days <= config.warmup)
    throw std::invalid_argument("background: days must exceed warmup");
  if (config.warmup < 0) throw std::invalid_argument("background: warmup must be nonnegative");
  if (!(config.noise_sd >= 0.0)) throw std::invalid_argument("background: noise sd must be nonnegative");
  const int n_od = int(net.od_pairs.size());
  const int study = config.study_od < 0 ? n_od - 1 : config.study_od;
  if (study < 0 || study >= n_od) throw std::invalid_argument("background: study od out of range");

  const Eigen::VectorXd zero_flows = Eigen::VectorXd::Zero(int(net.links.size()));
  std::vector<Eigen::VectorXd> perceived(n_od);
  for (int o = 0; o < n_od; ++o) perceived[o] = path_costs(net, o, zero_flows, config.bpr);

  RngStream noise(seed, /*stream=*/0);

  CostSequence out;
  out.od_id = net.od_pairs[study].id;
  out.costs.resize(config.days - config.warmup, int(net.od_pairs[study].paths.size()));

  for (int day = 0; day < config.days; ++day) {
    Eigen::VectorXd link_flows = Eigen::VectorXd::Zero(int(net.links.size()));
    for (int o = 0; o < n_od; ++o) {
      if (o == study) continue;  // study demand never loads the network
      Eigen::VectorXd noisy = perceived[o];
      for (int p = 0; p < noisy.size(); ++p) noisy[p] += config.noise_sd * noise.normal();
      const Eigen::VectorXd flows = net.od_pairs[o].demand * softmax(-config.theta * noisy);
      for (int p = 0; p < flows.size(); ++p)
        for (int l : net.od_pairs[o].paths[p]) link_flows[l] += flows[p];
    }
    for (int o = 0; o < n_od; ++o) {
      const Eigen::VectorXd realized = path_costs(net, o, link_flows, config.bpr);
      if (o == study && day >= config.warmup)
        out.costs.row(day - config.warmup) = realized.transpose();
      if (o != study)
        perceived[o] = config.eta * realized + (1.0 - config.eta) * perceived[o];
    }
  }

  // Hard bound: every link cost at worst carries the whole background demand.
  double total_demand = 0.0;
  for (int o = 0; o < n_od; ++o)
    if (o != study) total_demand += net.od_pairs[o].demand;
  double bound = 0.0;
  for (const std::vector<int>& path : net.od_pairs[study].paths) {
    double c = 0.0;
    for (int l : path) c += link_cost(net.links[l], total_demand, config.bpr);
    bound = std::max(bound, c);
  }
  out.bound = bound;
  out.validate();
  return out;
}

CountSeries anonymize(const ChoiceTrajectory& trajectory) {
  trajectory.validate();
  CountSeries series;
  series.od_id = trajectory.od_id;
  series.population = trajectory.num_commuters();
  series.counts = Eigen::MatrixXi::Zero(trajectory.horizon(), trajectory.num_routes + 1);
  for (int n = 0; n < trajectory.num_commuters(); ++n)
    for (int t = 0; t < trajectory.horizon(); ++t) series.counts(t, trajectory.choices(n, t)) += 1;
  return series;
}

}  // namespace d2d
