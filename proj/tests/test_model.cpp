#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/math.hpp"
#include "d2d/model.hpp"
#include "d2d/network.hpp"

using namespace d2d;

namespace {

CostSequence wiggly_costs(int days, int routes) {
  CostSequence s;
  s.od_id = "test";
  s.costs.resize(days, routes);
  for (int t = 0; t < days; ++t)
    for (int j = 0; j < routes; ++j)
      s.costs(t, j) = 10.0 + 2.0 * std::sin(0.7 * t + 1.3 * j) + 0.5 * j;
  return s;
}

// Naive per-commuter likelihood written directly from the choice rule, with
// raw exp/log arithmetic and no shared code with the library implementation.
double naive_loglik(double eta, double theta, double rho, Eigen::VectorXd v,
                    const Eigen::MatrixXd& costs, const Eigen::MatrixXi& choices) {
  double ll = 0.0;
  const int m = int(costs.cols());
  for (int n = 0; n < choices.rows(); ++n) {
    Eigen::VectorXd values = v;
    for (int t = 0; t < choices.cols(); ++t) {
      double z = 0.0;
      for (int j = 0; j < m; ++j) z += std::exp(-theta * values[j]);
      const int pick = choices(n, t);
      double p;
      if (pick == 0)
        p = rho;
      else
        p = (1.0 - rho) * std::exp(-theta * values[pick - 1]) / z;
      ll += std::log(p);
      for (int j = 0; j < m; ++j) values[j] = (1.0 - eta) * values[j] + eta * costs(t, j);
    }
  }
  return ll;
}

}  // namespace

TEST_CASE("pooled likelihood matches a naive per-commuter recursion") {
  const CostSequence costs = wiggly_costs(8, 3);
  const BehaviorParams sim{0.45, 0.8, 0.2};
  const ChoiceTrajectory traj = simulate_pooled(sim, Eigen::VectorXd::Zero(3), costs, 6, 31);

  PooledParams p;
  p.eta = 0.37;
  p.theta = 1.21;
  p.rho = 0.15;
  const double got = loglik_pooled(p, traj, costs);
  const double want = naive_loglik(p.eta, p.theta, p.rho, Eigen::VectorXd::Zero(3), costs.costs,
                                   traj.choices);
  CHECK(got == doctest::Approx(want).epsilon(1e-10));

  // Offsets relative to route 1 set the day-one valuations.
  PooledParams q = p;
  Eigen::VectorXd d(2);
  d << 1.5, -0.75;
  q.delta = d;
  Eigen::VectorXd v1(3);
  v1 << 0.0, 1.5, -0.75;
  CHECK(loglik_pooled(q, traj, costs) ==
        doctest::Approx(naive_loglik(p.eta, p.theta, p.rho, v1, costs.costs, traj.choices))
            .epsilon(1e-10));

  // Explicit day-one base, used when no offsets are estimated.
  Eigen::VectorXd base(3);
  base << 9.0, 11.0, 12.0;
  CHECK(loglik_pooled(p, traj, costs, &base) ==
        doctest::Approx(naive_loglik(p.eta, p.theta, p.rho, base, costs.costs, traj.choices))
            .epsilon(1e-10));

  CHECK_THROWS(loglik_pooled(p, traj, wiggly_costs(9, 3)));
  CHECK_THROWS(loglik_pooled(p, traj, wiggly_costs(8, 4)));
}

TEST_CASE("single-day likelihood has closed-form values") {
  CostSequence costs;
  costs.od_id = "t";
  costs.costs.resize(1, 2);
  costs.costs << 5.0, 7.0;
  PooledParams p;
  p.eta = 0.5;
  p.theta = 2.0;
  p.rho = 0.5;

  ChoiceTrajectory stay;
  stay.od_id = "t";
  stay.num_routes = 2;
  stay.choices.resize(1, 1);
  stay.choices << 0;
  CHECK(loglik_pooled(p, stay, costs) == doctest::Approx(std::log(0.5)).epsilon(1e-14));

  ChoiceTrajectory ride = stay;
  ride.choices << 1;
  // Zero day-one valuations split the travel mass evenly between two routes.
  CHECK(loglik_pooled(p, ride, costs) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("counts likelihood is the trajectory likelihood plus a constant") {
  const CostSequence costs = wiggly_costs(7, 3);
  const ChoiceTrajectory traj =
      simulate_pooled(BehaviorParams{0.5, 1.0, 0.25}, Eigen::VectorXd::Zero(3), costs, 9, 77);
  const CountSeries counts = anonymize(traj);
  const double constant = multinomial_constant(counts);
  CHECK(constant > 0.0);

  std::vector<PooledParams> grid;
  for (double eta : {0.2, 0.6})
    for (double theta : {0.5, 1.7})
      for (double rho : {0.05, 0.3}) {
        PooledParams p;
        p.eta = eta;
        p.theta = theta;
        p.rho = rho;
        grid.push_back(p);
      }
  for (const PooledParams& p : grid) {
    const double diff = loglik_pooled_counts(p, counts, costs) - loglik_pooled(p, traj, costs);
    CHECK(diff == doctest::Approx(constant).epsilon(1e-10));
  }
}

TEST_CASE("multinomial coefficient matches hand counts") {
  CountSeries counts;
  counts.od_id = "t";
  counts.population = 2;
  counts.counts.resize(1, 3);
  counts.counts << 1, 1, 0;  // 2!/(1!1!0!) = 2
  CHECK(multinomial_constant(counts) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  counts.counts << 0, 2, 0;  // only one arrangement
  CHECK(multinomial_constant(counts) == doctest::Approx(0.0).epsilon(1e-14));

  CountSeries two;
  two.od_id = "t";
  two.population = 3;
  two.counts.resize(2, 3);
  two.counts << 1, 1, 1, 3, 0, 0;  // 3! and 1
  CHECK(multinomial_constant(two) == doctest::Approx(std::log(6.0)).epsilon(1e-13));
}

TEST_CASE("likelihood ignores the smoothing weight when values start at the steady state") {
  const int t_days = 12;
  Eigen::VectorXd c(3);
  c << 8.0, 10.0, 9.0;
  CostSequence costs;
  costs.od_id = "t";
  costs.costs = c.transpose().replicate(t_days, 1);
  const ChoiceTrajectory traj =
      simulate_pooled(BehaviorParams{0.5, 0.6, 0.1}, c, costs, 5, 3);

  PooledParams p;
  p.theta = 0.6;
  p.rho = 0.1;
  p.eta = 0.123;
  const double ref = loglik_pooled(p, traj, costs, &c);
  for (double eta : {0.02, 0.35, 0.71, 0.98}) {
    p.eta = eta;
    CHECK(loglik_pooled(p, traj, costs, &c) == doctest::Approx(ref).epsilon(1e-12));
  }

  // A uniform offset decays uniformly, and uniform offsets never move the
  // choice probabilities, so the invariance survives shifted starts.
  const Eigen::VectorXd shifted = (c.array() + 3.7).matrix();
  p.eta = 0.123;
  const double ref2 = loglik_pooled(p, traj, costs, &shifted);
  for (double eta : {0.02, 0.35, 0.71, 0.98}) {
    p.eta = eta;
    CHECK(loglik_pooled(p, traj, costs, &shifted) == doctest::Approx(ref2).epsilon(1e-12));
  }
}

TEST_CASE("heterogeneous likelihood sums naive per-commuter terms") {
  const CostSequence costs = wiggly_costs(6, 2);
  Hyperparams hyper;
  hyper.mu_eta = -0.5;
  hyper.sigma_eta = 0.3;
  hyper.mu_theta = 0.0;
  hyper.sigma_theta = 0.4;
  hyper.mu_rho = -1.5;
  hyper.sigma_rho = 0.4;
  const auto [draw, traj] = simulate_hierarchical(hyper, Eigen::VectorXd::Zero(2), costs, 4, 11);

  double want = 0.0;
  for (int i = 0; i < 4; ++i) {
    Eigen::MatrixXi row = traj.choices.row(i);
    want += naive_loglik(draw.eta[i], draw.theta[i], draw.rho[i], Eigen::VectorXd::Zero(2),
                         costs.costs, row);
  }
  CHECK(loglik_hier(draw, traj, costs) == doctest::Approx(want).epsilon(1e-10));

  HierDraw ragged = draw;
  ragged.theta.conservativeResize(3);
  CHECK_THROWS(loglik_hier(ragged, traj, costs));
}

TEST_CASE("approximate counts likelihood uses the mean daily distribution") {
  const CostSequence costs = wiggly_costs(5, 2);
  HierDraw draw;
  draw.eta.resize(3);
  draw.theta.resize(3);
  draw.rho.resize(3);
  draw.eta << 0.3, 0.5, 0.7;
  draw.theta << 0.8, 1.0, 1.4;
  draw.rho << 0.1, 0.2, 0.05;
  const ChoiceTrajectory traj =
      simulate_from_individual_params(draw, Eigen::VectorXd::Zero(2), costs, 9);
  const CountSeries counts = anonymize(traj);

  // Independent recomputation: evolve each commuter's values, average the
  // daily distributions, then score the tallies as one multinomial.
  double want = multinomial_constant(counts);
  std::vector<Eigen::VectorXd> values(3, Eigen::VectorXd::Zero(2));
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd mean_p = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < 3; ++i) {
      double z = 0.0;
      for (int j = 0; j < 2; ++j) z += std::exp(-draw.theta[i] * values[i][j]);
      mean_p[0] += draw.rho[i];
      for (int j = 0; j < 2; ++j)
        mean_p[j + 1] += (1.0 - draw.rho[i]) * std::exp(-draw.theta[i] * values[i][j]) / z;
    }
    mean_p /= 3.0;
    for (int a = 0; a < 3; ++a)
      if (counts.counts(t, a) > 0) want += counts.counts(t, a) * std::log(mean_p[a]);
    for (int i = 0; i < 3; ++i)
      values[i] = (1.0 - draw.eta[i]) * values[i] +
                  draw.eta[i] * costs.costs.row(t).transpose();
  }
  CHECK(loglik_hier_counts_approx(draw, counts, costs) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("count-sum moments match the exact distribution") {
  std::vector<Eigen::VectorXd> probs;
  Eigen::VectorXd p1(3), p2(3);
  p1 << 0.5, 0.3, 0.2;
  p2 << 0.2, 0.5, 0.3;
  probs = {p1, p2};

  const auto [mean, cov] = pmd_moments(probs);
  CHECK(mean[0] == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(mean[1] == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(mean[2] == doctest::Approx(0.5).epsilon(1e-14));
  const Eigen::MatrixXd want_cov = Eigen::MatrixXd(p1.asDiagonal()) - p1 * p1.transpose() +
                                   Eigen::MatrixXd(p2.asDiagonal()) - p2 * p2.transpose();
  CHECK((cov - want_cov).cwiseAbs().maxCoeff() < 1e-14);

  // Enumerate the exact distribution of the two-commuter tally.
  double total = 0.0;
  Eigen::VectorXd pmf_mean = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd pmf_second = Eigen::MatrixXd::Zero(3, 3);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      Eigen::VectorXi outcome = Eigen::VectorXi::Zero(3);
      outcome[a] += 1;
      outcome[b] += 1;
      if (b < a) continue;  // visit each tally once
      const double mass = pmd_exact_pmf(probs, outcome);
      const double direct = a == b ? p1[a] * p2[a] : p1[a] * p2[b] + p1[b] * p2[a];
      CHECK(mass == doctest::Approx(direct).epsilon(1e-12));
      total += mass;
      const Eigen::VectorXd o = outcome.cast<double>();
      pmf_mean += mass * o;
      pmf_second += mass * o * o.transpose();
    }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((pmf_mean - mean).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd pmf_cov = pmf_second - pmf_mean * pmf_mean.transpose();
  CHECK((pmf_cov - cov).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-12);

  std::vector<Eigen::VectorXd> crowd(11, p1);
  Eigen::VectorXi outcome(3);
  outcome << 11, 0, 0;
  CHECK_THROWS(pmd_exact_pmf(crowd, outcome));
  outcome << 1, 0, 0;
  CHECK_THROWS(pmd_exact_pmf(probs, outcome));  // does not allocate everyone
}

TEST_CASE("pooled prior density recomputes from first principles") {
  PriorSpec prior;
  PooledParams p;
  p.eta = 0.42;
  p.theta = 1.9;
  p.rho = 0.08;
  Eigen::VectorXd d(1);
  d << 2.5;
  p.delta = d;

  auto norm = [](double x, double mu, double sigma) {
    return -0.5 * std::log(2.0 * M_PI) - std::log(sigma) -
           0.5 * (x - mu) * (x - mu) / (sigma * sigma);
  };
  const double want = norm(std::log(p.eta / (1.0 - p.eta)), 0.0, 1.5) -
                      std::log(p.eta * (1.0 - p.eta)) + norm(std::log(p.theta), 0.0, 1.0) -
                      std::log(p.theta) + norm(std::log(p.rho / (1.0 - p.rho)), -2.0, 1.0) -
                      std::log(p.rho * (1.0 - p.rho)) + norm(2.5, 0.0, 5.0);
  CHECK(log_prior_pooled(p, prior) == doctest::Approx(want).epsilon(1e-12));

  // Pinned rho contributes nothing.
  const double without = want - norm(std::log(p.rho / (1.0 - p.rho)), -2.0, 1.0) +
                         std::log(p.rho * (1.0 - p.rho));
  CHECK(log_prior_pooled(p, prior, false) == doctest::Approx(without).epsilon(1e-12));
}

TEST_CASE("hierarchical prior separates hyper and individual terms") {
  PriorSpec prior;
  HierParams params;
  params.hyper.mu_eta = -1.2;
  params.hyper.sigma_eta = 0.4;
  params.hyper.mu_theta = 0.3;
  params.hyper.sigma_theta = 0.6;
  params.hyper.mu_rho = -2.2;
  params.hyper.sigma_rho = 0.9;
  params.z.resize(2, 3);
  params.z << 0.5, -1.0, 0.2, 1.5, 0.3, -0.7;

  auto norm = [](double x, double mu, double sigma) {
    return -0.5 * std::log(2.0 * M_PI) - std::log(sigma) -
           0.5 * (x - mu) * (x - mu) / (sigma * sigma);
  };
  double hyper_lp = norm(-1.2, prior.mu_eta.mu, prior.mu_eta.sigma) +
                    norm(0.3, prior.mu_theta.mu, prior.mu_theta.sigma) +
                    norm(-2.2, prior.mu_rho.mu, prior.mu_rho.sigma) +
                    std::log(2.0) + norm(0.4, 0.0, prior.sigma_eta.sigma) +
                    std::log(2.0) + norm(0.6, 0.0, prior.sigma_theta.sigma) +
                    std::log(2.0) + norm(0.9, 0.0, prior.sigma_rho.sigma);
  double z_lp = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) z_lp += norm(params.z(n, c), 0.0, 1.0);
  CHECK(log_prior_hier(params, prior, false) == doctest::Approx(hyper_lp + z_lp).epsilon(1e-12));

  // Centered form scores the individual parameters against the population law.
  const double mu[3] = {-1.2, 0.3, -2.2};
  const double sd[3] = {0.4, 0.6, 0.9};
  double w_lp = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      w_lp += norm(mu[c] + sd[c] * params.z(n, c), mu[c], sd[c]);
  CHECK(log_prior_hier(params, prior, true) == doctest::Approx(hyper_lp + w_lp).epsilon(1e-12));
}

TEST_CASE("pooled transform round-trips and reports its volume change") {
  PooledTransform tr;
  tr.num_delta = 2;
  const ParamLayout layout = tr.layout();
  REQUIRE(layout.dim() == 5);
  CHECK(layout.names[0] == "eta");
  CHECK(layout.names[1] == "theta");
  CHECK(layout.names[2] == "rho");
  CHECK(layout.names[3] == "delta_2");
  CHECK(layout.names[4] == "delta_3");

  Eigen::VectorXd u(5);
  u << -0.4, 0.7, -2.1, 1.5, -0.3;
  double lj = 0.0;
  const PooledParams p = tr.constrain(u, &lj);
  CHECK(p.eta == doctest::Approx(logistic(-0.4)).epsilon(1e-14));
  CHECK(p.theta == doctest::Approx(std::exp(0.7)).epsilon(1e-14));
  CHECK(p.rho == doctest::Approx(logistic(-2.1)).epsilon(1e-14));
  REQUIRE(p.delta.has_value());
  CHECK((*p.delta)[0] == 1.5);
  CHECK((*p.delta)[1] == -0.3);
  const double want_lj = std::log(p.eta * (1.0 - p.eta)) + std::log(p.theta) +
                         std::log(p.rho * (1.0 - p.rho));
  CHECK(lj == doctest::Approx(want_lj).epsilon(1e-10));

  const UnconstrainedVector back = tr.unconstrain(p);
  CHECK((back.values - u).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(back.log_jacobian == doctest::Approx(lj).epsilon(1e-12));

  PooledTransform pinned;
  pinned.sample_rho = false;
  pinned.fixed_rho = 0.07;
  CHECK(pinned.dim() == 2);
  CHECK(pinned.layout().names == std::vector<std::string>{"eta", "theta"});
  Eigen::VectorXd u2(2);
  u2 << 0.1, -0.2;
  const PooledParams q = pinned.constrain(u2);
  CHECK(q.rho == 0.07);
  CHECK_THROWS(tr.constrain(u2));
  PooledParams no_delta;
  CHECK_THROWS(tr.unconstrain(no_delta));
}

TEST_CASE("hierarchical transform round-trips in both parameterizations") {
  HierTransform tr;
  tr.num_commuters = 2;
  REQUIRE(tr.dim() == 12);
  const ParamLayout layout = tr.layout();
  CHECK(layout.names[0] == "mu_eta");
  CHECK(layout.names[5] == "sigma_rho");
  CHECK(layout.names[6] == "z_eta_1");
  CHECK(layout.names[7] == "z_eta_2");
  CHECK(layout.names[8] == "z_theta_1");
  CHECK(layout.names[11] == "z_rho_2");

  Eigen::VectorXd u(12);
  u << -1.0, std::log(0.5), 0.2, std::log(0.8), -2.0, std::log(1.1), 0.3, -0.9, 1.2, 0.1, -0.4,
      0.6;
  double lj = 0.0;
  const HierParams p = tr.constrain(u, &lj);
  CHECK(p.hyper.sigma_eta == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p.z(0, 0) == 0.3);
  CHECK(p.z(1, 0) == -0.9);
  CHECK(p.z(0, 1) == 1.2);
  CHECK(lj == doctest::Approx(std::log(0.5) + std::log(0.8) + std::log(1.1)).epsilon(1e-12));
  const UnconstrainedVector back = tr.unconstrain(p);
  CHECK((back.values - u).cwiseAbs().maxCoeff() < 1e-12);

  HierTransform centered = tr;
  centered.centered = true;
  CHECK(centered.layout().names[6] == "logit_eta_1");
  CHECK(centered.layout().names[8] == "log_theta_1");
  CHECK(centered.layout().names[10] == "logit_rho_1");
  const HierParams pc = centered.constrain(u, &lj);
  // Centered coordinates are the transformed individual parameters themselves.
  CHECK(pc.z(0, 0) == doctest::Approx((u[6] - u[0]) / 0.5).epsilon(1e-12));
  CHECK(pc.z(1, 2) == doctest::Approx((u[11] - u[4]) / 1.1).epsilon(1e-12));
  const UnconstrainedVector back_c = centered.unconstrain(pc);
  CHECK((back_c.values - u).cwiseAbs().maxCoeff() < 1e-11);

  // Each parameterization reconstructs individuals from its own coordinates:
  // non-centered reads u[6..] as standardized offsets, centered as the
  // transformed individual parameters themselves.
  const HierDraw a = p.individual();
  const HierDraw b = pc.individual();
  CHECK(a.eta[0] == doctest::Approx(logistic(u[0] + 0.5 * u[6])).epsilon(1e-12));
  CHECK(a.theta[0] == doctest::Approx(std::exp(u[2] + 0.8 * u[8])).epsilon(1e-12));
  CHECK(a.rho[1] == doctest::Approx(logistic(u[4] + 1.1 * u[11])).epsilon(1e-12));
  CHECK(b.eta[0] == doctest::Approx(logistic(u[6])).epsilon(1e-12));
  CHECK(b.theta[0] == doctest::Approx(std::exp(u[8])).epsilon(1e-12));
  CHECK(b.rho[1] == doctest::Approx(logistic(u[11])).epsilon(1e-12));
}

TEST_CASE("initial values come from offsets, then base, then zeros") {
  PooledParams p;
  Eigen::VectorXd d(2);
  d << 1.0, -2.0;
  p.delta = d;
  const Eigen::VectorXd v = initial_values_from(p, 3);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 1.0);
  CHECK(v[2] == -2.0);

  PooledParams plain;
  Eigen::VectorXd base(3);
  base << 5.0, 6.0, 7.0;
  CHECK((initial_values_from(plain, 3, &base) - base).isZero(0.0));
  CHECK(initial_values_from(plain, 3).isZero(0.0));

  CHECK_THROWS(initial_values_from(p, 4));
  Eigen::VectorXd short_base(2);
  short_base << 1.0, 2.0;
  CHECK_THROWS(initial_values_from(plain, 3, &short_base));
}
