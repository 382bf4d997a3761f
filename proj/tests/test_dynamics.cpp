#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/math.hpp"
#include "d2d/network.hpp"

using namespace d2d;

namespace {

CostSequence flat_costs(int days, const Eigen::VectorXd& row) {
  CostSequence s;
  s.od_id = "test";
  s.costs = row.transpose().replicate(days, 1);
  return s;
}

}  // namespace

TEST_CASE("value update is exponential smoothing") {
  ValuationState st;
  st.values.resize(1, 2);
  st.values << 4.0, 8.0;
  Eigen::VectorXd c(2);
  c << 10.0, 2.0;
  const ValuationState next = update_values(st, 0.25, c);
  CHECK(next.values(0, 0) == doctest::Approx(0.75 * 4.0 + 0.25 * 10.0).epsilon(1e-15));
  CHECK(next.values(0, 1) == doctest::Approx(0.75 * 8.0 + 0.25 * 2.0).epsilon(1e-15));
  CHECK(next.day == st.day + 1);
}

TEST_CASE("values converge geometrically under constant costs") {
  // V_t - c shrinks by exactly (1 - eta) per day.
  const double eta = 0.3;
  Eigen::VectorXd c(2);
  c << 5.0, 9.0;
  ValuationState st;
  st.values.resize(1, 2);
  st.values << 0.0, 0.0;
  double gap = (st.values.row(0).transpose() - c).cwiseAbs().maxCoeff();
  for (int t = 0; t < 40; ++t) {
    st = update_values(st, eta, c);
    const double next_gap = (st.values.row(0).transpose() - c).cwiseAbs().maxCoeff();
    CHECK(next_gap == doctest::Approx((1.0 - eta) * gap).epsilon(1e-10));
    gap = next_gap;
  }
  CHECK(gap < 1e-5);
}

TEST_CASE("choice probabilities put exactly rho on staying home") {
  Eigen::VectorXd v(2);
  v << 3.0, 3.0;
  const Eigen::VectorXd p = choice_probabilities(v, 2.0, 0.5);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p[2] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-14));

  Eigen::VectorXd w(3);
  w << 1.0, 2.0, 0.5;
  const Eigen::VectorXd q = choice_probabilities(w, 1.7, 0.0);
  CHECK(q[0] == 0.0);
  const Eigen::VectorXd s = softmax(-1.7 * w);
  for (int i = 0; i < 3; ++i) CHECK(q[i + 1] == doctest::Approx(s[i]).epsilon(1e-12));
  // Cheaper routes draw more traffic.
  CHECK(q[3] > q[1]);
  CHECK(q[1] > q[2]);

  CHECK_THROWS(choice_probabilities(w, -1.0, 0.0));
  CHECK_THROWS(choice_probabilities(w, 1.0, 1.0));
}

TEST_CASE("pooled simulation is reproducible and respects supports") {
  Eigen::VectorXd base(3);
  base << 10.0, 12.0, 11.0;
  const CostSequence costs = flat_costs(15, base);
  const BehaviorParams params{0.4, 0.3, 0.2};
  const Eigen::VectorXd init = Eigen::VectorXd::Zero(3);

  const ChoiceTrajectory a = simulate_pooled(params, init, costs, 50, 99);
  const ChoiceTrajectory b = simulate_pooled(params, init, costs, 50, 99);
  const ChoiceTrajectory c = simulate_pooled(params, init, costs, 50, 100);
  CHECK((a.choices.array() == b.choices.array()).all());
  CHECK(!(a.choices.array() == c.choices.array()).all());
  CHECK(a.num_commuters() == 50);
  CHECK(a.horizon() == 15);
  CHECK(a.choices.minCoeff() >= 0);
  CHECK(a.choices.maxCoeff() <= 3);
  CHECK_NOTHROW(a.validate());

  const BehaviorParams always{0.4, 0.3, 0.0};
  const ChoiceTrajectory d = simulate_pooled(always, init, costs, 40, 5);
  CHECK(d.choices.minCoeff() >= 1);  // rho = 0 never stays home
}

TEST_CASE("day-one pooled frequencies follow the initial distribution") {
  Eigen::VectorXd base(2);
  base << 1.0, 1.0;
  const CostSequence costs = flat_costs(2, base);
  Eigen::VectorXd init(2);
  init << 0.0, 1.0;
  const BehaviorParams params{0.5, 1.3, 0.25};
  const int n = 20000;
  const ChoiceTrajectory traj = simulate_pooled(params, init, costs, n, 7);

  Eigen::Vector3d freq = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) freq[traj.choices(i, 0)] += 1.0 / n;
  const Eigen::VectorXd p = choice_probabilities(init, 1.3, 0.25);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(freq[k] - p[k]) < 0.012);
}

TEST_CASE("hierarchical simulation draws commuters inside their supports") {
  Eigen::VectorXd base(2);
  base << 4.0, 6.0;
  const CostSequence costs = flat_costs(10, base);
  Hyperparams hyper;
  hyper.mu_eta = -1.0;
  hyper.sigma_eta = 0.4;
  hyper.mu_theta = 0.2;
  hyper.sigma_theta = 0.3;
  hyper.mu_rho = -2.0;
  hyper.sigma_rho = 0.5;
  const auto [draw, traj] = simulate_hierarchical(hyper, Eigen::VectorXd::Zero(2), costs, 30, 5);
  CHECK(draw.eta.size() == 30);
  CHECK(traj.num_commuters() == 30);
  CHECK(draw.eta.minCoeff() > 0.0);
  CHECK(draw.eta.maxCoeff() < 1.0);
  CHECK(draw.theta.minCoeff() > 0.0);
  CHECK(draw.rho.minCoeff() >= 0.0);
  CHECK(draw.rho.maxCoeff() < 1.0);

  // Collapsing the population scale pins individuals at the location.
  Hyperparams tight = hyper;
  tight.sigma_eta = tight.sigma_theta = tight.sigma_rho = 1e-12;
  const auto [d2, t2] = simulate_hierarchical(tight, Eigen::VectorXd::Zero(2), costs, 10, 5);
  (void)t2;
  for (int i = 0; i < 10; ++i) {
    CHECK(d2.eta[i] == doctest::Approx(logistic(-1.0)).epsilon(1e-9));
    CHECK(d2.theta[i] == doctest::Approx(std::exp(0.2)).epsilon(1e-9));
  }
}

TEST_CASE("aggregate smoothing step matches its closed form") {
  Eigen::VectorXd perceived(3), realized(3);
  perceived << 10.0, 11.0, 12.0;
  realized << 9.0, 13.0, 10.0;
  const auto [next, flows] = horowitz_step(perceived, realized, 0.3, 0.2, 100.0);
  for (int i = 0; i < 3; ++i)
    CHECK(next[i] == doctest::Approx(0.3 * realized[i] + 0.7 * perceived[i]).epsilon(1e-14));
  const Eigen::VectorXd share = softmax(-0.2 * next);
  for (int i = 0; i < 3; ++i)
    CHECK(flows[i] == doctest::Approx(100.0 * share[i]).epsilon(1e-12));
  CHECK(flows.sum() == doctest::Approx(100.0).epsilon(1e-9));
  CHECK_THROWS(horowitz_step(perceived, realized, 0.0, 0.2, 100.0));
  CHECK_THROWS(horowitz_step(perceived, realized, 0.3, -0.2, 100.0));
}

TEST_CASE("swap-move probabilities follow the cost gaps") {
  Eigen::VectorXd c(2);
  c << 10.0, 6.0;
  const SmithParams params;  // tau 0.1, epsilon 0.05
  const Eigen::MatrixXd move = smith_move_matrix(c, params);
  CHECK(move(0, 1) == doctest::Approx(0.4).epsilon(1e-14));   // 0.1 * (10 - 6)
  CHECK(move(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(move(1, 0) == doctest::Approx(0.05).epsilon(1e-14));  // uphill move
  CHECK(move(1, 1) == doctest::Approx(0.95).epsilon(1e-14));
  for (int i = 0; i < 2; ++i) CHECK(move.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));

  Eigen::VectorXd wild(3);
  wild << 30.0, 0.0, 0.0;  // 0.1 * 30 twice exceeds probability one
  CHECK_THROWS(smith_move_matrix(wild, params));
}

TEST_CASE("swap-step frequencies match the move matrix") {
  Eigen::VectorXd c(2);
  c << 10.0, 6.0;
  const SmithParams params;
  const int n = 40000;
  Eigen::VectorXi prev = Eigen::VectorXi::Constant(n, 1);
  RngStream rng(21, 0);
  const Eigen::VectorXi next = smith_step(prev, c, params, rng);
  int moved = 0;
  for (int i = 0; i < n; ++i) {
    REQUIRE(next[i] >= 1);
    REQUIRE(next[i] <= 2);
    moved += next[i] == 2;
  }
  CHECK(std::abs(moved / double(n) - 0.4) < 0.01);
}

TEST_CASE("swap trajectories start uniform") {
  Eigen::VectorXd base(3);
  base << 5.0, 5.0, 5.0;
  const CostSequence costs = flat_costs(6, base);
  const int n = 30000;
  const ChoiceTrajectory traj = simulate_smith(SmithParams{}, costs, n, 13);
  CHECK(traj.choices.minCoeff() >= 1);
  Eigen::Vector3d freq = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) freq[traj.choices(i, 0) - 1] += 1.0 / n;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(freq[k] - 1.0 / 3.0) < 0.012);

  const ChoiceTrajectory again = simulate_smith(SmithParams{}, costs, n, 13);
  CHECK((traj.choices.array() == again.choices.array()).all());
}

TEST_CASE("background environment produces bounded exogenous study costs") {
  const Network net = build_nd_network();
  BackgroundConfig cfg;
  cfg.days = 35;
  cfg.warmup = 15;
  const CostSequence costs = simulate_background(net, cfg, 3);
  CHECK(costs.horizon() == 20);
  CHECK(costs.num_routes() == 3);
  CHECK(costs.od_id == "5->11");
  CHECK(costs.bound > 0.0);
  CHECK_NOTHROW(costs.validate());
  CHECK(costs.costs.minCoeff() > 0.0);

  const CostSequence again = simulate_background(net, cfg, 3);
  CHECK((costs.costs.array() == again.costs.array()).all());
  const CostSequence other = simulate_background(net, cfg, 4);
  CHECK(!(costs.costs.array() == other.costs.array()).all());
}

TEST_CASE("count tallies follow the trajectory") {
  ChoiceTrajectory traj;
  traj.od_id = "t";
  traj.num_routes = 2;
  traj.choices.resize(3, 2);
  traj.choices << 0, 1, 2, 1, 1, 0;
  const CountSeries counts = anonymize(traj);
  CHECK(counts.od_id == "t");
  CHECK(counts.population == 3);
  REQUIRE(counts.horizon() == 2);
  REQUIRE(counts.num_routes() == 2);
  CHECK(counts.counts(0, 0) == 1);
  CHECK(counts.counts(0, 1) == 1);
  CHECK(counts.counts(0, 2) == 1);
  CHECK(counts.counts(1, 0) == 1);
  CHECK(counts.counts(1, 1) == 2);
  CHECK(counts.counts(1, 2) == 0);
  for (int t = 0; t < 2; ++t) CHECK(counts.counts.row(t).sum() == 3);
}
