#include "d2d/network.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace d2d {

void Network::validate() const {
  std::set<int> node_set(nodes.begin(), nodes.end());
  if (node_set.size() != nodes.size()) throw std::invalid_argument("network: duplicate node ids");
  for (std::size_t l = 0; l < links.size(); ++l) {
    if (!node_set.count(links[l].tail) || !node_set.count(links[l].head))
      throw std::invalid_argument("network: link " + std::to_string(l) + " has unknown endpoint");
    if (links[l].free_flow_time <= 0.0 || links[l].capacity <= 0.0)
      throw std::invalid_argument("network: link " + std::to_string(l) +
                                  " needs positive free-flow time and capacity");
  }
  for (const OdPair& od : od_pairs) {
    if (!node_set.count(od.origin) || !node_set.count(od.destination))
      throw std::invalid_argument("network: od pair " + od.id + " has unknown endpoint");
    if (od.demand < 0.0) throw std::invalid_argument("network: od pair " + od.id + " has negative demand");
    for (const std::vector<int>& path : od.paths) {
      if (path.empty()) throw std::invalid_argument("network: od pair " + od.id + " has an empty path");
      int at = od.origin;
      for (int l : path) {
        if (l < 0 || std::size_t(l) >= links.size())
          throw std::invalid_argument("network: od pair " + od.id + " references unknown link " +
                                      std::to_string(l));
        if (links[l].tail != at)
          throw std::invalid_argument("network: od pair " + od.id + " has a disconnected path");
        at = links[l].head;
      }
      if (at != od.destination)
        throw std::invalid_argument("network: od pair " + od.id + " path does not reach destination");
    }
  }
}

void CostSequence::validate() const {
  if (costs.rows() < 1) throw std::invalid_argument("cost sequence: need at least one day");
  if (costs.cols() < 2) throw std::invalid_argument("cost sequence: need at least two routes");
  for (int t = 0; t < costs.rows(); ++t)
    for (int i = 0; i < costs.cols(); ++i) {
      const double c = costs(t, i);
      if (!(c >= 0.0) || !std::isfinite(c))
        throw std::invalid_argument("cost sequence: costs must be finite and nonnegative");
      if (bound > 0.0 && c > bound)
        throw std::invalid_argument("cost sequence: cost exceeds declared bound");
    }
}

CostSequence slice_days(const CostSequence& costs, int first_day, int num_days) {
  if (first_day < 0 || num_days < 1 || first_day + num_days > costs.horizon())
    throw std::invalid_argument("slice_days: window outside the recorded horizon");
  CostSequence out;
  out.od_id = costs.od_id;
  out.bound = costs.bound;
  out.costs = costs.costs.middleRows(first_day, num_days);
  return out;
}

Network build_nd_network() {
  Network net;
  net.nodes = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  net.links = {
      {1, 5, 7.0, 900.0},    // 0
      {1, 12, 9.0, 500.0},   // 1
      {4, 5, 9.0, 300.0},    // 2
      {4, 9, 12.0, 600.0},   // 3
      {5, 6, 3.0, 420.0},    // 4
      {5, 9, 9.0, 410.0},    // 5
      {6, 7, 5.0, 200.0},    // 6
      {6, 10, 6.0, 550.0},   // 7
      {7, 8, 5.0, 200.0},    // 8
      {7, 11, 9.0, 330.0},   // 9
      {8, 2, 9.0, 300.0},    // 10
      {9, 10, 10.0, 300.0},  // 11
      {9, 13, 9.0, 380.0},   // 12
      {10, 11, 6.0, 820.0},  // 13
      {11, 2, 9.0, 800.0},   // 14
      {11, 3, 8.0, 650.0},   // 15
      {12, 6, 7.0, 300.0},   // 16
      {12, 8, 14.0, 180.0},  // 17
      {13, 3, 11.0, 380.0},  // 18
      {5, 7, 6.0, 330.0},    // 19
      {9, 11, 7.0, 330.0},   // 20
  };
  // Every link on a study route also carries background traffic, so all three
  // study path costs fluctuate with the ambient flows instead of sitting at
  // free-flow, and the cheapest route changes from day to day.
  net.od_pairs = {
      {"1->2", 1, 2, 400.0, {{0, 19, 9, 14}, {0, 4, 6, 8, 10}, {1, 17, 10}}},
      {"1->3", 1, 3, 800.0, {{0, 5, 12, 18}, {0, 4, 7, 13, 15}, {1, 16, 7, 13, 15}}},
      {"4->2", 4, 2, 600.0, {{3, 20, 14}, {2, 19, 9, 14}, {3, 11, 13, 14}}},
      {"4->3", 4, 3, 200.0, {{3, 12, 18}, {3, 20, 15}, {2, 5, 11, 13, 15}}},
      {"5->11", 5, 11, 10.0, {{19, 9}, {5, 20}, {4, 7, 13}}},
  };
  net.validate();
  return net;
}

double link_cost(const Link& link, double flow, const BprParams& bpr) {
  if (flow < 0.0) throw std::invalid_argument("link cost: negative flow");
  return link.free_flow_time * (1.0 + bpr.a * std::pow(flow / link.capacity, bpr.b));
}

Eigen::VectorXd path_costs(const Network& net, int od_index, const Eigen::VectorXd& link_flows,
                           const BprParams& bpr) {
  if (od_index < 0 || std::size_t(od_index) >= net.od_pairs.size())
    throw std::invalid_argument("path costs: od index out of range");
  if (std::size_t(link_flows.size()) != net.links.size())
    throw std::invalid_argument("path costs: flow vector must cover every link");
  const OdPair& od = net.od_pairs[od_index];
  Eigen::VectorXd out(od.paths.size());
  for (std::size_t p = 0; p < od.paths.size(); ++p) {
    double c = 0.0;
    for (int l : od.paths[p]) {
      if (l < 0 || std::size_t(l) >= net.links.size())
        throw std::invalid_argument("path costs: unknown link id " + std::to_string(l));
      c += link_cost(net.links[l], link_flows[l], bpr);
    }
    out[int(p)] = c;
  }
  return out;
}

RichnessReport check_richness(const CostSequence& costs, const Eigen::VectorXd& initial_values,
                              double difference_tol) {
  costs.validate();
  const int t_days = costs.horizon();
  const int m = costs.num_routes();
  if (initial_values.size() != m)
    throw std::invalid_argument("richness: initial values must match route count");

  const Eigen::MatrixXd& c = costs.costs;
  RichnessReport rep;
  for (int t = 0; t < t_days && !rep.dynamic_richness; ++t)
    for (int i = 0; i < m && !rep.dynamic_richness; ++i)
      for (int j = 0; j < m; ++j) {
        if (i == j) continue;
        const double dc = c(t, i) - c(t, j);
        const double dv = initial_values[i] - initial_values[j];
        if (std::abs(dc - dv) > difference_tol) {
          rep.dynamic_richness = true;
          rep.witness = {i + 1, j + 1, t + 1};
          break;
        }
      }

  // Difference vectors relative to route 1, one per day.
  Eigen::MatrixXd diff(t_days, m - 1);
  for (int t = 0; t < t_days; ++t)
    for (int j = 1; j < m; ++j) diff(t, j - 1) = c(t, j) - c(t, 0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(diff);
  const Eigen::VectorXd sv = svd.singularValues();
  int rank = 0;
  if (sv.size() > 0) {
    const double cutoff = 1e-8 * sv[0];
    for (int k = 0; k < sv.size(); ++k)
      if (sv[k] > cutoff && sv[k] > 0.0) ++rank;
  }
  rep.difference_rank = rank;
  rep.strong_richness = rank >= 3;
  return rep;
}

}  // namespace d2d
