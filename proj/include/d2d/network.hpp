#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace d2d {

struct Link {
  int tail = 0;
  int head = 0;
  double free_flow_time = 0.0;  // minutes
  double capacity = 0.0;        // vehicles per day
};

struct OdPair {
  std::string id;
  int origin = 0;
  int destination = 0;
  double demand = 0.0;
  // Each path is a sequence of link indices into Network::links.
  std::vector<std::vector<int>> paths;
};

struct Network {
  std::vector<int> nodes;
  std::vector<Link> links;
  std::vector<OdPair> od_pairs;

  // Throws std::invalid_argument on dangling link endpoints, paths that
  // reference unknown links, or paths that do not connect origin to destination.
  void validate() const;
};

struct BprParams {
  double a = 0.15;
  double b = 4.0;
};

// Per-route realized cost sequence for one origin-destination pair.
struct CostSequence {
  std::string od_id;
  Eigen::MatrixXd costs;  // days x routes
  double bound = 0.0;     // declared upper bound C on entries

  int horizon() const { return int(costs.rows()); }
  int num_routes() const { return int(costs.cols()); }
  void validate() const;
};

// Contiguous day window [first_day, first_day + num_days) of a cost sequence,
// 0-based.  Keeps od_id and bound.
CostSequence slice_days(const CostSequence& costs, int first_day, int num_days);

struct RichnessReport {
  bool dynamic_richness = false;
  // 1-based (route_i, route_j, day) witnessing a cost difference that moved
  // away from its initial-valuation difference; first in (day, i, j) order.
  std::optional<std::array<int, 3>> witness;
  bool strong_richness = false;
  int difference_rank = 0;
};

// Five-by-five grid with two external origin/destination stubs; the study
// pair (5 -> 11) rides on links whose flows come from four background pairs.
Network build_nd_network();

double link_cost(const Link& link, double flow, const BprParams& bpr = {});

// Cost of every path of one OD pair under the given link flows.
// link_flows must cover all links (size == links.size()).
Eigen::VectorXd path_costs(const Network& net, int od_index,
                           const Eigen::VectorXd& link_flows,
                           const BprParams& bpr = {});

// Dynamic richness: some day's cost difference differs from the matching
// initial-valuation difference.  Strong richness: the day-wise difference
// vectors (relative to route 1) span at least 3 dimensions; rank uses an
// SVD cutoff of 1e-8 times the largest singular value.
RichnessReport check_richness(const CostSequence& costs, const Eigen::VectorXd& initial_values,
                              double difference_tol = 1e-9);

}  // namespace d2d
