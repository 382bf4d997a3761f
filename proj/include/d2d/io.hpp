#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "d2d/diagnostics.hpp"
#include "d2d/dynamics.hpp"
#include "d2d/inference.hpp"
#include "d2d/network.hpp"
#include "d2d/posterior.hpp"
#include "d2d/sampler.hpp"

namespace d2d {

// Malformed or inconsistent file contents (reported with row numbers).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem-level failures: unreadable or unwritable paths.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Network load_network_json(const std::string& path);
void store_network_json(const Network& net, const std::string& path);

// Rows od_id,day,route_id,cost with days 1..T and routes 1..M contiguous per
// OD pair.  Loaded sequences carry no declared bound.
std::vector<CostSequence> load_costs_csv(const std::string& path);
void store_costs_csv(const std::vector<CostSequence>& seqs, const std::string& path);

// Rows od_id,commuter_id,day,choice; choice 0 is non-travel.  The route count
// is the largest choice seen; callers align it with their cost data.
std::vector<ChoiceTrajectory> load_trajectories_csv(const std::string& path);
void store_trajectories_csv(const std::vector<ChoiceTrajectory>& trajs, const std::string& path);

// Rows od_id,day,route_id,count with route 0 = non-travel; every day must
// list the same routes and sum to the same population.
std::vector<CountSeries> load_counts_csv(const std::string& path);
void store_counts_csv(const std::vector<CountSeries>& series, const std::string& path);

// Rows chain,draw,divergent,<parameter...> on the constrained scale.
void store_draws_csv(const PosteriorDraws& draws, const std::string& path);
PosteriorDraws load_draws_csv(const std::string& path);

void store_summary_json(const PosteriorDraws& draws, const Diagnostics& diag,
                        const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& metadata = {});

// Rows day,route_id,mean,lo50,hi50,lo95,hi95 (route 0 = non-travel).
void store_bands_csv(const PredictiveSummary& summary, const std::string& path);
void store_bands_csv(const ExtrapolationResult& result, const std::string& path);

void store_rope_json(const RopeResult& result, double lo, double hi, const std::string& path);

struct RunManifest {
  std::string command_line;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> outputs;
};

// Refuses to write if any listed output is missing on disk.
void store_manifest_json(const RunManifest& manifest, const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

// ISO-8601 UTC timestamp; honors SOURCE_DATE_EPOCH for reproducible reruns.
std::string iso_timestamp();

Regime parse_regime(const std::string& name);
std::string regime_name(Regime regime);
InitValues parse_init_values(const std::string& name);

// Reads a JSON config (missing fields keep defaults); throws SchemaError on
// unknown keys or out-of-range values.
PriorSpec priors_from_json_file(const std::string& path);
SamplerConfig sampler_from_json_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace d2d
