#include "d2d/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace d2d {

using nlohmann::json;

namespace {

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, int row, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw SchemaError("row " + std::to_string(row) + ": cannot parse " + what + " from '" + s + "'");
  }
}

long parse_int(const std::string& s, int row, const std::string& what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw SchemaError("row " + std::to_string(row) + ": cannot parse " + what + " from '" + s + "'");
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // row numbers = index + 2
};

CsvTable read_csv(const std::string& path, const std::vector<std::string>& expected_header) {
  const std::string text = read_text_file(path);
  CsvTable table;
  std::stringstream ss(text);
  std::string line;
  int row = 0;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (row == 1) {
      if (!expected_header.empty() && fields != expected_header) {
        std::string want;
        for (const std::string& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw SchemaError(path + ": expected header '" + want + "'");
      }
      table.header = fields;
      continue;
    }
    if (fields.size() != table.header.size())
      throw SchemaError("row " + std::to_string(row) + ": expected " +
                        std::to_string(table.header.size()) + " fields, found " +
                        std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw SchemaError(path + ": missing header row");
  return table;
}

json parse_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

void dump_json_file(const json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

Network load_network_json(const std::string& path) {
  const json j = parse_json_file(path);
  Network net;
  try {
    for (const json& n : j.at("nodes")) net.nodes.push_back(n.get<int>());
    for (const json& l : j.at("links"))
      net.links.push_back({l.at("tail").get<int>(), l.at("head").get<int>(),
                           l.at("fft").get<double>(), l.at("cap").get<double>()});
    for (const json& od : j.at("od_pairs")) {
      OdPair pair;
      pair.id = od.at("id").get<std::string>();
      pair.origin = od.at("origin").get<int>();
      pair.destination = od.at("destination").get<int>();
      pair.demand = od.at("demand").get<double>();
      for (const json& p : od.at("paths")) pair.paths.push_back(p.get<std::vector<int>>());
      net.od_pairs.push_back(std::move(pair));
    }
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return net;
}

void store_network_json(const Network& net, const std::string& path) {
  json j;
  j["nodes"] = net.nodes;
  j["links"] = json::array();
  for (const Link& l : net.links)
    j["links"].push_back({{"tail", l.tail}, {"head", l.head}, {"fft", l.free_flow_time},
                          {"cap", l.capacity}});
  j["od_pairs"] = json::array();
  for (const OdPair& od : net.od_pairs)
    j["od_pairs"].push_back({{"id", od.id}, {"origin", od.origin},
                             {"destination", od.destination}, {"demand", od.demand},
                             {"paths", od.paths}});
  dump_json_file(j, path);
}

std::vector<CostSequence> load_costs_csv(const std::string& path) {
  const CsvTable table = read_csv(path, {"od_id", "day", "route_id", "cost"});
  std::vector<std::string> order;
  std::map<std::string, std::map<std::pair<int, int>, double>> cells;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const int row = int(i) + 2;
    const std::vector<std::string>& f = table.rows[i];
    const std::string& od = f[0];
    const int day = int(parse_int(f[1], row, "day"));
    const int route = int(parse_int(f[2], row, "route_id"));
    const double cost = parse_double(f[3], row, "cost");
    if (day < 1) throw SchemaError("row " + std::to_string(row) + ": day must be positive");
    if (route < 1) throw SchemaError("row " + std::to_string(row) + ": route_id must be positive");
    if (!cells.count(od)) order.push_back(od);
    if (!cells[od].emplace(std::make_pair(day, route), cost).second)
      throw SchemaError("row " + std::to_string(row) + ": duplicate (od,day,route) entry");
  }
  if (order.empty()) throw SchemaError(path + ": no data rows");

  std::vector<CostSequence> out;
  for (const std::string& od : order) {
    const auto& grid = cells[od];
    int t_max = 0, m_max = 0;
    for (const auto& [key, value] : grid) {
      t_max = std::max(t_max, key.first);
      m_max = std::max(m_max, key.second);
    }
    CostSequence seq;
    seq.od_id = od;
    seq.costs.resize(t_max, m_max);
    for (int t = 1; t <= t_max; ++t)
      for (int m = 1; m <= m_max; ++m) {
        const auto it = grid.find({t, m});
        if (it == grid.end())
          throw SchemaError(path + ": od " + od + " is missing day " + std::to_string(t) +
                            " route " + std::to_string(m));
        seq.costs(t - 1, m - 1) = it->second;
      }
    try {
      seq.validate();
    } catch (const std::invalid_argument& e) {
      throw SchemaError(path + ": od " + od + ": " + e.what());
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void store_costs_csv(const std::vector<CostSequence>& seqs, const std::string& path) {
  std::string text = "od_id,day,route_id,cost\n";
  for (const CostSequence& seq : seqs)
    for (int t = 0; t < seq.horizon(); ++t)
      for (int m = 0; m < seq.num_routes(); ++m)
        text += seq.od_id + "," + std::to_string(t + 1) + "," + std::to_string(m + 1) + "," +
                format_double(seq.costs(t, m)) + "\n";
  write_text_file(path, text);
}

std::vector<ChoiceTrajectory> load_trajectories_csv(const std::string& path) {
  const CsvTable table = read_csv(path, {"od_id", "commuter_id", "day", "choice"});
  std::vector<std::string> order;
  std::map<std::string, std::map<std::pair<int, int>, int>> cells;
  std::map<std::string, int> max_choice;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const int row = int(i) + 2;
    const std::vector<std::string>& f = table.rows[i];
    const std::string& od = f[0];
    const int commuter = int(parse_int(f[1], row, "commuter_id"));
    const int day = int(parse_int(f[2], row, "day"));
    const int choice = int(parse_int(f[3], row, "choice"));
    if (commuter < 1) throw SchemaError("row " + std::to_string(row) + ": commuter_id must be positive");
    if (day < 1) throw SchemaError("row " + std::to_string(row) + ": day must be positive");
    if (choice < 0) throw SchemaError("row " + std::to_string(row) + ": choice must be nonnegative");
    if (!cells.count(od)) order.push_back(od);
    if (!cells[od].emplace(std::make_pair(commuter, day), choice).second)
      throw SchemaError("row " + std::to_string(row) + ": duplicate (od,commuter,day) entry");
    max_choice[od] = std::max(max_choice[od], choice);
  }
  if (order.empty()) throw SchemaError(path + ": no data rows");

  std::vector<ChoiceTrajectory> out;
  for (const std::string& od : order) {
    const auto& grid = cells[od];
    int n_max = 0, t_max = 0;
    for (const auto& [key, value] : grid) {
      n_max = std::max(n_max, key.first);
      t_max = std::max(t_max, key.second);
    }
    ChoiceTrajectory traj;
    traj.od_id = od;
    traj.num_routes = std::max(2, max_choice[od]);
    traj.choices.resize(n_max, t_max);
    for (int n = 1; n <= n_max; ++n)
      for (int t = 1; t <= t_max; ++t) {
        const auto it = grid.find({n, t});
        if (it == grid.end())
          throw SchemaError(path + ": od " + od + " is missing commuter " + std::to_string(n) +
                            " day " + std::to_string(t));
        traj.choices(n - 1, t - 1) = it->second;
      }
    out.push_back(std::move(traj));
  }
  return out;
}

void store_trajectories_csv(const std::vector<ChoiceTrajectory>& trajs, const std::string& path) {
  std::string text = "od_id,commuter_id,day,choice\n";
  for (const ChoiceTrajectory& traj : trajs)
    for (int n = 0; n < traj.num_commuters(); ++n)
      for (int t = 0; t < traj.horizon(); ++t)
        text += traj.od_id + "," + std::to_string(n + 1) + "," + std::to_string(t + 1) + "," +
                std::to_string(traj.choices(n, t)) + "\n";
  write_text_file(path, text);
}

std::vector<CountSeries> load_counts_csv(const std::string& path) {
  const CsvTable table = read_csv(path, {"od_id", "day", "route_id", "count"});
  std::vector<std::string> order;
  std::map<std::string, std::map<std::pair<int, int>, int>> cells;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const int row = int(i) + 2;
    const std::vector<std::string>& f = table.rows[i];
    const std::string& od = f[0];
    const int day = int(parse_int(f[1], row, "day"));
    const int route = int(parse_int(f[2], row, "route_id"));
    const int count = int(parse_int(f[3], row, "count"));
    if (day < 1) throw SchemaError("row " + std::to_string(row) + ": day must be positive");
    if (route < 0) throw SchemaError("row " + std::to_string(row) + ": route_id must be nonnegative");
    if (count < 0) throw SchemaError("row " + std::to_string(row) + ": count must be nonnegative");
    if (!cells.count(od)) order.push_back(od);
    if (!cells[od].emplace(std::make_pair(day, route), count).second)
      throw SchemaError("row " + std::to_string(row) + ": duplicate (od,day,route) entry");
  }
  if (order.empty()) throw SchemaError(path + ": no data rows");

  std::vector<CountSeries> out;
  for (const std::string& od : order) {
    const auto& grid = cells[od];
    int t_max = 0, m_max = 0;
    for (const auto& [key, value] : grid) {
      t_max = std::max(t_max, key.first);
      m_max = std::max(m_max, key.second);
    }
    CountSeries series;
    series.od_id = od;
    series.counts.resize(t_max, m_max + 1);
    int population = -1;
    for (int t = 1; t <= t_max; ++t) {
      int sum = 0;
      for (int m = 0; m <= m_max; ++m) {
        const auto it = grid.find({t, m});
        if (it == grid.end())
          throw SchemaError(path + ": od " + od + " is missing day " + std::to_string(t) +
                            " route " + std::to_string(m));
        series.counts(t - 1, m) = it->second;
        sum += it->second;
      }
      if (population < 0)
        population = sum;
      else if (sum != population)
        throw SchemaError(path + ": od " + od + " day " + std::to_string(t) + " sums to " +
                          std::to_string(sum) + " but earlier days sum to " +
                          std::to_string(population));
    }
    series.population = population;
    try {
      series.validate();
    } catch (const std::invalid_argument& e) {
      throw SchemaError(path + ": od " + od + ": " + e.what());
    }
    out.push_back(std::move(series));
  }
  return out;
}

void store_counts_csv(const std::vector<CountSeries>& series, const std::string& path) {
  std::string text = "od_id,day,route_id,count\n";
  for (const CountSeries& s : series)
    for (int t = 0; t < s.horizon(); ++t)
      for (int a = 0; a < s.counts.cols(); ++a)
        text += s.od_id + "," + std::to_string(t + 1) + "," + std::to_string(a) + "," +
                std::to_string(s.counts(t, a)) + "\n";
  write_text_file(path, text);
}

void store_draws_csv(const PosteriorDraws& draws, const std::string& path) {
  std::string text = "chain,draw,divergent";
  for (const std::string& n : draws.names) text += "," + n;
  text += "\n";
  for (int r = 0; r < draws.total_draws(); ++r) {
    text += std::to_string(draws.chain_id[r]) + "," +
            std::to_string(r % std::max(1, draws.draws_per_chain) + 1) + "," +
            std::to_string(int(draws.divergent[r]));
    for (int c = 0; c < draws.samples.cols(); ++c) text += "," + format_double(draws.samples(r, c));
    text += "\n";
  }
  write_text_file(path, text);
}

PosteriorDraws load_draws_csv(const std::string& path) {
  const CsvTable table = read_csv(path, {});
  if (table.header.size() < 4 || table.header[0] != "chain" || table.header[1] != "draw" ||
      table.header[2] != "divergent")
    throw SchemaError(path + ": expected header chain,draw,divergent,<parameters>");
  PosteriorDraws draws;
  draws.names.assign(table.header.begin() + 3, table.header.end());
  const int d = int(draws.names.size());
  const int rows = int(table.rows.size());
  if (rows == 0) throw SchemaError(path + ": no draws");
  draws.samples.resize(rows, d);
  draws.chain_id.resize(rows);
  draws.divergent.assign(rows, 0);
  int max_chain = 0;
  for (int i = 0; i < rows; ++i) {
    const int row = i + 2;
    const std::vector<std::string>& f = table.rows[i];
    draws.chain_id[i] = int(parse_int(f[0], row, "chain"));
    if (draws.chain_id[i] < 0) throw SchemaError("row " + std::to_string(row) + ": negative chain");
    max_chain = std::max(max_chain, draws.chain_id[i]);
    draws.divergent[i] = char(parse_int(f[2], row, "divergent") != 0);
    for (int c = 0; c < d; ++c)
      draws.samples(i, c) = parse_double(f[3 + c], row, "draw value");
  }
  draws.chains = max_chain + 1;
  if (rows % draws.chains != 0)
    throw SchemaError(path + ": chains have unequal draw counts");
  draws.draws_per_chain = rows / draws.chains;
  std::vector<int> per_chain(draws.chains, 0);
  for (int i = 0; i < rows; ++i) per_chain[draws.chain_id[i]] += 1;
  for (int c = 0; c < draws.chains; ++c)
    if (per_chain[c] != draws.draws_per_chain)
      throw SchemaError(path + ": chain " + std::to_string(c) + " has " +
                        std::to_string(per_chain[c]) + " draws, expected " +
                        std::to_string(draws.draws_per_chain));
  draws.unconstrained.resize(0, d);
  return draws;
}

void store_summary_json(const PosteriorDraws& draws, const Diagnostics& diag,
                        const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& metadata) {
  json j;
  j["divergences"] = diag.divergences;
  if (!metadata.empty()) {
    json meta = json::object();
    for (const auto& [key, value] : metadata) meta[key] = value;
    j["metadata"] = meta;
  }
  j["parameters"] = json::array();
  for (std::size_t p = 0; p < draws.names.size(); ++p) {
    const Eigen::VectorXd col = draws.samples.col(int(p));
    const HdiResult h = hdi(col, 0.95);
    json entry;
    entry["name"] = draws.names[p];
    entry["mean"] = posterior_mean(col);
    entry["hdi95"] = {h.lo, h.hi};
    entry["rhat"] = std::isfinite(diag.rhat[int(p)]) ? json(diag.rhat[int(p)]) : json();
    entry["ess"] = std::isfinite(diag.ess[int(p)]) ? json(diag.ess[int(p)]) : json();
    j["parameters"].push_back(entry);
  }
  dump_json_file(j, path);
}

namespace {

void bands_to_csv(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& lo50,
                  const Eigen::MatrixXd& hi50, const Eigen::MatrixXd& lo95,
                  const Eigen::MatrixXd& hi95, const std::string& path) {
  std::string text = "day,route_id,mean,lo50,hi50,lo95,hi95\n";
  for (int t = 0; t < mean.rows(); ++t)
    for (int a = 0; a < mean.cols(); ++a)
      text += std::to_string(t + 1) + "," + std::to_string(a) + "," + format_double(mean(t, a)) +
              "," + format_double(lo50(t, a)) + "," + format_double(hi50(t, a)) + "," +
              format_double(lo95(t, a)) + "," + format_double(hi95(t, a)) + "\n";
  write_text_file(path, text);
}

}  // namespace

void store_bands_csv(const PredictiveSummary& summary, const std::string& path) {
  bands_to_csv(summary.mean, summary.lo50, summary.hi50, summary.lo95, summary.hi95, path);
}

void store_bands_csv(const ExtrapolationResult& result, const std::string& path) {
  bands_to_csv(result.mean, result.lo50, result.hi50, result.lo95, result.hi95, path);
}

void store_rope_json(const RopeResult& result, double lo, double hi, const std::string& path) {
  json j;
  j["interval"] = {lo, hi};
  j["below"] = result.below;
  j["inside"] = result.inside;
  j["above"] = result.above;
  j["verdict"] = result.verdict;
  dump_json_file(j, path);
}

void store_manifest_json(const RunManifest& manifest, const std::string& path) {
  for (const std::string& out : manifest.outputs)
    if (!std::filesystem::exists(out))
      throw IoError("manifest lists missing output " + out);
  json j;
  j["command_line"] = manifest.command_line;
  j["config_hash"] = manifest.config_hash;
  j["seed"] = manifest.seed;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["outputs"] = manifest.outputs;
  dump_json_file(j, path);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string iso_timestamp() {
  std::time_t t;
  const char* sde = std::getenv("SOURCE_DATE_EPOCH");
  if (sde != nullptr)
    t = std::time_t(std::atoll(sde));
  else
    t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Regime parse_regime(const std::string& name) {
  if (name == "pooled-complete") return Regime::pooled_complete;
  if (name == "pooled-counts") return Regime::pooled_counts;
  if (name == "hier-complete") return Regime::hier_complete;
  if (name == "hier-counts") return Regime::hier_counts;
  throw SchemaError("unknown regime '" + name + "'");
}

std::string regime_name(Regime regime) {
  switch (regime) {
    case Regime::pooled_complete: return "pooled-complete";
    case Regime::pooled_counts: return "pooled-counts";
    case Regime::hier_complete: return "hier-complete";
    case Regime::hier_counts: return "hier-counts";
  }
  return "unknown";
}

InitValues parse_init_values(const std::string& name) {
  if (name == "zeros") return InitValues::zeros;
  if (name == "freeflow") return InitValues::free_flow;
  if (name == "delta") return InitValues::endogenous_delta;
  throw SchemaError("unknown initial-value mode '" + name + "'");
}

namespace {

NormalPrior normal_from_json(const json& j, const std::string& what) {
  NormalPrior p;
  for (const auto& [key, value] : j.items()) {
    if (key == "mu")
      p.mu = value.get<double>();
    else if (key == "sigma")
      p.sigma = value.get<double>();
    else
      throw SchemaError(what + ": unknown key '" + key + "'");
  }
  if (!(p.sigma > 0.0)) throw SchemaError(what + ": sigma must be positive");
  return p;
}

HalfNormalPrior halfnormal_from_json(const json& j, const std::string& what) {
  HalfNormalPrior p;
  for (const auto& [key, value] : j.items()) {
    if (key == "sigma")
      p.sigma = value.get<double>();
    else
      throw SchemaError(what + ": unknown key '" + key + "'");
  }
  if (!(p.sigma > 0.0)) throw SchemaError(what + ": sigma must be positive");
  return p;
}

}  // namespace

PriorSpec priors_from_json_file(const std::string& path) {
  PriorSpec spec;
  const json j = parse_json_file(path);
  if (!j.contains("priors")) return spec;
  for (const auto& [key, value] : j.at("priors").items()) {
    if (key == "eta_logit")
      spec.eta_logit = normal_from_json(value, key);
    else if (key == "theta_log")
      spec.theta_log = normal_from_json(value, key);
    else if (key == "rho_logit")
      spec.rho_logit = normal_from_json(value, key);
    else if (key == "delta")
      spec.delta = normal_from_json(value, key);
    else if (key == "mu_eta")
      spec.mu_eta = normal_from_json(value, key);
    else if (key == "mu_theta")
      spec.mu_theta = normal_from_json(value, key);
    else if (key == "mu_rho")
      spec.mu_rho = normal_from_json(value, key);
    else if (key == "sigma_eta")
      spec.sigma_eta = halfnormal_from_json(value, key);
    else if (key == "sigma_theta")
      spec.sigma_theta = halfnormal_from_json(value, key);
    else if (key == "sigma_rho")
      spec.sigma_rho = halfnormal_from_json(value, key);
    else
      throw SchemaError("priors: unknown key '" + key + "'");
  }
  return spec;
}

SamplerConfig sampler_from_json_file(const std::string& path) {
  SamplerConfig cfg;
  const json j = parse_json_file(path);
  if (!j.contains("sampler")) return cfg;
  for (const auto& [key, value] : j.at("sampler").items()) {
    if (key == "chains")
      cfg.chains = value.get<int>();
    else if (key == "warmup")
      cfg.warmup = value.get<int>();
    else if (key == "draws")
      cfg.draws = value.get<int>();
    else if (key == "target_accept")
      cfg.target_accept = value.get<double>();
    else if (key == "max_tree_depth")
      cfg.max_tree_depth = value.get<int>();
    else if (key == "init_jitter")
      cfg.init_jitter = value.get<double>();
    else
      throw SchemaError("sampler: unknown key '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return cfg;
}

}  // namespace d2d
