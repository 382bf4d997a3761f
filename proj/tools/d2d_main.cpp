// Command-line front end: simulate, fit, predict, compare, diagnose, and
// experiment subcommands over CSV/JSON artifacts.  Exit codes: 0 success,
// 2 invalid input or config, 3 filesystem failure, 4 strict-mode warning.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d2d/diagnostics.hpp"
#include "d2d/dynamics.hpp"
#include "d2d/experiments.hpp"
#include "d2d/inference.hpp"
#include "d2d/io.hpp"
#include "d2d/math.hpp"
#include "d2d/model.hpp"
#include "d2d/network.hpp"
#include "d2d/posterior.hpp"
#include "d2d/rng.hpp"
#include "d2d/sampler.hpp"

namespace {

using nlohmann::json;
using namespace d2d;

constexpr double kRhatWarn = 1.05;

struct Ctx {
  std::string out_dir = ".";
  std::string config_path;
  std::uint64_t seed = 0;
  bool strict = false;

  json config;            // null when no --config given
  std::string config_bytes;
  std::string command_line;
  std::string started_at;
  std::vector<std::string> outputs;
};

void add_common_options(CLI::App* cmd, Ctx& ctx) {
  cmd->add_option("--out", ctx.out_dir, "output directory, created if missing");
  cmd->add_option("--config", ctx.config_path, "JSON config file");
  cmd->add_option("--seed", ctx.seed, "random seed");
  cmd->add_flag("--strict", ctx.strict, "turn warnings into a nonzero exit");
}

void load_config(Ctx& ctx) {
  ctx.started_at = iso_timestamp();
  if (ctx.config_path.empty()) return;
  ctx.config_bytes = read_text_file(ctx.config_path);
  try {
    ctx.config = json::parse(ctx.config_bytes);
  } catch (const json::parse_error& e) {
    throw SchemaError(ctx.config_path + ": " + e.what());
  }
  if (!ctx.config.is_object()) throw SchemaError(ctx.config_path + ": top level must be an object");
  static const std::vector<std::string> sections = {"priors",  "sampler", "model",     "simulate",
                                                    "predict", "rope",    "experiment"};
  for (const auto& [key, value] : ctx.config.items()) {
    (void)value;
    if (std::find(sections.begin(), sections.end(), key) == sections.end())
      throw SchemaError(ctx.config_path + ": unknown section '" + key + "'");
  }
}

// Returns a config section, rejecting keys outside the allowed list.
json section(const Ctx& ctx, const std::string& name, const std::vector<std::string>& allowed) {
  if (ctx.config.is_null() || !ctx.config.contains(name)) return json::object();
  const json& s = ctx.config.at(name);
  if (!s.is_object()) throw SchemaError("config section '" + name + "' must be an object");
  for (const auto& [key, value] : s.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw SchemaError("config section '" + name + "': unknown key '" + key + "'");
  }
  return s;
}

double jget(const json& s, const std::string& key, double fallback) {
  return s.contains(key) ? s.at(key).get<double>() : fallback;
}

int jget(const json& s, const std::string& key, int fallback) {
  return s.contains(key) ? s.at(key).get<int>() : fallback;
}

std::string jget(const json& s, const std::string& key, const std::string& fallback) {
  return s.contains(key) ? s.at(key).get<std::string>() : fallback;
}

PriorSpec priors_from(const Ctx& ctx) {
  return ctx.config_path.empty() ? PriorSpec{} : priors_from_json_file(ctx.config_path);
}

SamplerConfig sampler_from(const Ctx& ctx) {
  SamplerConfig cfg =
      ctx.config_path.empty() ? SamplerConfig{} : sampler_from_json_file(ctx.config_path);
  cfg.seed = ctx.seed;
  return cfg;
}

std::string out_path(Ctx& ctx, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + ctx.out_dir + ": " + ec.message());
  return (std::filesystem::path(ctx.out_dir) / name).string();
}

void finish_manifest(Ctx& ctx) {
  RunManifest m;
  m.command_line = ctx.command_line;
  m.config_hash = hash_hex(fnv1a64(ctx.config_bytes));
  m.seed = ctx.seed;
  m.started_at = ctx.started_at;
  m.finished_at = iso_timestamp();
  m.outputs = ctx.outputs;
  store_manifest_json(m, out_path(ctx, "manifest.json"));
}

void write_diagnostics_json(const Diagnostics& diag, const std::string& path) {
  json j;
  j["divergences"] = diag.divergences;
  j["max_rhat"] = std::isfinite(diag.max_rhat) ? json(diag.max_rhat) : json();
  j["min_ess"] = std::isfinite(diag.min_ess) ? json(diag.min_ess) : json();
  j["parameters"] = json::array();
  for (std::size_t p = 0; p < diag.names.size(); ++p) {
    json entry;
    entry["name"] = diag.names[p];
    entry["rhat"] = std::isfinite(diag.rhat[int(p)]) ? json(diag.rhat[int(p)]) : json();
    entry["ess"] = std::isfinite(diag.ess[int(p)]) ? json(diag.ess[int(p)]) : json();
    j["parameters"].push_back(entry);
  }
  write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string model;
  std::string env = "nd-background";
  std::string costs_file;
  int num_commuters = 10;
  int num_days = 30;
  bool anonymize_output = false;
};

CostSequence build_costs(Ctx& ctx, const SimulateArgs& args) {
  if (args.env == "nd-background") {
    const json bg = section(ctx, "simulate",
                            {"truth", "hyper", "smith", "background", "od_id", "demand"});
    const json b = bg.contains("background") ? bg.at("background") : json::object();
    for (const auto& [key, value] : b.items()) {
      (void)value;
      static const std::vector<std::string> ok = {"days",  "warmup",  "noise_sd",
                                                  "eta",   "theta",   "study_od"};
      if (std::find(ok.begin(), ok.end(), key) == ok.end())
        throw SchemaError("config background: unknown key '" + key + "'");
    }
    BackgroundConfig cfg;
    cfg.warmup = jget(b, "warmup", cfg.warmup);
    cfg.days = jget(b, "days", cfg.warmup + args.num_days);
    cfg.noise_sd = jget(b, "noise_sd", cfg.noise_sd);
    cfg.eta = jget(b, "eta", cfg.eta);
    cfg.theta = jget(b, "theta", cfg.theta);
    cfg.study_od = jget(b, "study_od", cfg.study_od);
    if (cfg.days - cfg.warmup < args.num_days)
      throw std::invalid_argument("background horizon shorter than requested --t");
    const CostSequence full =
        simulate_background(build_nd_network(), cfg, derive_stream(ctx.seed, 1));
    return slice_days(full, 0, args.num_days);
  }
  if (args.env == "file-costs") {
    if (args.costs_file.empty())
      throw std::invalid_argument("--env file-costs requires --costs FILE");
    const std::vector<CostSequence> seqs = load_costs_csv(args.costs_file);
    const json sim = section(ctx, "simulate",
                             {"truth", "hyper", "smith", "background", "od_id", "demand"});
    const std::string od = jget(sim, "od_id", std::string());
    const CostSequence* pick = nullptr;
    for (const CostSequence& s : seqs)
      if (od.empty() || s.od_id == od) {
        pick = &s;
        break;
      }
    if (!pick) throw std::invalid_argument("cost file has no OD pair '" + od + "'");
    if (pick->horizon() < args.num_days)
      throw std::invalid_argument("cost file horizon shorter than requested --t");
    return slice_days(*pick, 0, args.num_days);
  }
  throw std::invalid_argument("unknown --env '" + args.env + "'");
}

int cmd_simulate(Ctx& ctx, const SimulateArgs& args) {
  if (args.num_commuters < 1 || args.num_days < 1)
    throw std::invalid_argument("--n and --t must be positive");
  const json sim = section(ctx, "simulate",
                           {"truth", "hyper", "smith", "background", "od_id", "demand"});

  const CostSequence costs = build_costs(ctx, args);
  const int m = costs.num_routes();
  const Eigen::VectorXd init = Eigen::VectorXd::Zero(m);
  const std::uint64_t sim_seed = derive_stream(ctx.seed, 2);

  json truth;
  truth["model"] = args.model;
  truth["env"] = args.env;
  truth["od_id"] = costs.od_id;
  truth["n"] = args.num_commuters;
  truth["t"] = args.num_days;
  truth["seed"] = ctx.seed;

  std::optional<ChoiceTrajectory> traj;
  if (args.model == "pooled") {
    const json t = sim.contains("truth") ? sim.at("truth") : json::object();
    BehaviorParams p;
    p.eta = jget(t, "eta", 0.5);
    p.theta = jget(t, "theta", 1.0);
    p.rho = jget(t, "rho", 0.1);
    traj = simulate_pooled(p, init, costs, args.num_commuters, sim_seed);
    truth["params"] = {{"eta", p.eta}, {"theta", p.theta}, {"rho", p.rho}};
  } else if (args.model == "hier") {
    const json h = sim.contains("hyper") ? sim.at("hyper") : json::object();
    Hyperparams hp;
    hp.mu_eta = jget(h, "mu_eta", -1.5);
    hp.sigma_eta = jget(h, "sigma_eta", 0.5);
    hp.mu_theta = jget(h, "mu_theta", 0.0);
    hp.sigma_theta = jget(h, "sigma_theta", 1.0);
    hp.mu_rho = jget(h, "mu_rho", -2.0);
    hp.sigma_rho = jget(h, "sigma_rho", 1.0);
    auto [draw, t] = simulate_hierarchical(hp, init, costs, args.num_commuters, sim_seed);
    traj = std::move(t);
    truth["hyper"] = {{"mu_eta", hp.mu_eta},   {"sigma_eta", hp.sigma_eta},
                      {"mu_theta", hp.mu_theta}, {"sigma_theta", hp.sigma_theta},
                      {"mu_rho", hp.mu_rho},   {"sigma_rho", hp.sigma_rho}};
    truth["individuals"] = {{"eta", std::vector<double>(draw.eta.begin(), draw.eta.end())},
                            {"theta", std::vector<double>(draw.theta.begin(), draw.theta.end())},
                            {"rho", std::vector<double>(draw.rho.begin(), draw.rho.end())}};
  } else if (args.model == "smith") {
    const json s = sim.contains("smith") ? sim.at("smith") : json::object();
    SmithParams sp;
    sp.tau = jget(s, "tau", sp.tau);
    sp.epsilon = jget(s, "epsilon", sp.epsilon);
    traj = simulate_smith(sp, costs, args.num_commuters, sim_seed);
    truth["params"] = {{"tau", sp.tau}, {"epsilon", sp.epsilon}};
  } else if (args.model == "horowitz") {
    if (args.anonymize_output)
      throw std::invalid_argument("--anonymize needs individual choices; horowitz is aggregate");
    const json t = sim.contains("truth") ? sim.at("truth") : json::object();
    const double eta = jget(t, "eta", 0.5);
    const double theta = jget(t, "theta", 1.0);
    const double demand = jget(sim, "demand", double(args.num_commuters));
    Eigen::VectorXd perceived = init;
    std::string csv = "day,route_id,perceived_cost,flow\n";
    char buf[128];
    for (int day = 0; day < costs.horizon(); ++day) {
      const Eigen::VectorXd flows = demand * softmax(-theta * perceived);
      for (int r = 0; r < m; ++r) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", day + 1, r + 1, perceived[r],
                      flows[r]);
        csv += buf;
      }
      perceived = horowitz_step(perceived, costs.costs.row(day).transpose(), eta, theta, demand)
                      .first;
    }
    const std::string path = out_path(ctx, "horowitz.csv");
    write_text_file(path, csv);
    ctx.outputs.push_back(path);
    truth["params"] = {{"eta", eta}, {"theta", theta}, {"demand", demand}};
  } else {
    throw std::invalid_argument("unknown --model '" + args.model + "'");
  }

  {
    const std::string path = out_path(ctx, "costs.csv");
    store_costs_csv({costs}, path);
    ctx.outputs.push_back(path);
  }
  if (traj) {
    if (args.anonymize_output) {
      const std::string path = out_path(ctx, "counts.csv");
      store_counts_csv({anonymize(*traj)}, path);
      ctx.outputs.push_back(path);
    } else {
      const std::string path = out_path(ctx, "trajectory.csv");
      store_trajectories_csv({*traj}, path);
      ctx.outputs.push_back(path);
    }
  }
  {
    const std::string path = out_path(ctx, "truth.json");
    write_text_file(path, truth.dump(2) + "\n");
    ctx.outputs.push_back(path);
  }
  finish_manifest(ctx);
  return 0;
}

// --------------------------------------------------------------------- fit

struct FitArgs {
  std::string data_file;
  std::string costs_file;
  std::string obs = "complete";
  std::string model = "pooled";
  std::string init = "zeros";
  int pad_to_n = 0;
};

Regime regime_of(const FitArgs& args) {
  if (args.model == "pooled") {
    if (args.obs == "complete") return Regime::pooled_complete;
    if (args.obs == "counts") return Regime::pooled_counts;
  } else if (args.model == "hier") {
    if (args.obs == "complete") return Regime::hier_complete;
    if (args.obs == "counts") return Regime::hier_counts;
  }
  throw std::invalid_argument("unsupported --model/--obs combination '" + args.model + "/" +
                              args.obs + "'");
}

const CostSequence& costs_for(const std::vector<CostSequence>& seqs, const std::string& od_id) {
  for (const CostSequence& s : seqs)
    if (s.od_id == od_id) return s;
  throw std::invalid_argument("cost file lacks OD pair '" + od_id + "' present in the data");
}

Eigen::VectorXd v1_base_for(const Ctx& ctx, const CostSequence& costs, InitValues mode) {
  if (mode != InitValues::free_flow) return Eigen::VectorXd();
  const json m = section(ctx, "model",
                         {"sample_rho", "fixed_rho", "centered", "v1_base"});
  if (m.contains("v1_base")) {
    const auto vals = m.at("v1_base").get<std::vector<double>>();
    if (int(vals.size()) != costs.num_routes())
      throw SchemaError("config model.v1_base length does not match the route count");
    return Eigen::Map<const Eigen::VectorXd>(vals.data(), std::ptrdiff_t(vals.size()));
  }
  // Without an explicit base, commuters start from the first recorded day.
  return costs.costs.row(0).transpose();
}

int cmd_fit(Ctx& ctx, const FitArgs& args) {
  const Regime regime = regime_of(args);
  const InitValues init = parse_init_values(args.init);
  const json model_cfg = section(ctx, "model", {"sample_rho", "fixed_rho", "centered", "v1_base"});

  PosteriorOptions opt;
  opt.regime = regime;
  opt.init_values = init;
  opt.sample_rho = !model_cfg.contains("sample_rho") || model_cfg.at("sample_rho").get<bool>();
  opt.fixed_rho = jget(model_cfg, "fixed_rho", 0.0);
  opt.centered = model_cfg.contains("centered") && model_cfg.at("centered").get<bool>();

  const std::vector<CostSequence> cost_seqs = load_costs_csv(args.costs_file);
  std::vector<DataBlock> blocks;
  if (args.obs == "complete") {
    std::vector<ChoiceTrajectory> trajs = load_trajectories_csv(args.data_file);
    if (args.pad_to_n > 0)
      throw std::invalid_argument("--pad-to-n applies to count data, not trajectories");
    for (ChoiceTrajectory& traj : trajs) {
      DataBlock b;
      b.costs = costs_for(cost_seqs, traj.od_id);
      if (traj.num_routes > b.costs.num_routes())
        throw SchemaError("trajectory for OD '" + traj.od_id +
                          "' references more routes than the cost file");
      traj.num_routes = b.costs.num_routes();
      if (traj.horizon() != b.costs.horizon())
        throw SchemaError("trajectory and costs for OD '" + traj.od_id +
                          "' disagree on the number of days");
      b.v1_base = v1_base_for(ctx, b.costs, init);
      b.trajectory = std::move(traj);
      blocks.push_back(std::move(b));
    }
  } else {
    std::vector<CountSeries> series = load_counts_csv(args.data_file);
    for (CountSeries& counts : series) {
      if (args.pad_to_n > 0) {
        if (args.pad_to_n < counts.population)
          throw std::invalid_argument("--pad-to-n below the observed population of OD '" +
                                      counts.od_id + "'");
        for (int t = 0; t < counts.horizon(); ++t)
          counts.counts(t, 0) += args.pad_to_n - counts.population;
        counts.population = args.pad_to_n;
      }
      DataBlock b;
      b.costs = costs_for(cost_seqs, counts.od_id);
      if (counts.num_routes() != b.costs.num_routes())
        throw SchemaError("counts and costs for OD '" + counts.od_id +
                          "' disagree on the route count");
      if (counts.horizon() != b.costs.horizon())
        throw SchemaError("counts and costs for OD '" + counts.od_id +
                          "' disagree on the number of days");
      b.v1_base = v1_base_for(ctx, b.costs, init);
      b.counts = std::move(counts);
      blocks.push_back(std::move(b));
    }
  }
  if (blocks.empty()) throw SchemaError(args.data_file + ": no observations");

  const PriorSpec priors = priors_from(ctx);
  auto posterior = make_posterior(std::move(blocks), priors, opt);
  const PosteriorDraws draws = nuts_sample(*posterior, sampler_from(ctx));
  const Diagnostics diag = compute_diagnostics(draws);

  {
    const std::string path = out_path(ctx, "draws.csv");
    store_draws_csv(draws, path);
    ctx.outputs.push_back(path);
  }
  {
    const std::string path = out_path(ctx, "diagnostics.json");
    write_diagnostics_json(diag, path);
    ctx.outputs.push_back(path);
  }
  {
    std::vector<std::pair<std::string, std::string>> metadata;
    if (regime == Regime::hier_counts)
      metadata.emplace_back(
          "caveat",
          "daily counts are permutation-invariant and weakly identify heterogeneity; "
          "dispersion (sigma) estimates are biased toward zero");
    const std::string path = out_path(ctx, "summary.json");
    store_summary_json(draws, diag, path, metadata);
    ctx.outputs.push_back(path);
  }
  finish_manifest(ctx);

  if (std::isfinite(diag.max_rhat) && diag.max_rhat > kRhatWarn) {
    std::fprintf(stderr, "warning: max split R-hat %.3f exceeds %.2f; treat draws with caution\n",
                 diag.max_rhat, kRhatWarn);
    if (ctx.strict) return 4;
  }
  return 0;
}

// ------------------------------------------------------------ predict etc.

struct PredictArgs {
  std::string draws_file;
  std::string costs_file;
  int train_days = 0;  // 0: all but min(20, T/3) days
  int population = 10;
};

Eigen::MatrixXd pooled_matrix_from(const PosteriorDraws& draws) {
  std::vector<int> delta_cols;
  int eta = -1, theta = -1, rho = -1;
  for (std::size_t i = 0; i < draws.names.size(); ++i) {
    const std::string& name = draws.names[i];
    if (name == "eta") eta = int(i);
    else if (name == "theta") theta = int(i);
    else if (name == "rho") rho = int(i);
    else if (name.rfind("delta", 0) == 0) delta_cols.push_back(int(i));
  }
  if (eta < 0 || theta < 0)
    throw SchemaError("draws file lacks pooled parameters eta/theta");
  Eigen::MatrixXd mat(draws.total_draws(), 3 + int(delta_cols.size()));
  mat.col(0) = draws.samples.col(eta);
  mat.col(1) = draws.samples.col(theta);
  if (rho >= 0)
    mat.col(2) = draws.samples.col(rho);
  else
    mat.col(2).setZero();
  for (std::size_t k = 0; k < delta_cols.size(); ++k)
    mat.col(3 + int(k)) = draws.samples.col(delta_cols[k]);
  return mat;
}

int cmd_predict(Ctx& ctx, const PredictArgs& args) {
  const PosteriorDraws draws = load_draws_csv(args.draws_file);
  const std::vector<CostSequence> seqs = load_costs_csv(args.costs_file);
  const json p = section(ctx, "predict", {"replications", "max_draws", "od_id"});
  const std::string od = jget(p, "od_id", std::string());
  const CostSequence* costs = nullptr;
  for (const CostSequence& s : seqs)
    if (od.empty() || s.od_id == od) {
      costs = &s;
      break;
    }
  if (!costs) throw std::invalid_argument("cost file has no OD pair '" + od + "'");
  if (args.population < 1) throw std::invalid_argument("--n must be positive");

  const Eigen::MatrixXd mat = pooled_matrix_from(draws);
  const int reps = jget(p, "replications", 500);
  const int max_draws = jget(p, "max_draws", 200);
  const PredictiveSummary bands = posterior_predictive(mat, *costs, args.population, reps,
                                                       derive_stream(ctx.seed, 3), max_draws);
  {
    const std::string path = out_path(ctx, "bands.csv");
    store_bands_csv(bands, path);
    ctx.outputs.push_back(path);
  }

  const int horizon = costs->horizon();
  int train = args.train_days;
  if (train <= 0) train = horizon - std::min(20, horizon / 3);
  if (train < 1 || train >= horizon)
    throw std::invalid_argument("--train-days must split the horizon into two nonempty windows");
  const ExtrapolationResult ex =
      extrapolate(mat, slice_days(*costs, 0, train), slice_days(*costs, train, horizon - train));
  {
    const std::string path = out_path(ctx, "extrapolation.csv");
    store_bands_csv(ex, path);
    ctx.outputs.push_back(path);
  }
  finish_manifest(ctx);
  return 0;
}

struct CompareArgs {
  std::string draws_a;
  std::string draws_b;
  std::string param = "eta";
  double rope_lo = -0.1;
  double rope_hi = 0.1;
};

int cmd_compare(Ctx& ctx, const CompareArgs& args) {
  const PosteriorDraws a = load_draws_csv(args.draws_a);
  const PosteriorDraws b = load_draws_csv(args.draws_b);
  const Eigen::VectorXd col_a = a.column(a.column_index(args.param));
  const Eigen::VectorXd col_b = b.column(b.column_index(args.param));

  const json r = section(ctx, "rope", {"lo", "hi"});
  const double lo = jget(r, "lo", args.rope_lo);
  const double hi = jget(r, "hi", args.rope_hi);
  if (!(lo <= hi)) throw std::invalid_argument("ROPE interval must satisfy lo <= hi");

  // eta and rho live in (0,1): compare on the log-odds scale.  theta is
  // positive: compare on the log scale.  Anything else: plain difference.
  Eigen::VectorXd contrast;
  if (args.param.rfind("eta", 0) == 0 || args.param.rfind("rho", 0) == 0) {
    contrast = logit_contrast(col_a, col_b, derive_stream(ctx.seed, 4));
  } else {
    Eigen::VectorXd ta = col_a, tb = col_b;
    if (args.param.rfind("theta", 0) == 0) {
      ta = col_a.array().log();
      tb = col_b.array().log();
    }
    if (ta.size() == tb.size()) {
      contrast = ta - tb;
    } else {
      const int s = int(std::max(ta.size(), tb.size()));
      RngStream rng(derive_stream(ctx.seed, 4), 0x434F4E54ull);
      contrast.resize(s);
      for (int i = 0; i < s; ++i)
        contrast[i] = ta[int(rng.next_u64() % std::uint64_t(ta.size()))] -
                      tb[int(rng.next_u64() % std::uint64_t(tb.size()))];
    }
  }

  const RopeResult rope = rope_test(contrast, lo, hi);
  const std::string path = out_path(ctx, "rope.json");
  store_rope_json(rope, lo, hi, path);
  ctx.outputs.push_back(path);
  finish_manifest(ctx);
  return 0;
}

int cmd_diagnose(Ctx& ctx, const std::string& draws_file) {
  const PosteriorDraws draws = load_draws_csv(draws_file);
  const Diagnostics diag = compute_diagnostics(draws);
  const std::string path = out_path(ctx, "diagnostics.json");
  write_diagnostics_json(diag, path);
  ctx.outputs.push_back(path);
  finish_manifest(ctx);
  if (std::isfinite(diag.max_rhat) && diag.max_rhat > kRhatWarn) {
    std::fprintf(stderr, "warning: max split R-hat %.3f exceeds %.2f\n", diag.max_rhat, kRhatWarn);
    if (ctx.strict) return 4;
  }
  return 0;
}

// ------------------------------------------------------------- experiment

struct ExperimentArgs {
  std::string kind = "pooled";
  std::string scenario = "shifted-prior";
};

RecoveryConfig recovery_config_from(Ctx& ctx, int extra_days) {
  const json e = section(ctx, "experiment",
                         {"replications", "cells", "regime", "workers", "test_days", "truth",
                          "background"});
  RecoveryConfig cfg;
  cfg.replications = jget(e, "replications", 50);
  cfg.workers = jget(e, "workers", 0);
  cfg.priors = priors_from(ctx);
  cfg.sampler = sampler_from(ctx);
  cfg.seed = ctx.seed;
  if (e.contains("cells")) {
    for (const json& cell : e.at("cells")) {
      if (!cell.is_array() || cell.size() != 2)
        throw SchemaError("experiment cells must be [N, T] pairs");
      cfg.cells.push_back({cell.at(0).get<int>(), cell.at(1).get<int>()});
    }
  } else {
    for (int n : {1, 5, 10, 20})
      for (int t : {10, 30, 50}) cfg.cells.push_back({n, t});
  }

  int max_days = 0;
  for (const GridCell& c : cfg.cells) max_days = std::max(max_days, c.num_days);

  const json b = e.contains("background") ? e.at("background") : json::object();
  BackgroundConfig bg;
  bg.noise_sd = jget(b, "noise_sd", bg.noise_sd);
  bg.eta = jget(b, "eta", bg.eta);
  bg.theta = jget(b, "theta", bg.theta);
  bg.warmup = jget(b, "warmup", bg.warmup);
  bg.days = bg.warmup + max_days + extra_days;
  cfg.costs = simulate_background(build_nd_network(), bg, derive_stream(ctx.seed, 5));
  return cfg;
}

int cmd_experiment(Ctx& ctx, const ExperimentArgs& args) {
  const json e = section(ctx, "experiment",
                         {"replications", "cells", "regime", "workers", "test_days", "truth",
                          "background"});
  const int test_days = jget(e, "test_days", 20);

  MetricsTable table;
  if (args.kind == "pooled") {
    RecoveryConfig cfg = recovery_config_from(ctx, 0);
    cfg.regime = parse_regime(jget(e, "regime", std::string("pooled-complete")));
    table = run_pooled_recovery(cfg);
  } else if (args.kind == "hier") {
    RecoveryConfig cfg = recovery_config_from(ctx, 0);
    cfg.regime = parse_regime(jget(e, "regime", std::string("hier-complete")));
    table = run_hier_recovery(cfg);
  } else if (args.kind == "misspec") {
    const MisspecScenario scenario = parse_scenario(args.scenario);
    const bool behavioral = scenario == MisspecScenario::heterogeneous_pooled ||
                            scenario == MisspecScenario::smith;
    RecoveryConfig cfg = recovery_config_from(ctx, behavioral ? test_days : 0);
    cfg.regime = Regime::pooled_complete;
    table = run_misspecification(scenario, cfg, test_days).as_metrics();
  } else if (args.kind == "anonymized") {
    RecoveryConfig cfg = recovery_config_from(ctx, 0);
    cfg.regime = Regime::hier_complete;
    const json t = e.contains("truth") ? e.at("truth") : json::object();
    Hyperparams truth;
    truth.mu_eta = jget(t, "mu_eta", -1.5);
    truth.sigma_eta = jget(t, "sigma_eta", 0.5);
    truth.mu_theta = jget(t, "mu_theta", 0.0);
    truth.sigma_theta = jget(t, "sigma_theta", 1.0);
    truth.mu_rho = jget(t, "mu_rho", -2.0);
    truth.sigma_rho = jget(t, "sigma_rho", 1.0);
    const AnonymizedComparison cmp = run_anonymized_comparison(cfg, truth);

    json j;
    j["truth"] = {{"mu_eta", truth.mu_eta},     {"sigma_eta", truth.sigma_eta},
                  {"mu_theta", truth.mu_theta}, {"sigma_theta", truth.sigma_theta},
                  {"mu_rho", truth.mu_rho},     {"sigma_rho", truth.sigma_rho}};
    for (int k = 0; k < 6; ++k) {
      const std::string& name = cmp.hyper_names[std::size_t(k)];
      j["complete"][name] = {{"mean", cmp.complete_mean[k]},
                             {"hdi95", {cmp.complete_lo[k], cmp.complete_hi[k]}}};
      j["anonymized"][name] = {{"mean", cmp.anonymized_mean[k]},
                               {"hdi95", {cmp.anonymized_lo[k], cmp.anonymized_hi[k]}}};
    }
    j["complete"]["eta_spread"] = cmp.complete_eta_spread;
    j["anonymized"]["eta_spread"] = cmp.anonymized_eta_spread;
    const std::string path = out_path(ctx, "comparison.json");
    write_text_file(path, j.dump(2) + "\n");
    ctx.outputs.push_back(path);
    finish_manifest(ctx);
    return 0;
  } else {
    throw std::invalid_argument("unknown --kind '" + args.kind + "'");
  }

  const std::string path = out_path(ctx, "metrics.csv");
  store_metrics_csv(path, table);
  ctx.outputs.push_back(path);
  finish_manifest(ctx);
  return 0;
}

std::string join_args(int argc, char** argv) {
  std::string line;
  for (int i = 0; i < argc; ++i) {
    if (i) line += ' ';
    line += argv[i];
  }
  return line;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Day-to-day route-choice simulation and Bayesian estimation"};
  app.require_subcommand(1);

  Ctx ctx;
  ctx.command_line = join_args(argc, argv);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Generate synthetic choice data");
  c_sim->add_option("--model", sim.model, "pooled | hier | horowitz | smith")->required();
  c_sim->add_option("--env", sim.env, "nd-background | file-costs");
  c_sim->add_option("--costs", sim.costs_file, "cost CSV for --env file-costs");
  c_sim->add_option("--n", sim.num_commuters, "number of commuters");
  c_sim->add_option("--t", sim.num_days, "number of days");
  c_sim->add_flag("--anonymize", sim.anonymize_output, "write daily counts instead of choices");
  add_common_options(c_sim, ctx);

  FitArgs fit;
  CLI::App* c_fit = app.add_subcommand("fit", "Sample a posterior from observed data");
  c_fit->add_option("--data", fit.data_file, "trajectory or count CSV")->required();
  c_fit->add_option("--costs", fit.costs_file, "realized cost CSV")->required();
  c_fit->add_option("--obs", fit.obs, "complete | counts");
  c_fit->add_option("--model", fit.model, "pooled | hier");
  c_fit->add_option("--init-values", fit.init, "zeros | freeflow | delta");
  c_fit->add_option("--pad-to-n", fit.pad_to_n, "treat counts as draws from this population");
  add_common_options(c_fit, ctx);

  PredictArgs pred;
  CLI::App* c_pred = app.add_subcommand("predict", "Predictive bands and extrapolation");
  c_pred->add_option("--draws", pred.draws_file, "draws CSV from fit")->required();
  c_pred->add_option("--costs", pred.costs_file, "realized cost CSV")->required();
  c_pred->add_option("--train-days", pred.train_days, "days used before extrapolating");
  c_pred->add_option("--n", pred.population, "population size for count bands");
  add_common_options(c_pred, ctx);

  CompareArgs cmp;
  CLI::App* c_cmp = app.add_subcommand("compare", "ROPE test between two fits");
  c_cmp->add_option("--draws-a", cmp.draws_a, "first draws CSV")->required();
  c_cmp->add_option("--draws-b", cmp.draws_b, "second draws CSV")->required();
  c_cmp->add_option("--param", cmp.param, "parameter to contrast");
  c_cmp->add_option("--rope-lo", cmp.rope_lo, "ROPE lower bound");
  c_cmp->add_option("--rope-hi", cmp.rope_hi, "ROPE upper bound");
  add_common_options(c_cmp, ctx);

  std::string diag_file;
  CLI::App* c_diag = app.add_subcommand("diagnose", "Convergence diagnostics for a draws file");
  c_diag->add_option("--draws", diag_file, "draws CSV")->required();
  add_common_options(c_diag, ctx);

  ExperimentArgs exp;
  CLI::App* c_exp = app.add_subcommand("experiment", "Replication studies");
  c_exp->add_option("--kind", exp.kind, "pooled | hier | misspec | anonymized");
  c_exp->add_option("--scenario", exp.scenario,
                    "shifted-prior | alt-family | heterogeneous-pooled | smith");
  add_common_options(c_exp, ctx);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    load_config(ctx);
    if (c_sim->parsed()) return cmd_simulate(ctx, sim);
    if (c_fit->parsed()) return cmd_fit(ctx, fit);
    if (c_pred->parsed()) return cmd_predict(ctx, pred);
    if (c_cmp->parsed()) return cmd_compare(ctx, cmp);
    if (c_diag->parsed()) return cmd_diagnose(ctx, diag_file);
    if (c_exp->parsed()) return cmd_experiment(ctx, exp);
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
