// End-to-end checks against the built d2d binary: every subcommand produces
// its documented files, reruns are byte-identical under SOURCE_DATE_EPOCH,
// and the exit-code contract (0 ok, 2 bad input, 3 io, 4 strict warning)
// holds.  Invoked with the binary path as argv[1].

#include <sys/wait.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2d/dynamics.hpp"
#include "d2d/inference.hpp"
#include "d2d/io.hpp"
#include "d2d/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace d2d;

namespace {

int g_failed = 0;
std::string g_bin;
fs::path g_root;
fs::path g_log;

void check(bool ok, const std::string& what) {
  std::printf("%s - %s\n", ok ? "ok" : "FAIL", what.c_str());
  if (!ok) ++g_failed;
}

// Returns the child's exit code, or -1 when the shell itself failed.
int run(const std::string& args) {
  {
    std::ofstream log(g_log, std::ios::app);
    log << "\n$ d2d " << args << "\n";
  }
  const std::string cmd = '"' + g_bin + "\" " + args + " >>\"" + g_log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  if (WIFEXITED(rc)) return WEXITSTATUS(rc);
  return -1;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

std::vector<std::vector<std::string>> parse_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

void write_text(const fs::path& p, const std::string& text) {
  write_text_file(p.string(), text);
}

// ------------------------------------------------------------------ simulate

void check_simulate_pooled() {
  const fs::path d1 = g_root / "sim1";
  const fs::path d1b = g_root / "sim1b";
  check(run("simulate --model pooled --n 8 --t 12 --seed 11 --out " + d1.string()) == 0,
        "simulate pooled exits 0");
  bool files = true;
  for (const char* name : {"costs.csv", "trajectory.csv", "truth.json", "manifest.json"})
    files = files && fs::exists(d1 / name);
  check(files, "simulate writes costs, trajectory, truth, manifest");

  const std::vector<CostSequence> costs = load_costs_csv((d1 / "costs.csv").string());
  check(costs.size() == 1 && costs[0].horizon() == 12 && costs[0].num_routes() == 3,
        "simulated costs cover 12 days of a 3-route od pair");
  const std::vector<ChoiceTrajectory> trajs = load_trajectories_csv((d1 / "trajectory.csv").string());
  check(trajs.size() == 1 && trajs[0].num_commuters() == 8 && trajs[0].horizon() == 12 &&
            trajs[0].od_id == costs[0].od_id,
        "simulated trajectory matches --n/--t and the cost od pair");

  const json truth = json::parse(slurp(d1 / "truth.json"));
  check(truth.at("model") == "pooled" && truth.at("seed") == 11 &&
            truth.at("params").contains("eta"),
        "truth.json records model, seed, and parameters");
  const json manifest = json::parse(slurp(d1 / "manifest.json"));
  bool listed = manifest.at("seed") == 11 && manifest.at("outputs").size() == 3;
  if (listed)
    for (const auto& out : manifest.at("outputs")) listed = listed && fs::exists(out.get<std::string>());
  check(listed, "manifest records the seed and the three data artifacts");

  check(run("simulate --model pooled --n 8 --t 12 --seed 11 --out " + d1b.string()) == 0,
        "simulate rerun exits 0");
  bool identical = true;
  for (const char* name : {"costs.csv", "trajectory.csv", "truth.json"})
    identical = identical && slurp(d1 / name) == slurp(d1b / name);
  check(identical, "rerun with the same seed reproduces identical bytes");
}

void check_simulate_anonymize() {
  const fs::path d = g_root / "sim_anon";
  check(run("simulate --model pooled --n 8 --t 12 --seed 11 --anonymize --out " + d.string()) == 0,
        "simulate --anonymize exits 0");
  check(fs::exists(d / "counts.csv") && !fs::exists(d / "trajectory.csv"),
        "--anonymize writes counts.csv instead of trajectory.csv");
  const std::vector<CountSeries> counts = load_counts_csv((d / "counts.csv").string());
  check(counts.size() == 1 && counts[0].population == 8 && counts[0].horizon() == 12 &&
            counts[0].num_routes() == 3,
        "anonymized counts keep the population, horizon, and route count");

  // The tallies must agree with the complete trajectory from the same seed.
  const std::vector<ChoiceTrajectory> trajs =
      load_trajectories_csv((g_root / "sim1" / "trajectory.csv").string());
  const CountSeries direct = anonymize(trajs[0]);
  check((direct.counts.array() == counts[0].counts.array()).all(),
        "anonymized counts equal the tally of the complete trajectory");
}

void check_simulate_smith() {
  // Constant two-route costs (10, 6): a commuter on route 1 switches with
  // probability tau * 4 = 0.4, one on route 2 drifts back with epsilon.
  CostSequence costs;
  costs.od_id = "a";
  costs.costs.resize(2, 2);
  costs.costs << 10.0, 6.0, 10.0, 6.0;
  const fs::path cf = g_root / "smith_costs.csv";
  store_costs_csv({costs}, cf.string());

  const fs::path d = g_root / "sim_smith";
  check(run("simulate --model smith --env file-costs --costs " + cf.string() +
                " --n 20000 --t 2 --seed 5 --out " + d.string()) == 0,
        "simulate smith from a cost file exits 0");
  const ChoiceTrajectory traj = load_trajectories_csv((d / "trajectory.csv").string())[0];
  int n1 = 0, n2 = 0, sw12 = 0, sw21 = 0;
  for (int i = 0; i < traj.num_commuters(); ++i) {
    const int first = traj.choices(i, 0);
    const int second = traj.choices(i, 1);
    if (first == 1) {
      ++n1;
      if (second == 2) ++sw12;
    } else if (first == 2) {
      ++n2;
      if (second == 1) ++sw21;
    }
  }
  check(n1 + n2 == 20000, "smith choices are 1-based routes");
  check(std::abs(double(n1) / 20000.0 - 0.5) < 0.02, "smith day 1 is a uniform assignment");
  check(std::abs(double(sw12) / double(n1) - 0.4) < 0.025,
        "switch rate toward the cheaper route matches tau * cost gap");
  check(std::abs(double(sw21) / double(n2) - 0.05) < 0.012,
        "drift back to the dearer route matches epsilon");
}

void check_simulate_horowitz() {
  const fs::path d = g_root / "sim_h";
  check(run("simulate --model horowitz --n 10 --t 5 --seed 2 --out " + d.string()) == 0,
        "simulate horowitz exits 0");
  check(fs::exists(d / "horowitz.csv") && !fs::exists(d / "trajectory.csv"),
        "horowitz writes an aggregate flow table, not a trajectory");
  const auto rows = parse_csv(d / "horowitz.csv");
  check(!rows.empty() && rows[0].size() == 4 && rows[0][0] == "day" && rows[0][2] == "perceived_cost" &&
            int(rows.size()) == 1 + 5 * 3,
        "horowitz.csv lists day,route_id,perceived_cost,flow for every day and route");
  check(run("simulate --model horowitz --anonymize --t 5 --out " + (g_root / "sim_h2").string()) == 2,
        "horowitz with --anonymize is rejected with exit 2");
}

// ----------------------------------------------------------------------- fit

void check_fit_pooled() {
  const fs::path cfg = g_root / "fit_cfg.json";
  write_text(cfg, json{{"sampler", {{"chains", 2}, {"warmup", 200}, {"draws", 150}}}}.dump());
  const fs::path d1 = g_root / "sim1";
  const fs::path fit = g_root / "fit1";
  check(run("fit --data " + (d1 / "trajectory.csv").string() + " --costs " +
                (d1 / "costs.csv").string() + " --obs complete --model pooled --seed 42 --config " +
                cfg.string() + " --out " + fit.string()) == 0,
        "fit pooled complete exits 0");
  const PosteriorDraws draws = load_draws_csv((fit / "draws.csv").string());
  check(draws.names == std::vector<std::string>{"eta", "theta", "rho"} &&
            draws.total_draws() == 300 && draws.chains == 2,
        "draws.csv holds eta,theta,rho for 2 chains x 150 draws");
  const json diag = json::parse(slurp(fit / "diagnostics.json"));
  check(diag.contains("max_rhat") && diag.at("parameters").size() == 3,
        "diagnostics.json reports per-parameter convergence");
  const json summary = json::parse(slurp(fit / "summary.json"));
  bool names_ok = summary.at("parameters").size() == 3;
  if (names_ok) {
    names_ok = summary.at("parameters")[0].at("name") == "eta" &&
               summary.at("parameters")[1].at("name") == "theta" &&
               summary.at("parameters")[2].at("name") == "rho";
  }
  check(names_ok, "summary.json lists the three pooled parameters");
}

void check_fit_errors() {
  const fs::path d1 = g_root / "sim1";
  const std::string data = (d1 / "trajectory.csv").string();
  const std::string costs = (d1 / "costs.csv").string();
  check(run("fit --data " + data + " --costs " + costs + " --obs counts --out " +
            (g_root / "fit_bad1").string()) == 2,
        "fit rejects trajectory data under --obs counts with exit 2");
  check(run("fit --data " + data + " --costs " + costs + " --pad-to-n 20 --out " +
            (g_root / "fit_bad2").string()) == 2,
        "fit rejects --pad-to-n for trajectory data with exit 2");
  check(run("fit --data " + (g_root / "absent.csv").string() + " --costs " + costs + " --out " +
            (g_root / "fit_bad3").string()) == 3,
        "fit exits 3 when the data file does not exist");

  const fs::path cfg = g_root / "bad_sampler.json";
  write_text(cfg, json{{"sampler", {{"chains", 0}}}}.dump());
  check(run("fit --data " + data + " --costs " + costs + " --config " + cfg.string() + " --out " +
            (g_root / "fit_bad4").string()) == 2,
        "fit rejects a sampler config with zero chains");
}

void check_fit_hier_counts() {
  const fs::path sim = g_root / "sim_hier";
  check(run("simulate --model hier --n 5 --t 8 --seed 13 --anonymize --out " + sim.string()) == 0,
        "simulate hier --anonymize exits 0");
  const fs::path cfg = g_root / "hier_cfg.json";
  write_text(cfg, json{{"sampler", {{"chains", 2}, {"warmup", 150}, {"draws", 100}}}}.dump());
  const fs::path fit = g_root / "fit_hier";
  check(run("fit --data " + (sim / "counts.csv").string() + " --costs " +
                (sim / "costs.csv").string() + " --obs counts --model hier --seed 7 --config " +
                cfg.string() + " --out " + fit.string()) == 0,
        "fit hier on counts exits 0");
  const json summary = json::parse(slurp(fit / "summary.json"));
  const bool caveat = summary.contains("metadata") &&
                      summary.at("metadata").contains("caveat") &&
                      summary.at("metadata").at("caveat").get<std::string>().find(
                          "weakly identify heterogeneity") != std::string::npos;
  check(caveat, "hier-on-counts summary carries the weak-identification caveat");
}

// ------------------------------------------------------------------- predict

void check_predict() {
  // Two identical point-mass draws: bands collapse and the extrapolation
  // must match a direct library call bit for bit.
  const fs::path drawsf = g_root / "point_draws.csv";
  write_text(drawsf,
             "chain,draw,divergent,eta,theta,rho\n"
             "0,1,0,0.5,5,0\n"
             "0,2,0,0.5,5,0\n");
  CostSequence costs;
  costs.od_id = "a";
  costs.costs.resize(12, 2);
  for (int t = 0; t < 12; ++t) costs.costs.row(t) << 0.0, 10.0;
  const fs::path cf = g_root / "pred_costs.csv";
  store_costs_csv({costs}, cf.string());

  const fs::path d = g_root / "pred";
  check(run("predict --draws " + drawsf.string() + " --costs " + cf.string() +
                " --train-days 8 --n 7 --seed 3 --out " + d.string()) == 0,
        "predict exits 0");
  const auto bands = parse_csv(d / "bands.csv");
  check(int(bands.size()) == 1 + 12 * 3 && bands[0][0] == "day" && bands[0][6] == "hi95",
        "bands.csv covers every day and alternative");

  Eigen::MatrixXd mat(2, 3);
  mat << 0.5, 5.0, 0.0, 0.5, 5.0, 0.0;
  const ExtrapolationResult ex =
      extrapolate(mat, slice_days(costs, 0, 8), slice_days(costs, 8, 4));
  const auto rows = parse_csv(d / "extrapolation.csv");
  bool match = int(rows.size()) == 1 + 4 * 3;
  if (match) {
    for (int t = 0; t < 4 && match; ++t)
      for (int a = 0; a < 3 && match; ++a) {
        const auto& r = rows[std::size_t(1 + t * 3 + a)];
        match = r[0] == std::to_string(t + 1) && r[1] == std::to_string(a) &&
                std::abs(std::stod(r[2]) - ex.mean(t, a)) < 1e-12 &&
                std::abs(std::stod(r[5]) - ex.lo95(t, a)) < 1e-12 &&
                std::abs(std::stod(r[6]) - ex.hi95(t, a)) < 1e-12;
      }
  }
  check(match, "extrapolation.csv equals the value recursion for the stored draws");
  check(run("predict --draws " + drawsf.string() + " --costs " + cf.string() +
                " --train-days 12 --out " + (g_root / "pred_bad").string()) == 2,
        "predict rejects --train-days covering the whole horizon");
}

// --------------------------------------------------------- compare, diagnose

void check_compare() {
  const fs::path drawsf = g_root / "cmp_draws.csv";
  write_text(drawsf,
             "chain,draw,divergent,eta,theta,rho\n"
             "0,1,0,0.5,1.2,0.1\n"
             "0,2,0,0.52,0.8,0.12\n"
             "0,3,0,0.48,1.1,0.09\n"
             "0,4,0,0.51,0.9,0.11\n");
  const fs::path d = g_root / "cmp";
  check(run("compare --draws-a " + drawsf.string() + " --draws-b " + drawsf.string() +
                " --seed 9 --out " + d.string()) == 0,
        "compare exits 0");
  const json rope = json::parse(slurp(d / "rope.json"));
  check(rope.at("verdict") == "equivalent" && rope.at("inside") == 1.0 &&
            rope.at("interval")[0] == -0.1 && rope.at("interval")[1] == 0.1,
        "a fit compared with itself is equivalent under the default rope");
}

void check_diagnose() {
  const fs::path d = g_root / "diag";
  check(run("diagnose --draws " + (g_root / "fit1" / "draws.csv").string() + " --out " +
            d.string()) == 0,
        "diagnose exits 0 on converged draws");
  check(fs::exists(d / "diagnostics.json"), "diagnose writes diagnostics.json");

  // Two well-separated chains: R-hat blows up, so --strict must exit 4.
  std::string text = "chain,draw,divergent,x\n";
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 40; ++i)
      text += std::to_string(c) + "," + std::to_string(i + 1) + ",0," +
              std::to_string(10.0 * c + 0.1 * std::sin(double(i))) + "\n";
  const fs::path stuck = g_root / "stuck_draws.csv";
  write_text(stuck, text);
  check(run("diagnose --draws " + stuck.string() + " --out " + (g_root / "diag2").string()) == 0,
        "non-strict diagnose only warns about a bad R-hat");
  check(run("diagnose --strict --draws " + stuck.string() + " --out " +
            (g_root / "diag3").string()) == 4,
        "--strict escalates the R-hat warning to exit 4");
}

// ---------------------------------------------------------------- experiment

void check_experiment() {
  const fs::path cfg = g_root / "exp_cfg.json";
  json j;
  j["experiment"] = {{"replications", 2}, {"cells", {{3, 6}}}, {"workers", 1}};
  j["sampler"] = {{"chains", 2}, {"warmup", 150}, {"draws", 100}};
  write_text(cfg, j.dump());
  const fs::path d = g_root / "exp";
  check(run("experiment --kind pooled --config " + cfg.string() + " --seed 31 --out " +
            d.string()) == 0,
        "experiment pooled exits 0");
  const auto rows = parse_csv(d / "metrics.csv");
  bool ok = rows.size() == 4 && rows[0][0] == "N" && rows[0][7] == "failures";
  if (ok)
    for (int i = 1; i <= 3; ++i) ok = ok && rows[std::size_t(i)][0] == "3" && rows[std::size_t(i)][1] == "6";
  check(ok, "metrics.csv holds one row per pooled parameter for the requested cell");
  check(fs::exists(d / "manifest.json"), "experiment writes a manifest");
}

// -------------------------------------------------------------- global errors

void check_cli_errors() {
  check(run("frobnicate") == 2, "unknown subcommand exits 2");
  check(run("simulate --model pooled --bogus 1 --out " + (g_root / "e1").string()) == 2,
        "unknown flag exits 2");
  check(run("simulate --model pooled --env mars --out " + (g_root / "e2").string()) == 2,
        "unknown environment exits 2");
  const fs::path cfg = g_root / "bad_section.json";
  write_text(cfg, json{{"typo", json::object()}}.dump());
  check(run("simulate --model pooled --t 5 --config " + cfg.string() + " --out " +
            (g_root / "e3").string()) == 2,
        "unknown config section exits 2");
  check(run("diagnose --draws " + (g_root / "nope.csv").string() + " --out " +
            (g_root / "e4").string()) == 3,
        "missing draws file exits 3");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s path/to/d2d\n", argv[0]);
    return 2;
  }
  g_bin = argv[1];
  g_root = fs::temp_directory_path() / "d2d_cli_check";
  std::error_code ec;
  fs::remove_all(g_root, ec);
  fs::create_directories(g_root);
  g_log = g_root / "cli.log";
  setenv("SOURCE_DATE_EPOCH", "1700000000", 1);

  check_simulate_pooled();
  check_simulate_anonymize();
  check_simulate_smith();
  check_simulate_horowitz();
  check_fit_pooled();
  check_fit_errors();
  check_fit_hier_counts();
  check_predict();
  check_compare();
  check_diagnose();
  check_experiment();
  check_cli_errors();

  if (g_failed > 0) {
    std::printf("\n--- command log ---\n%s", slurp(g_log).c_str());
    std::printf("\n%d check(s) failed\n", g_failed);
    return 1;
  }
  std::printf("\nall cli checks passed\n");
  return 0;
}
