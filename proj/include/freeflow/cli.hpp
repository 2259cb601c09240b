#pragma once

// Command-line front door: binds scenarios, controllers, training, evaluation,
// calibration, and the merge proof-of-concept into reproducible experiments.
// Every results file is written next to a manifest sidecar, and `replay`
// re-executes a manifest to reproduce the results byte for byte.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "freeflow/calibration.hpp"
#include "freeflow/manifest.hpp"
#include "freeflow/rl.hpp"
#include "freeflow/runner.hpp"
#include "freeflow/scenarios.hpp"

namespace freeflow {
namespace cli_detail {

inline std::string join_argv(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("seed list: '" + tok + "' is not a non-negative integer");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (seeds.empty()) throw ConfigError("seed list must not be empty");
  return seeds;
}

inline std::vector<double> parse_demand_list(const std::string& text) {
  std::vector<double> demands;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    try {
      std::size_t used = 0;
      double d = std::stod(tok, &used);
      if (used != tok.size() || d < 0.0 || !std::isfinite(d)) throw std::invalid_argument(tok);
      demands.push_back(d);
    } catch (const std::exception&) {
      throw ConfigError("demand list: '" + tok + "' is not a non-negative number");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (demands.empty()) throw ConfigError("demand list must not be empty");
  return demands;
}

/// Read an input file, reporting a missing path as a usage error rather than
/// a runtime failure.
inline std::string read_input_file(const std::string& path, const std::string& what) {
  try {
    return read_text_file(path);
  } catch (const RunError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

/// A scenario argument is either a shipped name or a path to a scenario file.
inline ScenarioConfig resolve_scenario(const std::string& arg) {
  const auto& names = shipped_scenario_names();
  if (std::find(names.begin(), names.end(), arg) != names.end()) return scenario_by_name(arg);
  return parse_scenario(read_input_file(arg, "scenario file"));
}

/// Basename without directory or extension; used for default output names.
inline std::string scenario_stem(const std::string& arg) {
  std::filesystem::path p(arg);
  std::string stem = p.stem().string();
  return stem.empty() ? std::string("scenario") : stem;
}

inline std::uint64_t scenario_hash_of(const ScenarioConfig& cfg) {
  return fnv1a64(serialize_scenario(cfg));
}

/// Insert ".replay" ahead of the extension (or append it when there is none).
inline std::string replay_path(const std::string& path, const std::string& out_dir) {
  std::filesystem::path p(path);
  if (!out_dir.empty()) return (std::filesystem::path(out_dir) / p.filename()).string();
  std::filesystem::path with = p.parent_path() / (p.stem().string() + ".replay" + p.extension().string());
  return with.string();
}

inline const std::vector<double>& default_calibration_demands() {
  static const std::vector<double> kDemands = {0.0,    200.0,  400.0,  600.0,
                                               800.0,  1000.0, 1200.0, 1400.0,
                                               1700.0, 2000.0, 2200.0};
  return kDemands;
}

/// First instant (in whole seconds) at which the segment's occupancy exceeds
/// the threshold and stays above it for `sustain_s` consecutive seconds;
/// +infinity when that never happens.
inline double time_to_jam_s(const std::vector<std::vector<double>>& occupancy, int segment,
                            double rho_star, int sustain_s = 60) {
  int run = 0;
  for (std::size_t k = 0; k < occupancy.size(); ++k) {
    if (occupancy[k][static_cast<std::size_t>(segment)] > rho_star) {
      if (++run >= sustain_s) return static_cast<double>(k + 2 - static_cast<std::size_t>(sustain_s));
    } else {
      run = 0;
    }
  }
  return std::numeric_limits<double>::infinity();
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// --- Subcommand bodies. Each writes its manifest before its results, then
// --- rewrites it with the wall-clock duration once the run has completed.

struct SimulateArgs {
  std::string scenario;
  std::string controller = "none";
  std::string seeds = "1";
  std::string out;
  double compliance = -1.0;
  bool trace = false;
};

inline int run_simulate(const SimulateArgs& a, const std::string& command_line) {
  if (a.controller == "dqn")
    throw ConfigError("simulate runs rule-based controllers; use `eval --policy` for a trained policy");
  const auto& types = known_controller_types();
  if (std::find(types.begin(), types.end(), a.controller) == types.end())
    throw ConfigError("unknown controller '" + a.controller + "'");
  if (a.compliance != -1.0 && (a.compliance < 0.0 || a.compliance > 1.0))
    throw ConfigError("compliance must be within [0, 1]");

  ScenarioConfig cfg = resolve_scenario(a.scenario);
  std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  std::string out = a.out.empty()
                        ? scenario_stem(a.scenario) + "_" + a.controller + "_report.csv"
                        : a.out;
  std::string trace_prefix;
  RunManifest m;
  m.command_line = command_line;
  m.subcommand = "simulate";
  m.scenario = a.scenario;
  m.scenario_hash = scenario_hash_of(cfg);
  m.controller = a.controller;
  m.compliance = a.compliance;
  m.seeds = seeds;
  m.outputs = {out};
  if (a.trace) {
    trace_prefix = out.size() > 4 && out.substr(out.size() - 4) == ".csv"
                       ? out.substr(0, out.size() - 4) + "_trace"
                       : out + "_trace";
    for (std::uint64_t s : seeds)
      m.outputs.push_back(trace_prefix + "_seed" + std::to_string(s) + ".csv");
  }
  Timer timer;
  write_manifest(manifest_path_for(out), m);

  RoadNetwork net = build_network(cfg);
  ControllerSpec spec;
  spec.type = a.controller;
  spec.params = cfg.controller.type == a.controller ? cfg.controller.params
                                                    : nlohmann::json::object();
  RunOptions opt;
  opt.compliance = a.compliance;
  opt.trace_path_prefix = trace_prefix;
  std::vector<SeedOutcome> outcomes = run_seeds(net, spec, nullptr, seeds, opt);
  write_text_file(out, report_csv(reports_of(outcomes)));

  m.wall_clock_s = timer.elapsed_s();
  write_manifest(manifest_path_for(out), m);
  std::cout << "wrote " << out << " (" << seeds.size() << " seeds, controller "
            << a.controller << ")\n";
  return 0;
}

struct TrainArgs {
  std::string scenario;
  std::string regime;
  int episodes = 300;
  std::uint64_t seed = 7;
  std::string out;
  bool verbose = false;
};

inline int run_train(const TrainArgs& a, const std::string& command_line) {
  if (a.regime != "src" && a.regime != "src-tl")
    throw ConfigError("regime must be src or src-tl");
  if (a.episodes < 1) throw ConfigError("episodes must be at least 1");
  ScenarioConfig cfg = resolve_scenario(a.scenario);
  std::string out = a.out.empty() ? "policy_" + a.regime + ".json" : a.out;

  RunManifest m;
  m.command_line = command_line;
  m.subcommand = "train";
  m.scenario = a.scenario;
  m.scenario_hash = scenario_hash_of(cfg);
  m.regime = a.regime;
  m.episodes = a.episodes;
  m.train_seed = a.seed;
  m.seeds = {a.seed};
  m.outputs = {out};
  Timer timer;
  write_manifest(manifest_path_for(out), m);

  RoadNetwork net = build_network(cfg);
  TrainConfig tc;
  tc.episodes = a.episodes;
  tc.actions_kmh = a.regime == "src" ? std::vector<double>{30.0, 45.0, 60.0}
                                     : std::vector<double>{20.0, 40.0, 60.0};
  TrainResult res = train_dqn(net, tc, a.seed, a.verbose ? &std::cout : nullptr);
  save_policy(res.qnet, out);

  m.wall_clock_s = timer.elapsed_s();
  write_manifest(manifest_path_for(out), m);
  std::cout << "wrote " << out << " (" << a.episodes << " episodes, final return "
            << fmt_double(res.episode_return.empty() ? 0.0 : res.episode_return.back()) << ")\n";
  return 0;
}

struct EvalArgs {
  std::string policy;
  std::string scenario;
  std::string seeds = "1";
  std::string out;
};

inline int run_eval(const EvalArgs& a, const std::string& command_line) {
  std::string policy_bytes = read_input_file(a.policy, "policy file");
  QNetwork qnet = load_policy(a.policy);
  ScenarioConfig cfg = resolve_scenario(a.scenario);
  RoadNetwork net = build_network(cfg);
  if (qnet.n_segments() != net.n_segments()) {
    throw ConfigError("policy '" + a.policy + "' expects " + std::to_string(qnet.n_segments()) +
                      " super-segments, but scenario '" + a.scenario + "' has " +
                      std::to_string(net.n_segments()));
  }
  std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  std::string out = a.out.empty() ? scenario_stem(a.scenario) + "_dqn_report.csv" : a.out;

  RunManifest m;
  m.command_line = command_line;
  m.subcommand = "eval";
  m.scenario = a.scenario;
  m.scenario_hash = scenario_hash_of(cfg);
  m.controller = "dqn";
  m.policy_path = a.policy;
  m.policy_hash = fnv1a64(policy_bytes);
  m.seeds = seeds;
  m.outputs = {out};
  Timer timer;
  write_manifest(manifest_path_for(out), m);

  ControllerSpec unused;
  std::vector<SeedOutcome> outcomes = run_seeds(net, unused, &qnet, seeds);
  write_text_file(out, report_csv(reports_of(outcomes)));

  m.wall_clock_s = timer.elapsed_s();
  write_manifest(manifest_path_for(out), m);
  std::cout << "wrote " << out << " (" << seeds.size() << " seeds, policy " << a.policy << ")\n";
  return 0;
}

struct CalibrateArgs {
  std::string scenario = "single_segment";
  std::string demands;
  std::string seeds = "1,2,3";
  std::string out;
};

inline int run_calibrate(const CalibrateArgs& a, const std::string& command_line) {
  ScenarioConfig cfg = resolve_scenario(a.scenario);
  std::vector<double> demands =
      a.demands.empty() ? default_calibration_demands() : parse_demand_list(a.demands);
  std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  std::string stem = a.out.empty() ? scenario_stem(a.scenario) : a.out;
  std::string samples_path = stem + "_samples.csv";
  std::string fit_path = stem + "_fit.json";

  RunManifest m;
  m.command_line = command_line;
  m.subcommand = "calibrate";
  m.scenario = a.scenario;
  m.scenario_hash = scenario_hash_of(cfg);
  m.seeds = seeds;
  m.demands = demands;
  m.outputs = {samples_path, fit_path};
  Timer timer;
  write_manifest(manifest_path_for(samples_path), m);

  std::vector<VDFSample> samples = sweep_demand(cfg, demands, seeds);
  write_text_file(samples_path, samples_csv(samples));
  VDFFit fit = fit_vdf(samples);
  write_text_file(fit_path, fit_json(fit));

  m.wall_clock_s = timer.elapsed_s();
  write_manifest(manifest_path_for(samples_path), m);
  std::cout << "family=" << vdf_family_name(fit.family) << " rho_star=" << fmt_double(fit.rho_star)
            << " c_max=" << fmt_double(fit.c_max) << " sse=" << fmt_double(fit.sse)
            << " empirical_unimodal=" << (empirical_unimodal(samples) ? "yes" : "no") << "\n";
  std::cout << "wrote " << samples_path << " and " << fit_path << "\n";
  return 0;
}

struct PocMergeArgs {
  std::string controller = "none";
  std::string seeds = "1,2,3,4,5";
  std::string out;
};

inline int run_poc_merge(const PocMergeArgs& a, const std::string& command_line) {
  static const std::vector<std::string> kAllowed = {"none", "equal_split", "scats", "scoot",
                                                    "backpressure"};
  if (std::find(kAllowed.begin(), kAllowed.end(), a.controller) == kAllowed.end())
    throw ConfigError("poc-merge controller must be one of none/equal_split/scats/scoot/backpressure");
  std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds);
  std::string out = a.out.empty() ? "poc_merge_" + a.controller + ".csv" : a.out;

  ScenarioConfig merge_cfg = merge_2to1_scenario();
  RunManifest m;
  m.command_line = command_line;
  m.subcommand = "poc-merge";
  m.scenario = "merge_2to1";
  m.scenario_hash = scenario_hash_of(merge_cfg);
  m.controller = a.controller;
  m.seeds = seeds;
  m.outputs = {out};
  Timer timer;
  write_manifest(manifest_path_for(out), m);

  // The jam threshold is the critical occupancy fitted on the calibration
  // road, not a constant: the merge outlet is "jammed" once it crosses the
  // occupancy at which measured flow peaks.
  VDFFit fit = fit_vdf(sweep_demand(single_segment_scenario(), default_calibration_demands(),
                                    {1, 2, 3}));
  RoadNetwork net = build_network(merge_cfg);
  ControllerSpec spec;
  spec.type = a.controller;
  RunOptions opt;
  opt.record_occupancy = true;
  std::vector<SeedOutcome> outcomes = run_seeds(net, spec, nullptr, seeds, opt);

  // Outlet = the segment holding the merge's downstream link.
  int outlet_segment = 0;
  int outlet_link = merge_cfg.connectors[0].downstream[0];
  for (int s = 0; s < net.n_segments(); ++s) {
    const auto& ls = net.segments[static_cast<std::size_t>(s)].links;
    if (std::find(ls.begin(), ls.end(), outlet_link) != ls.end()) outlet_segment = s;
  }

  std::string csv = "seed,SPEEDAVG,VEHARR,TIMETOJAM_S\n";
  std::vector<double> speeds, arrivals, jams;
  for (const SeedOutcome& o : outcomes) {
    double ttj = time_to_jam_s(o.occupancy, outlet_segment, fit.rho_star);
    csv += std::to_string(o.report.seed) + "," + fmt_double(o.report.report.speed_avg_kmh) + "," +
           fmt_double(o.report.report.veh_arrived) + "," + fmt_double(ttj) + "\n";
    speeds.push_back(o.report.report.speed_avg_kmh);
    arrivals.push_back(o.report.report.veh_arrived);
    jams.push_back(ttj);
  }
  csv += "median," + fmt_double(median_of(speeds)) + "," + fmt_double(median_of(arrivals)) + "," +
         fmt_double(median_of(jams)) + "\n";
  write_text_file(out, csv);

  m.wall_clock_s = timer.elapsed_s();
  write_manifest(manifest_path_for(out), m);
  std::cout << "controller=" << a.controller << " rho_star=" << fmt_double(fit.rho_star)
            << " median: speed=" << fmt_double(median_of(speeds))
            << " km/h, throughput=" << fmt_double(median_of(arrivals))
            << " veh, time_to_jam=" << fmt_double(median_of(jams)) << " s\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

inline int run_replay(const std::string& manifest_arg, const std::string& out_dir,
                      const std::string& command_line) {
  RunManifest m = read_manifest(manifest_arg);
  if (m.code_version != kCodeVersion) {
    std::cerr << "warning: manifest was written by " << m.code_version << ", this is "
              << kCodeVersion << "\n";
  }
  // The stored hash must still match the scenario bytes the rerun would use.
  if (m.subcommand != "poc-merge") {
    ScenarioConfig cfg = resolve_scenario(m.scenario);
    std::uint64_t h = scenario_hash_of(cfg);
    if (h != m.scenario_hash) {
      throw ConfigError("scenario '" + m.scenario + "' no longer matches the manifest (hash " +
                        std::to_string(h) + " vs recorded " + std::to_string(m.scenario_hash) + ")");
    }
  }

  std::string seeds;
  for (std::size_t i = 0; i < m.seeds.size(); ++i)
    seeds += (i ? "," : "") + std::to_string(m.seeds[i]);

  if (m.subcommand == "simulate") {
    SimulateArgs a;
    a.scenario = m.scenario;
    a.controller = m.controller;
    a.seeds = seeds;
    a.compliance = m.compliance;
    a.out = replay_path(m.outputs.at(0), out_dir);
    // Per-seed traces are not replayed; the report is the reproducible result.
    return run_simulate(a, command_line);
  }
  if (m.subcommand == "train") {
    TrainArgs a;
    a.scenario = m.scenario;
    a.regime = m.regime;
    a.episodes = m.episodes;
    a.seed = m.train_seed;
    a.out = replay_path(m.outputs.at(0), out_dir);
    return run_train(a, command_line);
  }
  if (m.subcommand == "eval") {
    std::string policy_bytes = read_input_file(m.policy_path, "policy file");
    if (fnv1a64(policy_bytes) != m.policy_hash)
      throw ConfigError("policy file '" + m.policy_path + "' no longer matches the manifest");
    EvalArgs a;
    a.policy = m.policy_path;
    a.scenario = m.scenario;
    a.seeds = seeds;
    a.out = replay_path(m.outputs.at(0), out_dir);
    return run_eval(a, command_line);
  }
  if (m.subcommand == "calibrate") {
    CalibrateArgs a;
    a.scenario = m.scenario;
    a.seeds = seeds;
    std::string demands;
    for (std::size_t i = 0; i < m.demands.size(); ++i)
      demands += (i ? "," : "") + fmt_double(m.demands[i]);
    a.demands = demands;
    // run_calibrate derives both outputs from one stem; replay the stem.
    const std::string& samples = m.outputs.at(0);
    if (samples.size() > 12 && samples.substr(samples.size() - 12) == "_samples.csv")
      a.out = replay_path(samples.substr(0, samples.size() - 12), out_dir);
    else
      throw ConfigError("calibrate manifest output '" + samples + "' does not end in _samples.csv");
    return run_calibrate(a, command_line);
  }
  if (m.subcommand == "poc-merge") {
    PocMergeArgs a;
    a.controller = m.controller;
    a.seeds = seeds;
    a.out = replay_path(m.outputs.at(0), out_dir);
    return run_poc_merge(a, command_line);
  }
  throw ConfigError("manifest subcommand '" + m.subcommand + "' is not replayable");
}

inline int run_emit_scenarios(const std::string& dir) {
  std::filesystem::create_directories(dir.empty() ? "." : dir);
  for (const std::string& name : shipped_scenario_names()) {
    std::string path = (std::filesystem::path(dir.empty() ? "." : dir) / (name + ".json")).string();
    write_text_file(path, serialize_scenario(scenario_by_name(name)) + "\n");
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

}  // namespace cli_detail

/// Entry point behind main(): parses argv, dispatches, and maps errors to the
/// documented exit codes (0 ok, 1 runtime failure, 2 usage/config error).
inline int run_command(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"deterministic single-lane traffic experiments"};
  app.require_subcommand(1);
  std::string command_line = join_argv(argc, argv);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "run a scenario under a rule-based controller");
  sim->add_option("--scenario", sim_args.scenario, "shipped scenario name or scenario file")
      ->required();
  sim->add_option("--controller", sim_args.controller, "controller type (default none)");
  sim->add_option("--seeds", sim_args.seeds, "comma-separated seed list (default 1)");
  sim->add_option("--out", sim_args.out, "report CSV path");
  sim->add_option("--compliance", sim_args.compliance, "fraction obeying commands, overrides scenario");
  sim->add_flag("--trace", sim_args.trace, "write per-seed vehicle trace CSVs");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train the speed-modulation policy");
  train->add_option("--scenario", train_args.scenario, "shipped scenario name or scenario file")
      ->required();
  train->add_option("--regime", train_args.regime, "src (30/45/60) or src-tl (20/40/60)")
      ->required();
  train->add_option("--episodes", train_args.episodes, "training episodes (default 300)");
  train->add_option("--seed", train_args.seed, "training seed (default 7)");
  train->add_option("--out", train_args.out, "policy output path");
  train->add_flag("--verbose", train_args.verbose, "log per-episode returns");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "greedy rollouts of a trained policy");
  eval->add_option("--policy", eval_args.policy, "policy file from train")->required();
  eval->add_option("--scenario", eval_args.scenario, "shipped scenario name or scenario file")
      ->required();
  eval->add_option("--seeds", eval_args.seeds, "comma-separated seed list (default 1)");
  eval->add_option("--out", eval_args.out, "report CSV path");

  CalibrateArgs cal_args;
  CLI::App* cal = app.add_subcommand("calibrate", "demand sweep and volume-density fit");
  cal->add_option("--scenario", cal_args.scenario, "single-entry scenario (default single_segment)");
  cal->add_option("--demands", cal_args.demands, "comma-separated veh/hr demand levels");
  cal->add_option("--seeds", cal_args.seeds, "comma-separated seed list (default 1,2,3)");
  cal->add_option("--out", cal_args.out, "output stem (default scenario name)");

  PocMergeArgs poc_args;
  CLI::App* poc = app.add_subcommand("poc-merge", "merge bottleneck proof of concept");
  poc->add_option("--controller", poc_args.controller,
                  "none|equal_split|scats|scoot|backpressure (default none)");
  poc->add_option("--seeds", poc_args.seeds, "comma-separated seed list (default 1,2,3,4,5)");
  poc->add_option("--out", poc_args.out, "results CSV path");

  std::string replay_manifest, replay_dir;
  CLI::App* rep = app.add_subcommand("replay", "re-run a manifest and reproduce its results");
  rep->add_option("--manifest", replay_manifest, "manifest sidecar path")->required();
  rep->add_option("--out-dir", replay_dir, "directory for the reproduced outputs");

  std::string emit_dir = "scenarios";
  CLI::App* emit = app.add_subcommand("emit-scenarios", "write the shipped scenario files");
  emit->add_option("--dir", emit_dir, "output directory (default scenarios)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return run_simulate(sim_args, command_line);
    if (train->parsed()) return run_train(train_args, command_line);
    if (eval->parsed()) return run_eval(eval_args, command_line);
    if (cal->parsed()) return run_calibrate(cal_args, command_line);
    if (poc->parsed()) return run_poc_merge(poc_args, command_line);
    if (rep->parsed()) return run_replay(replay_manifest, replay_dir, command_line);
    if (emit->parsed()) return run_emit_scenarios(emit_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace freeflow
