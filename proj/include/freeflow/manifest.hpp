#pragma once

// Reproducibility sidecar: every results file a command writes is accompanied
// by a manifest recording what produced it — the command line, the scenario's
// content hash, the seed list, the code version, and the output paths. The
// manifest is written before the results (with the wall-clock field still
// open) and rewritten once the run completes, so a crashed run leaves an
// honest partial record. A rerun driven by the manifest must reproduce the
// results byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freeflow/core.hpp"
#include "freeflow/metrics.hpp"

namespace freeflow {

inline constexpr const char* kCodeVersion = "freeflow 1.0.0";

struct RunManifest {
  std::string command_line;  // argv joined with spaces, for provenance
  std::string subcommand;    // simulate | train | eval | calibrate | poc-merge
  std::string scenario;      // shipped name or file path, as given
  std::uint64_t scenario_hash = 0;  // fnv1a64 of the canonical scenario bytes
  std::string controller;           // simulate / poc-merge controller type
  std::string policy_path;          // eval: policy file
  std::uint64_t policy_hash = 0;    // eval: fnv1a64 of the policy bytes
  std::string regime;               // train: src | src-tl
  int episodes = 0;                 // train
  std::uint64_t train_seed = 0;     // train
  double compliance = -1.0;         // simulate: override, -1 = scenario value
  std::vector<std::uint64_t> seeds;
  std::vector<double> demands;       // calibrate
  std::vector<std::string> outputs;  // result files this run writes
  std::string code_version = kCodeVersion;
  double wall_clock_s = -1.0;  // -1 until the run has completed

  bool operator==(const RunManifest&) const = default;
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command_line"] = m.command_line;
  j["subcommand"] = m.subcommand;
  j["scenario"] = m.scenario;
  j["scenario_hash"] = m.scenario_hash;
  if (!m.controller.empty()) j["controller"] = m.controller;
  if (!m.policy_path.empty()) {
    j["policy_path"] = m.policy_path;
    j["policy_hash"] = m.policy_hash;
  }
  if (!m.regime.empty()) {
    j["regime"] = m.regime;
    j["episodes"] = m.episodes;
    j["train_seed"] = m.train_seed;
  }
  if (m.compliance >= 0.0) j["compliance"] = m.compliance;
  j["seeds"] = m.seeds;
  if (!m.demands.empty()) j["demands"] = m.demands;
  j["outputs"] = m.outputs;
  j["code_version"] = m.code_version;
  j["wall_clock_s"] = m.wall_clock_s;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command_line = j.at("command_line").get<std::string>();
  m.subcommand = j.at("subcommand").get<std::string>();
  m.scenario = j.at("scenario").get<std::string>();
  m.scenario_hash = j.at("scenario_hash").get<std::uint64_t>();
  if (j.contains("controller")) m.controller = j["controller"].get<std::string>();
  if (j.contains("policy_path")) {
    m.policy_path = j["policy_path"].get<std::string>();
    m.policy_hash = j.at("policy_hash").get<std::uint64_t>();
  }
  if (j.contains("regime")) {
    m.regime = j["regime"].get<std::string>();
    m.episodes = j.at("episodes").get<int>();
    m.train_seed = j.at("train_seed").get<std::uint64_t>();
  }
  if (j.contains("compliance")) m.compliance = j["compliance"].get<double>();
  m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("demands")) m.demands = j["demands"].get<std::vector<double>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  m.code_version = j.at("code_version").get<std::string>();
  m.wall_clock_s = j.at("wall_clock_s").get<double>();
  return m;
}

/// Manifest path for a results file: the file's path plus ".manifest.json".
inline std::string manifest_path_for(const std::string& results_path) {
  return results_path + ".manifest.json";
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

inline RunManifest read_manifest(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const RunError& e) {
    // An absent or unreadable manifest is bad input, not a mid-run failure.
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
  try {
    return manifest_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
}

}  // namespace freeflow
