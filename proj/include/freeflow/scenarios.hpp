#pragma once

// Shipped scenario library: a bottlenecked single road for flow-density
// calibration, a two-into-one merge for the speed-modulation proof of
// concept, and a twelve-segment corridor with four demand inflows whose
// relative volumes follow a west-to-east commuter pattern (each successive
// ramp adds traffic; everything exits at the east end).

#include <string>
#include <vector>

#include "freeflow/network.hpp"

namespace freeflow {

/// Calibration road: a 2 km measured segment feeding a short, slower outlet.
/// The outlet's lower ceiling backs a moving queue onto the measured segment
/// once demand exceeds its discharge rate, so a demand sweep reaches both the
/// rising and the falling branch of the volume-density curve.
inline ScenarioConfig single_segment_scenario() {
  ScenarioConfig cfg;
  Link road;
  road.id = "road";
  road.length_m = 2000.0;
  road.speed_limit_kmh = 60.0;
  road.from_node = "west";
  road.to_node = "narrows";
  Link sink;
  sink.id = "sink";
  sink.length_m = 400.0;
  sink.speed_limit_kmh = 20.0;
  sink.from_node = "narrows";
  sink.to_node = "east";
  sink.exit = true;
  cfg.links = {road, sink};

  Connector thru;
  thru.kind = ConnectorKind::Through;
  thru.upstream = {0};
  thru.downstream = {1};
  thru.priority = {0};
  cfg.connectors = {thru};

  Route r;
  r.id = "main";
  r.links = {0, 1};
  r.weight = 1.0;
  cfg.routes = {r};

  EntrySpec e;
  e.link = 0;
  e.windows = {{0.0, 1500.0, 800.0}};
  cfg.entries = {e};
  cfg.links[0].entry_of = cfg.links[0].id;

  cfg.sim.duration_s = 1500.0;
  cfg.sim.step_s = 0.5;
  cfg.sim.control_interval_s = 60.0;
  cfg.sim.seed = 1;
  return cfg;
}

/// Two-into-one merge under sustained overload: a major road and a ramp feed
/// one outlet whose own discharge is capped by a short, slower sink, so the
/// outlet inevitably fills past the critical occupancy; speed modulation can
/// only defer that moment. Demands are 2:1 major:ramp and together exceed the
/// sink's discharge rate.
inline ScenarioConfig merge_2to1_scenario(double major_vph = 700.0, double ramp_vph = 350.0,
                                          double duration_s = 1800.0) {
  ScenarioConfig cfg;
  Link major;
  major.id = "major";
  major.length_m = 2000.0;
  major.speed_limit_kmh = 60.0;
  major.from_node = "west";
  major.to_node = "junction";
  Link ramp;
  ramp.id = "ramp";
  ramp.length_m = 300.0;
  ramp.speed_limit_kmh = 60.0;
  ramp.from_node = "south";
  ramp.to_node = "junction";
  Link outlet;
  outlet.id = "outlet";
  outlet.length_m = 2000.0;
  outlet.speed_limit_kmh = 60.0;
  outlet.from_node = "junction";
  outlet.to_node = "narrows";
  Link sink;
  sink.id = "sink";
  sink.length_m = 400.0;
  sink.speed_limit_kmh = 20.0;
  sink.from_node = "narrows";
  sink.to_node = "east";
  sink.exit = true;
  cfg.links = {major, ramp, outlet, sink};

  Connector merge;
  merge.kind = ConnectorKind::Merge;
  merge.upstream = {0, 1};
  merge.downstream = {2};
  merge.priority = {0, 1};
  merge.signalized = true;  // signal baselines may govern it; gap acceptance otherwise
  Connector thru;
  thru.kind = ConnectorKind::Through;
  thru.upstream = {2};
  thru.downstream = {3};
  thru.priority = {2};
  cfg.connectors = {merge, thru};

  Route via_major;
  via_major.id = "major_east";
  via_major.links = {0, 2, 3};
  via_major.weight = 1.0;
  Route via_ramp;
  via_ramp.id = "ramp_east";
  via_ramp.links = {1, 2, 3};
  via_ramp.weight = 1.0;
  cfg.routes = {via_major, via_ramp};

  EntrySpec on_major;
  on_major.link = 0;
  on_major.windows = {{0.0, duration_s, major_vph}};
  EntrySpec on_ramp;
  on_ramp.link = 1;
  on_ramp.windows = {{0.0, duration_s, ramp_vph}};
  cfg.entries = {on_major, on_ramp};
  for (const EntrySpec& e : cfg.entries) cfg.links[e.link].entry_of = cfg.links[e.link].id;

  cfg.sim.duration_s = duration_s;
  cfg.sim.step_s = 0.5;
  cfg.sim.control_interval_s = 60.0;
  cfg.sim.seed = 1;
  return cfg;
}

/// Demand level for the twelve-segment corridor.
enum class CorridorLoad { Low, High };

/// Twelve-segment commuter corridor: nine 2 km mainline links (each its own
/// super-segment) with three ramps merging in from the south, plus the
/// mainline entry — four inflow points whose relative volumes follow a
/// cumulative west-to-east pattern (heaviest at the third inflow). The high
/// load oversubscribes the mainline's single-lane discharge so congestion
/// builds near the east end; the low load keeps it just under saturation.
inline ScenarioConfig mainz_corridor_scenario(CorridorLoad load) {
  ScenarioConfig cfg;
  const int n_main = 9;
  for (int i = 0; i < n_main; ++i) {
    Link m;
    m.id = "m" + std::to_string(i + 1);
    m.length_m = 2000.0;
    m.speed_limit_kmh = 60.0;
    m.from_node = "n" + std::to_string(i);
    m.to_node = "n" + std::to_string(i + 1);
    m.exit = i == n_main - 1;
    cfg.links.push_back(m);
  }
  // Ramps join ahead of mainline links m3, m5, m7 (indices 2, 4, 6). Short
  // urban on-ramps are posted at 30 km/h.
  const int ramp_targets[3] = {2, 4, 6};
  for (int k = 0; k < 3; ++k) {
    Link r;
    r.id = "ramp" + std::to_string(k + 1);
    r.length_m = 300.0;
    r.speed_limit_kmh = 30.0;
    r.from_node = "s" + std::to_string(k + 1);
    r.to_node = "n" + std::to_string(ramp_targets[k]);
    cfg.links.push_back(r);
  }
  const int ramp_link0 = n_main;  // index of ramp1

  for (int i = 0; i + 1 < n_main; ++i) {
    bool merged = false;
    for (int k = 0; k < 3; ++k) {
      if (ramp_targets[k] != i + 1) continue;
      Connector c;
      c.kind = ConnectorKind::Merge;
      c.upstream = {i, ramp_link0 + k};
      c.downstream = {i + 1};
      c.priority = {i, ramp_link0 + k};
      c.signalized = true;
      cfg.connectors.push_back(c);
      merged = true;
    }
    if (!merged) {
      Connector c;
      c.kind = ConnectorKind::Through;
      c.upstream = {i};
      c.downstream = {i + 1};
      c.priority = {i};
      cfg.connectors.push_back(c);
    }
  }

  Route mainline;
  mainline.id = "mainline";
  for (int i = 0; i < n_main; ++i) mainline.links.push_back(i);
  mainline.weight = 1.0;  // ties in partition order resolve by declaration
  cfg.routes.push_back(mainline);
  for (int k = 0; k < 3; ++k) {
    Route r;
    r.id = "ramp" + std::to_string(k + 1) + "_east";
    r.links.push_back(ramp_link0 + k);
    for (int i = ramp_targets[k]; i < n_main; ++i) r.links.push_back(i);
    r.weight = 1.0;
    cfg.routes.push_back(r);
  }

  // Inflow volumes keep the corridor's 16:9:20:13 west-to-east ratio at both
  // loads; High oversubscribes the single-lane discharge, Low stays under it.
  const double high[4] = {440.0, 250.0, 550.0, 360.0};
  const double low[4] = {270.0, 150.0, 340.0, 220.0};
  const double* demand = load == CorridorLoad::High ? high : low;
  double duration = load == CorridorLoad::High ? 2500.0 : 1200.0;
  int entry_links[4] = {0, ramp_link0, ramp_link0 + 1, ramp_link0 + 2};
  for (int k = 0; k < 4; ++k) {
    EntrySpec e;
    e.link = entry_links[k];
    e.windows = {{0.0, duration, demand[k]}};
    cfg.entries.push_back(e);
    cfg.links[e.link].entry_of = cfg.links[e.link].id;
  }

  cfg.sim.duration_s = duration;
  cfg.sim.step_s = 0.5;
  cfg.sim.control_interval_s = 60.0;
  cfg.sim.seed = 1;
  return cfg;
}

/// Library lookup by name; throws ConfigError with the known names otherwise.
inline ScenarioConfig scenario_by_name(const std::string& name) {
  if (name == "single_segment") return single_segment_scenario();
  if (name == "merge_2to1") return merge_2to1_scenario();
  if (name == "mainz_corridor_high") return mainz_corridor_scenario(CorridorLoad::High);
  if (name == "mainz_corridor_low") return mainz_corridor_scenario(CorridorLoad::Low);
  throw ConfigError("unknown scenario '" + name +
                    "'; shipped scenarios: single_segment, merge_2to1, "
                    "mainz_corridor_high, mainz_corridor_low");
}

inline const std::vector<std::string>& shipped_scenario_names() {
  static const std::vector<std::string> kNames = {"single_segment", "merge_2to1",
                                                  "mainz_corridor_high", "mainz_corridor_low"};
  return kNames;
}

}  // namespace freeflow
