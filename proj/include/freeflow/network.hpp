#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freeflow/core.hpp"

namespace freeflow {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Scenario configuration: the parsed, validated form of a scenario document.
// ---------------------------------------------------------------------------

struct Link {
  std::string id;
  double length_m = 0.0;
  double speed_limit_kmh = 0.0;
  std::string from_node;
  std::string to_node;
  bool exit = false;
  // Demand-source id when this link is an entry; filled from the entries table.
  std::optional<std::string> entry_of;

  bool operator==(const Link&) const = default;
};

enum class ConnectorKind { Merge, Diverge, Through };

inline const char* to_string(ConnectorKind k) {
  switch (k) {
    case ConnectorKind::Merge: return "merge";
    case ConnectorKind::Diverge: return "diverge";
    case ConnectorKind::Through: return "through";
  }
  return "?";
}

struct Connector {
  ConnectorKind kind = ConnectorKind::Through;
  std::vector<int> upstream;   // link indices
  std::vector<int> downstream; // link indices
  // Priority order over upstream links at a merge; priority[0] is the major
  // stream. Always a permutation of `upstream`.
  std::vector<int> priority;
  bool signalized = false;

  bool operator==(const Connector&) const = default;
};

struct Route {
  std::string id;
  std::vector<int> links;  // ordered upstream -> downstream
  double weight = 1.0;

  bool operator==(const Route&) const = default;
};

struct DemandWindow {
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  double rate_veh_per_hr = 0.0;

  bool operator==(const DemandWindow&) const = default;
};

struct EntrySpec {
  int link = -1;
  std::vector<DemandWindow> windows;

  bool operator==(const EntrySpec&) const = default;
};

struct SimSpec {
  double duration_s = 0.0;
  double step_s = 0.1;
  double control_interval_s = 60.0;
  std::uint64_t seed = 1;
  double compliance = 1.0;

  bool operator==(const SimSpec&) const = default;
};

struct ControllerSpec {
  std::string type = "none";
  json params = json::object();

  bool operator==(const ControllerSpec&) const = default;
};

inline const std::vector<std::string>& known_controller_types() {
  static const std::vector<std::string> kTypes = {
      "none",       "equal_split", "prop_split", "green_wave",
      "scats",      "scoot",       "backpressure", "dqn"};
  return kTypes;
}

/// A validated scenario: links, connectors, routes, demand, simulation and
/// controller settings. Field values are exactly what a round-trip through
/// serialize_scenario/parse_scenario reproduces.
struct ScenarioConfig {
  std::vector<Link> links;
  std::vector<Connector> connectors;
  std::vector<Route> routes;
  std::vector<EntrySpec> entries;
  SimSpec sim;
  ControllerSpec controller;

  bool operator==(const ScenarioConfig&) const = default;

  int link_index(const std::string& id) const {
    for (std::size_t i = 0; i < links.size(); ++i)
      if (links[i].id == id) return static_cast<int>(i);
    return -1;
  }
};

// ---------------------------------------------------------------------------
// Parsing and serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string line_col_of_offset(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline const json& require_field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ConfigError(where + ": missing required field \"" + key + "\"");
  return *it;
}

inline double require_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require_field(obj, key, where);
  if (!v.is_number()) throw ConfigError(where + ": field \"" + key + "\" must be a number");
  return v.get<double>();
}

inline std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require_field(obj, key, where);
  if (!v.is_string()) throw ConfigError(where + ": field \"" + key + "\" must be a string");
  return v.get<std::string>();
}

}  // namespace detail

/// Structural validation shared by parse_scenario and build_network. Throws
/// ConfigError naming the violated invariant.
inline void validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.links.empty()) throw ConfigError("scenario: no links defined");
  std::set<std::string> ids;
  for (const Link& l : cfg.links) {
    if (!ids.insert(l.id).second) throw ConfigError("link '" + l.id + "': duplicate id");
    if (!(l.length_m > 0)) throw ConfigError("link '" + l.id + "': length_m must be > 0");
    if (!(l.speed_limit_kmh > 0))
      throw ConfigError("link '" + l.id + "': speed_limit_kmh must be > 0");
  }

  auto check_idx = [&](int idx, const std::string& where) {
    if (idx < 0 || idx >= static_cast<int>(cfg.links.size()))
      throw ConfigError(where + ": unresolved link reference");
  };

  std::vector<int> out_degree(cfg.links.size(), 0);
  for (std::size_t ci = 0; ci < cfg.connectors.size(); ++ci) {
    const Connector& c = cfg.connectors[ci];
    const std::string where = "connector #" + std::to_string(ci);
    for (int u : c.upstream) check_idx(u, where);
    for (int d : c.downstream) check_idx(d, where);
    switch (c.kind) {
      case ConnectorKind::Merge:
        if (c.upstream.size() < 2 || c.downstream.size() != 1)
          throw ConfigError(where + ": merge requires >= 2 upstream links and exactly 1 downstream");
        break;
      case ConnectorKind::Diverge:
        if (c.upstream.size() != 1 || c.downstream.size() < 2)
          throw ConfigError(where + ": diverge requires exactly 1 upstream link and >= 2 downstream");
        break;
      case ConnectorKind::Through:
        if (c.upstream.size() != 1 || c.downstream.size() != 1)
          throw ConfigError(where + ": through requires exactly 1 upstream and 1 downstream link");
        break;
    }
    std::vector<int> sorted_up = c.upstream, sorted_pr = c.priority;
    std::sort(sorted_up.begin(), sorted_up.end());
    std::sort(sorted_pr.begin(), sorted_pr.end());
    if (sorted_up != sorted_pr)
      throw ConfigError(where + ": priority must be a permutation of upstream links");
    for (int u : c.upstream) {
      if (++out_degree[u] > 1)
        throw ConfigError("link '" + cfg.links[u].id + "': appears upstream of more than one connector");
      if (cfg.links[u].exit)
        throw ConfigError("link '" + cfg.links[u].id + "': flagged exit but has an outgoing connector");
    }
  }

  // Route connectivity: consecutive links must share a connector edge.
  auto connected = [&](int a, int b) {
    for (const Connector& c : cfg.connectors) {
      bool up = std::find(c.upstream.begin(), c.upstream.end(), a) != c.upstream.end();
      bool dn = std::find(c.downstream.begin(), c.downstream.end(), b) != c.downstream.end();
      if (up && dn) return true;
    }
    return false;
  };
  std::set<std::string> route_ids;
  for (const Route& r : cfg.routes) {
    if (!route_ids.insert(r.id).second) throw ConfigError("route '" + r.id + "': duplicate id");
    if (r.links.empty()) throw ConfigError("route '" + r.id + "': empty link list");
    for (int l : r.links) check_idx(l, "route '" + r.id + "'");
    for (std::size_t i = 0; i + 1 < r.links.size(); ++i) {
      if (!connected(r.links[i], r.links[i + 1]))
        throw ConfigError("route '" + r.id + "': links '" + cfg.links[r.links[i]].id + "' -> '" +
                          cfg.links[r.links[i + 1]].id + "' are not joined by any connector");
    }
    int last = r.links.back();
    if (!cfg.links[last].exit)
      throw ConfigError("route '" + r.id + "': must end on an exit link");
    if (!(r.weight > 0))
      throw ConfigError("route '" + r.id + "': weight must be > 0");
  }

  // Entries: resolved links, sane windows, and route weights summing to 1.
  std::set<int> entry_links;
  for (const EntrySpec& e : cfg.entries) {
    check_idx(e.link, "entry");
    if (!entry_links.insert(e.link).second)
      throw ConfigError("entry '" + cfg.links[e.link].id + "': duplicate entry for link");
    if (e.windows.empty())
      throw ConfigError("entry '" + cfg.links[e.link].id + "': no demand windows");
    for (const DemandWindow& w : e.windows) {
      if (!(w.t_end_s > w.t_start_s))
        throw ConfigError("entry '" + cfg.links[e.link].id + "': demand window must have t_end_s > t_start_s");
      if (w.rate_veh_per_hr < 0)
        throw ConfigError("entry '" + cfg.links[e.link].id + "': rate_veh_per_hr must be >= 0");
    }
  }
  for (const EntrySpec& e : cfg.entries) {
    double sum = 0.0;
    int n_routes = 0;
    for (const Route& r : cfg.routes) {
      if (r.links.front() == e.link) {
        sum += r.weight;
        ++n_routes;
      }
    }
    if (n_routes == 0)
      throw ConfigError("entry '" + cfg.links[e.link].id + "': no route starts at this entry");
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("entry '" + cfg.links[e.link].id + "': route weights sum " + fmt_double(sum) +
                        " \xE2\x89\xA0 1");
  }
  for (const Route& r : cfg.routes) {
    if (entry_links.find(r.links.front()) == entry_links.end())
      throw ConfigError("route '" + r.id + "': first link is not an entry");
  }

  if (!(cfg.sim.duration_s > 0)) throw ConfigError("sim: duration_s must be > 0");
  if (!(cfg.sim.step_s > 0)) throw ConfigError("sim: step_s must be > 0");
  if (!(cfg.sim.control_interval_s > 0)) throw ConfigError("sim: control_interval_s must be > 0");
  double ratio = cfg.sim.control_interval_s / cfg.sim.step_s;
  if (std::abs(ratio - std::round(ratio)) > 1e-9)
    throw ConfigError("sim: control_interval_s must be an integer multiple of step_s");
  if (cfg.sim.compliance < 0.0 || cfg.sim.compliance > 1.0)
    throw ConfigError("sim: compliance must be within [0, 1]");

  const auto& types = known_controller_types();
  if (std::find(types.begin(), types.end(), cfg.controller.type) == types.end())
    throw ConfigError("controller: unknown type '" + cfg.controller.type + "'");
}

/// Parse a scenario document. Syntax errors report line/column; semantic
/// errors name the violated invariant. All defaults are applied on return.
inline ScenarioConfig parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scenario: syntax error at ") +
                      detail::line_col_of_offset(text, e.byte > 0 ? e.byte - 1 : 0) + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("scenario: top level must be an object");

  ScenarioConfig cfg;

  const json& links = detail::require_field(doc, "links", "scenario");
  if (!links.is_array()) throw ConfigError("scenario: \"links\" must be an array");
  for (const json& jl : links) {
    Link l;
    l.id = detail::require_string(jl, "id", "link");
    const std::string where = "link '" + l.id + "'";
    l.length_m = detail::require_number(jl, "length_m", where);
    l.speed_limit_kmh = detail::require_number(jl, "speed_limit_kmh", where);
    l.from_node = detail::require_string(jl, "from", where);
    l.to_node = detail::require_string(jl, "to", where);
    if (jl.contains("exit")) {
      if (!jl["exit"].is_boolean()) throw ConfigError(where + ": field \"exit\" must be a boolean");
      l.exit = jl["exit"].get<bool>();
    }
    cfg.links.push_back(std::move(l));
  }

  auto resolve = [&](const std::string& id, const std::string& where) {
    int idx = cfg.link_index(id);
    if (idx < 0) throw ConfigError(where + ": unknown link id '" + id + "'");
    return idx;
  };

  if (doc.contains("connectors")) {
    const json& cs = doc["connectors"];
    if (!cs.is_array()) throw ConfigError("scenario: \"connectors\" must be an array");
    for (std::size_t ci = 0; ci < cs.size(); ++ci) {
      const json& jc = cs[ci];
      const std::string where = "connector #" + std::to_string(ci);
      Connector c;
      std::string kind = detail::require_string(jc, "kind", where);
      if (kind == "merge")
        c.kind = ConnectorKind::Merge;
      else if (kind == "diverge")
        c.kind = ConnectorKind::Diverge;
      else if (kind == "through")
        c.kind = ConnectorKind::Through;
      else
        throw ConfigError(where + ": kind must be one of merge/diverge/through");
      const json& up = detail::require_field(jc, "upstream", where);
      const json& dn = detail::require_field(jc, "downstream", where);
      if (!up.is_array() || !dn.is_array())
        throw ConfigError(where + ": upstream/downstream must be arrays of link ids");
      for (const json& u : up) c.upstream.push_back(resolve(u.get<std::string>(), where));
      for (const json& d : dn) c.downstream.push_back(resolve(d.get<std::string>(), where));
      if (jc.contains("priority")) {
        for (const json& p : jc["priority"]) c.priority.push_back(resolve(p.get<std::string>(), where));
      } else {
        c.priority = c.upstream;
      }
      if (jc.contains("signalized")) {
        if (!jc["signalized"].is_boolean())
          throw ConfigError(where + ": field \"signalized\" must be a boolean");
        c.signalized = jc["signalized"].get<bool>();
      }
      cfg.connectors.push_back(std::move(c));
    }
  }

  const json& routes = detail::require_field(doc, "routes", "scenario");
  if (!routes.is_array()) throw ConfigError("scenario: \"routes\" must be an array");
  for (const json& jr : routes) {
    Route r;
    r.id = detail::require_string(jr, "id", "route");
    const std::string where = "route '" + r.id + "'";
    const json& ls = detail::require_field(jr, "links", where);
    if (!ls.is_array()) throw ConfigError(where + ": \"links\" must be an array of link ids");
    for (const json& l : ls) r.links.push_back(resolve(l.get<std::string>(), where));
    if (jr.contains("weight")) r.weight = jr["weight"].get<double>();
    cfg.routes.push_back(std::move(r));
  }

  const json& entries = detail::require_field(doc, "entries", "scenario");
  if (!entries.is_array()) throw ConfigError("scenario: \"entries\" must be an array");
  for (const json& je : entries) {
    EntrySpec e;
    std::string link_id = detail::require_string(je, "link", "entry");
    const std::string where = "entry '" + link_id + "'";
    e.link = resolve(link_id, where);
    const json& ws = detail::require_field(je, "demand", where);
    if (!ws.is_array()) throw ConfigError(where + ": \"demand\" must be an array of windows");
    for (const json& jw : ws) {
      DemandWindow w;
      w.t_start_s = detail::require_number(jw, "t_start_s", where);
      w.t_end_s = detail::require_number(jw, "t_end_s", where);
      w.rate_veh_per_hr = detail::require_number(jw, "rate_veh_per_hr", where);
      e.windows.push_back(w);
    }
    cfg.entries.push_back(std::move(e));
    cfg.links[e.link].entry_of = link_id;
  }

  const json& sim = detail::require_field(doc, "sim", "scenario");
  cfg.sim.duration_s = detail::require_number(sim, "duration_s", "sim");
  if (sim.contains("step_s")) cfg.sim.step_s = sim["step_s"].get<double>();
  if (sim.contains("control_interval_s"))
    cfg.sim.control_interval_s = sim["control_interval_s"].get<double>();
  if (sim.contains("seed")) cfg.sim.seed = sim["seed"].get<std::uint64_t>();
  if (sim.contains("compliance")) cfg.sim.compliance = sim["compliance"].get<double>();

  if (doc.contains("controller")) {
    const json& jc = doc["controller"];
    cfg.controller.type = detail::require_string(jc, "type", "controller");
    if (jc.contains("params")) {
      if (!jc["params"].is_object()) throw ConfigError("controller: \"params\" must be an object");
      cfg.controller.params = jc["params"];
    }
  }

  validate_scenario(cfg);
  return cfg;
}

/// Serialize a ScenarioConfig to the same document schema parse_scenario
/// accepts; parse(serialize(cfg)) == cfg.
inline std::string serialize_scenario(const ScenarioConfig& cfg) {
  json doc;
  doc["links"] = json::array();
  for (const Link& l : cfg.links) {
    json jl;
    jl["id"] = l.id;
    jl["length_m"] = l.length_m;
    jl["speed_limit_kmh"] = l.speed_limit_kmh;
    jl["from"] = l.from_node;
    jl["to"] = l.to_node;
    if (l.exit) jl["exit"] = true;
    doc["links"].push_back(jl);
  }
  doc["connectors"] = json::array();
  for (const Connector& c : cfg.connectors) {
    json jc;
    jc["kind"] = to_string(c.kind);
    json up = json::array(), dn = json::array(), pr = json::array();
    for (int u : c.upstream) up.push_back(cfg.links[u].id);
    for (int d : c.downstream) dn.push_back(cfg.links[d].id);
    for (int p : c.priority) pr.push_back(cfg.links[p].id);
    jc["upstream"] = up;
    jc["downstream"] = dn;
    jc["priority"] = pr;
    jc["signalized"] = c.signalized;
    doc["connectors"].push_back(jc);
  }
  doc["routes"] = json::array();
  for (const Route& r : cfg.routes) {
    json jr;
    jr["id"] = r.id;
    json ls = json::array();
    for (int l : r.links) ls.push_back(cfg.links[l].id);
    jr["links"] = ls;
    jr["weight"] = r.weight;
    doc["routes"].push_back(jr);
  }
  doc["entries"] = json::array();
  for (const EntrySpec& e : cfg.entries) {
    json je;
    je["link"] = cfg.links[e.link].id;
    json ws = json::array();
    for (const DemandWindow& w : e.windows) {
      json jw;
      jw["t_start_s"] = w.t_start_s;
      jw["t_end_s"] = w.t_end_s;
      jw["rate_veh_per_hr"] = w.rate_veh_per_hr;
      ws.push_back(jw);
    }
    je["demand"] = ws;
    doc["entries"].push_back(je);
  }
  doc["sim"] = {{"duration_s", cfg.sim.duration_s},
                {"step_s", cfg.sim.step_s},
                {"control_interval_s", cfg.sim.control_interval_s},
                {"seed", cfg.sim.seed},
                {"compliance", cfg.sim.compliance}};
  doc["controller"] = {{"type", cfg.controller.type}, {"params", cfg.controller.params}};
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Super-segment partitioning
// ---------------------------------------------------------------------------

struct SuperSegment {
  int id = 0;  // 1-based
  std::vector<int> links;
  double length_m = 0.0;
  // True when a terminal group closed below the minimum target length.
  bool undersized = false;

  bool operator==(const SuperSegment&) const = default;
};

/// Greedy contiguous grouping of route links into super-segments. Routes are
/// walked in descending weight (declaration order breaking ties); along each
/// route, not-yet-assigned contiguous links accumulate until the group length
/// reaches `min_len`, closing early before any link whose addition would
/// exceed `max_len`. Terminal groups may be shorter and are flagged.
inline std::vector<SuperSegment> partition_super_segments(const ScenarioConfig& cfg,
                                                          double min_len = 2000.0,
                                                          double max_len = 3000.0) {
  std::vector<std::size_t> order(cfg.routes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cfg.routes[a].weight > cfg.routes[b].weight;
  });

  std::vector<bool> assigned(cfg.links.size(), false);
  std::vector<SuperSegment> segments;

  auto close_group = [&](std::vector<int>& current, double& cum) {
    if (current.empty()) return;
    SuperSegment seg;
    seg.id = static_cast<int>(segments.size()) + 1;
    seg.links = current;
    seg.length_m = cum;
    seg.undersized = cum < min_len;
    segments.push_back(std::move(seg));
    current.clear();
    cum = 0.0;
  };

  for (std::size_t ri : order) {
    const Route& route = cfg.routes[ri];
    std::vector<int> current;
    double cum = 0.0;
    for (int link : route.links) {
      if (assigned[link]) {
        // A gap in coverage ends the contiguous run; flush as terminal.
        close_group(current, cum);
        continue;
      }
      double len = cfg.links[link].length_m;
      if (!current.empty() && cum + len > max_len) close_group(current, cum);
      current.push_back(link);
      assigned[link] = true;
      cum += len;
      if (cum >= min_len) close_group(current, cum);
    }
    close_group(current, cum);
  }

  std::vector<std::string> orphans;
  for (std::size_t i = 0; i < cfg.links.size(); ++i)
    if (!assigned[i]) orphans.push_back(cfg.links[i].id);
  if (!orphans.empty()) {
    std::string msg = "partition: links unreachable by any route:";
    for (const std::string& id : orphans) msg += " '" + id + "'";
    throw ConfigError(msg);
  }
  return segments;
}

// ---------------------------------------------------------------------------
// Built network
// ---------------------------------------------------------------------------

/// ScenarioConfig plus derived structure: adjacency, topological link order,
/// super-segments, and per-link lookups used by the simulation engine.
struct RoadNetwork {
  ScenarioConfig cfg;
  std::vector<SuperSegment> segments;
  std::vector<int> link_segment;   // link index -> segment index (0-based)
  std::vector<int> out_connector;  // link index -> connector index or -1
  std::vector<int> topo_links;     // link indices, upstream before downstream
  std::vector<int> signal_connectors;  // indices of signalized connectors

  int n_segments() const { return static_cast<int>(segments.size()); }

  bool is_minor_approach(int connector, int link) const {
    const Connector& c = cfg.connectors[connector];
    return c.kind == ConnectorKind::Merge && c.priority.front() != link;
  }
};

/// Build the runtime network from a validated config. Deterministic: identical
/// configs produce identical orderings and ids.
inline RoadNetwork build_network(const ScenarioConfig& cfg) {
  validate_scenario(cfg);
  RoadNetwork net;
  net.cfg = cfg;
  net.segments = partition_super_segments(cfg);

  net.link_segment.assign(cfg.links.size(), -1);
  for (std::size_t si = 0; si < net.segments.size(); ++si)
    for (int l : net.segments[si].links) net.link_segment[l] = static_cast<int>(si);

  net.out_connector.assign(cfg.links.size(), -1);
  for (std::size_t ci = 0; ci < cfg.connectors.size(); ++ci)
    for (int u : cfg.connectors[ci].upstream) net.out_connector[u] = static_cast<int>(ci);

  // Kahn topological sort over connector edges, stable in declaration order.
  std::vector<int> indegree(cfg.links.size(), 0);
  for (const Connector& c : cfg.connectors)
    for (int d : c.downstream) indegree[d] += static_cast<int>(c.upstream.size());
  std::vector<int> ready;
  for (std::size_t i = 0; i < cfg.links.size(); ++i)
    if (indegree[i] == 0) ready.push_back(static_cast<int>(i));
  std::size_t head = 0;
  while (head < ready.size()) {
    int l = ready[head++];
    net.topo_links.push_back(l);
    int ci = net.out_connector[l];
    if (ci < 0) continue;
    for (int d : cfg.connectors[ci].downstream) {
      indegree[d] -= 1;
      if (indegree[d] == 0) ready.push_back(d);
    }
  }
  if (net.topo_links.size() != cfg.links.size())
    throw ConfigError("network: link graph contains a cycle");

  for (std::size_t ci = 0; ci < cfg.connectors.size(); ++ci)
    if (cfg.connectors[ci].signalized) net.signal_connectors.push_back(static_cast<int>(ci));

  return net;
}

}  // namespace freeflow
