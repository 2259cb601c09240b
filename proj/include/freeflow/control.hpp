#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "freeflow/core.hpp"
#include "freeflow/simulation.hpp"

namespace freeflow {

inline constexpr double kCycle_s = 120.0;
inline constexpr double kIntergreen_s = 5.0;
inline constexpr double kMinGreen_s = 5.0;
// Default occupancy ceiling for merge-receiving segments: the critical
// occupancy of the volume-density fit on the reference bottleneck road
// (demand sweep, driver-model defaults), i.e. where measured flow peaks.
inline constexpr double kDefaultBStar = 0.158;

// ---------------------------------------------------------------------------
// Signal-timing math (pure functions, unit-tested against worked examples)
// ---------------------------------------------------------------------------

/// Equal green per stage: cycle/k minus the intergreen that follows each
/// stage. Rejects geometries where no green time is left.
inline std::vector<double> equal_split_greens(int k, double cycle_s = kCycle_s,
                                              double intergreen_s = kIntergreen_s) {
  if (k <= 0) throw ConfigError("signal: stage count must be positive");
  double g = cycle_s / k - intergreen_s;
  if (g <= 0.0)
    throw ConfigError("signal: equal split leaves no green time (cycle/k <= intergreen)");
  return std::vector<double>(static_cast<std::size_t>(k), g);
}

/// Split the green budget in proportion to per-stage loads, flooring every
/// stage at min_green and redistributing the remainder over the others.
/// All-zero loads fall back to an equal split.
inline std::vector<double> proportional_greens(const std::vector<double>& loads,
                                               double cycle_s = kCycle_s,
                                               double intergreen_s = kIntergreen_s,
                                               double min_green_s = kMinGreen_s) {
  const int k = static_cast<int>(loads.size());
  if (k <= 0) throw ConfigError("signal: stage count must be positive");
  double budget = cycle_s - k * intergreen_s;
  if (budget < k * min_green_s)
    throw ConfigError("signal: green budget below the per-stage minimum");
  double total = std::accumulate(loads.begin(), loads.end(), 0.0);
  if (total <= 0.0) return equal_split_greens(k, cycle_s, intergreen_s);

  std::vector<double> greens(k, 0.0);
  std::vector<bool> floored(k, false);
  double remaining_budget = budget;
  double remaining_load = total;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < k; ++i) {
      if (floored[i]) continue;
      double share = remaining_load > 0.0 ? remaining_budget * loads[i] / remaining_load
                                          : remaining_budget / k;
      if (share < min_green_s) {
        floored[i] = true;
        greens[i] = min_green_s;
        remaining_budget -= min_green_s;
        remaining_load -= loads[i];
        changed = true;
      }
    }
  }
  for (int i = 0; i < k; ++i) {
    if (floored[i]) continue;
    greens[i] = remaining_load > 0.0 ? remaining_budget * loads[i] / remaining_load
                                     : remaining_budget / std::count(floored.begin(), floored.end(), false);
  }
  return greens;
}

/// Move green time from the least- to the most-saturated stage. The shift is
/// capped at 4% of the cycle and at half the saturation spread (in cycle
/// time), and the donor keeps at least min_green.
inline std::vector<double> scats_transfer(const std::vector<double>& ds,
                                          const std::vector<double>& greens,
                                          double cycle_s = kCycle_s,
                                          double min_green_s = kMinGreen_s) {
  std::vector<double> out = greens;
  if (ds.size() < 2 || ds.size() != greens.size()) return out;
  std::size_t hi = 0, lo = 0;
  for (std::size_t i = 1; i < ds.size(); ++i) {
    if (ds[i] > ds[hi]) hi = i;
    if (ds[i] < ds[lo]) lo = i;
  }
  if (hi == lo || ds[hi] <= ds[lo]) return out;
  double amount = std::min(0.04 * cycle_s, 0.5 * (ds[hi] - ds[lo]) * cycle_s);
  amount = std::min(amount, out[lo] - min_green_s);
  if (amount <= 0.0) return out;
  out[hi] += amount;
  out[lo] -= amount;
  return out;
}

/// Stage-end adjustment: extend the ending stage by 4 s when it is clearly
/// more saturated than the next one, shorten it by 4 s in the opposite case;
/// a 0.1 dead-band suppresses churn.
inline double scoot_decision(double ds_ending, double ds_next, double deadband = 0.1,
                             double step_s = 4.0) {
  if (ds_ending - ds_next > deadband) return step_s;
  if (ds_next - ds_ending > deadband) return -step_s;
  return 0.0;
}

/// Progression offsets: each signal's schedule is shifted by the travel time
/// from the first signal at the corridor speed, wrapped to the cycle.
inline std::vector<double> green_wave_offsets(const std::vector<double>& distances_from_first_m,
                                              double v_mps, double cycle_s = kCycle_s) {
  std::vector<double> offsets;
  offsets.reserve(distances_from_first_m.size());
  for (double d : distances_from_first_m) offsets.push_back(std::fmod(d / v_mps, cycle_s));
  return offsets;
}

/// Demand-to-capacity fraction that keeps a segment's expected occupancy gain
/// within the available headroom: alpha = (headroom/dt + outflow) / inflow.
inline double backpressure_alpha(double inflow_vps, double outflow_vps, double headroom_veh,
                                 double interval_s) {
  if (inflow_vps <= 0.0) return 1.0;
  double alpha = (headroom_veh / interval_s + outflow_vps) / inflow_vps;
  return std::clamp(alpha, 0.0, 1.0);
}

/// Green link for a cyclic schedule: stages in order, each followed by an
/// intergreen; kSignalAllRed between stages.
inline int scheduled_green(const std::vector<double>& greens, const std::vector<int>& links,
                           double t_in_cycle, double intergreen_s = kIntergreen_s) {
  double pos = 0.0;
  for (std::size_t i = 0; i < greens.size(); ++i) {
    if (t_in_cycle < pos + greens[i]) return links[i];
    pos += greens[i];
    if (t_in_cycle < pos + intergreen_s) return kSignalAllRed;
    pos += intergreen_s;
  }
  return kSignalAllRed;
}

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

class NoneController : public Controller {
 public:
  std::string name() const override { return "none"; }
};

/// Constant per-segment ceilings; used for experiments and tests.
class FixedCommandController : public Controller {
 public:
  explicit FixedCommandController(std::vector<double> cmd_kmh) : cmd_(std::move(cmd_kmh)) {}
  std::string name() const override { return "fixed"; }
  void plan_interval(double, const IntervalMeasurements&, std::vector<double>& cmd_kmh) override {
    if (cmd_.size() == cmd_kmh.size()) {
      cmd_kmh = cmd_;
    } else if (cmd_.size() == 1) {
      std::fill(cmd_kmh.begin(), cmd_kmh.end(), cmd_.front());
    } else {
      throw RunError("fixed command vector does not match the segment count");
    }
  }

 private:
  std::vector<double> cmd_;
};

/// Shared plumbing for stage-based signal control at every signalized
/// connector: stage order follows the connector's priority list.
class SignalControllerBase : public Controller {
 public:
  bool wants_signals() const override { return true; }

  void reset(const RoadNetwork& net, std::uint64_t) override {
    states_.clear();
    for (int ci : net.signal_connectors) {
      ConnectorState st;
      st.connector = ci;
      st.links = net.cfg.connectors[ci].priority;
      st.greens = equal_split_greens(static_cast<int>(st.links.size()));
      for (int l : st.links) st.lim_mps.push_back(kmh_to_mps(net.cfg.links[l].speed_limit_kmh));
      states_.push_back(std::move(st));
    }
  }

  void signal_greens(double t_s, std::vector<int>& green) override {
    for (ConnectorState& st : states_) {
      on_cycle_boundary(st, t_s);
      double tau = t_s - st.cycle_start_s - st.offset_s;
      tau = std::fmod(tau, kCycle_s);
      if (tau < 0) tau += kCycle_s;
      green[st.connector] = pick_green(st, tau);
    }
  }

 protected:
  struct ConnectorState {
    int connector = -1;
    std::vector<int> links;      // stage order
    std::vector<double> greens;  // current green per stage
    std::vector<double> lim_mps;
    double cycle_start_s = 0.0;
    double offset_s = 0.0;
    // Adaptive bookkeeping (used by the subclasses that need it).
    std::vector<double> acc_a, acc_b;
  };

  int stage_of(const ConnectorState& st, int link) const {
    for (std::size_t i = 0; i < st.links.size(); ++i)
      if (st.links[i] == link) return static_cast<int>(i);
    return -1;
  }

  ConnectorState* state_for(int connector) {
    for (ConnectorState& st : states_) {
      if (st.connector == connector) return &st;
    }
    return nullptr;
  }

  virtual void on_cycle_boundary(ConnectorState& st, double t_s) {
    while (t_s - st.cycle_start_s >= kCycle_s) st.cycle_start_s += kCycle_s;
  }
  virtual int pick_green(const ConnectorState& st, double tau) {
    return scheduled_green(st.greens, st.links, tau);
  }

  std::vector<ConnectorState> states_;
};

class EqualSplitController : public SignalControllerBase {
 public:
  std::string name() const override { return "equal_split"; }
};

/// Re-plans each cycle from the vehicle counts currently on each approach.
class PropSplitController : public SignalControllerBase {
 public:
  std::string name() const override { return "prop_split"; }

  void reset(const RoadNetwork& net, std::uint64_t seed) override {
    SignalControllerBase::reset(net, seed);
    for (ConnectorState& st : states_) st.acc_a.assign(st.links.size(), 0.0);  // latest counts
  }

  void observe_step(const StepSense& sense) override {
    for (const ApproachSense& ap : sense.approaches) {
      ConnectorState* st = state_for(ap.connector);
      int s = st ? stage_of(*st, ap.link) : -1;
      if (s >= 0) st->acc_a[s] = static_cast<double>(ap.count);
    }
  }

 protected:
  void on_cycle_boundary(ConnectorState& st, double t_s) override {
    while (t_s - st.cycle_start_s >= kCycle_s) {
      st.cycle_start_s += kCycle_s;
      st.greens = proportional_greens(st.acc_a);
    }
  }
};

/// Equal split with progression offsets along the heaviest route.
class GreenWaveController : public SignalControllerBase {
 public:
  std::string name() const override { return "green_wave"; }

  void reset(const RoadNetwork& net, std::uint64_t seed) override {
    SignalControllerBase::reset(net, seed);
    if (net.cfg.routes.empty() || states_.empty()) return;
    // Heaviest route (stable on ties) defines the corridor.
    std::size_t best = 0;
    for (std::size_t i = 1; i < net.cfg.routes.size(); ++i)
      if (net.cfg.routes[i].weight > net.cfg.routes[best].weight) best = i;
    const Route& corridor = net.cfg.routes[best];
    std::map<int, double> signal_pos;  // connector -> distance to its stop line
    std::map<int, double> signal_v;
    double cum = 0.0;
    for (int l : corridor.links) {
      cum += net.cfg.links[l].length_m;
      int ci = net.out_connector[l];
      if (ci >= 0 && net.cfg.connectors[ci].signalized) {
        signal_pos[ci] = cum;
        signal_v[ci] = kmh_to_mps(net.cfg.links[l].speed_limit_kmh);
      }
    }
    if (signal_pos.empty()) return;
    double first = signal_pos.begin()->second;
    for (auto& [ci, d] : signal_pos) first = std::min(first, d);
    for (ConnectorState& st : states_) {
      auto it = signal_pos.find(st.connector);
      if (it == signal_pos.end()) continue;
      st.offset_s = std::fmod((it->second - first) / signal_v[st.connector], kCycle_s);
    }
  }
};

/// Cycle-by-cycle green transfer driven by measured stage saturation: the
/// share of green time during which the stop line was actually discharging.
class ScatsController : public SignalControllerBase {
 public:
  std::string name() const override { return "scats"; }

  void reset(const RoadNetwork& net, std::uint64_t seed) override {
    SignalControllerBase::reset(net, seed);
    for (ConnectorState& st : states_) {
      st.acc_a.assign(st.links.size(), 0.0);  // green steps
      st.acc_b.assign(st.links.size(), 0.0);  // discharging steps
    }
  }

  void observe_step(const StepSense& sense) override {
    for (const ApproachSense& ap : sense.approaches) {
      ConnectorState* st = state_for(ap.connector);
      int s = st ? stage_of(*st, ap.link) : -1;
      if (s < 0 || !ap.green) continue;
      st->acc_a[s] += 1.0;
      if (ap.discharging) st->acc_b[s] += 1.0;
    }
  }

 protected:
  void on_cycle_boundary(ConnectorState& st, double t_s) override {
    while (t_s - st.cycle_start_s >= kCycle_s) {
      st.cycle_start_s += kCycle_s;
      std::vector<double> ds(st.links.size(), 0.0);
      for (std::size_t i = 0; i < ds.size(); ++i)
        ds[i] = st.acc_a[i] > 0.0 ? st.acc_b[i] / st.acc_a[i] : 0.0;
      st.greens = scats_transfer(ds, st.greens);
      std::fill(st.acc_a.begin(), st.acc_a.end(), 0.0);
      std::fill(st.acc_b.begin(), st.acc_b.end(), 0.0);
    }
  }
};

/// Stage-end +-4 s adjustments against arrival-based saturation, mostly
/// reversed next cycle so only +-1 s persists per adjustment.
class ScootController : public SignalControllerBase {
 public:
  std::string name() const override { return "scoot"; }

  void reset(const RoadNetwork& net, std::uint64_t seed) override {
    SignalControllerBase::reset(net, seed);
    scoot_.clear();
    scoot_.resize(states_.size());
    for (std::size_t i = 0; i < states_.size(); ++i) {
      ScootState& sc = scoot_[i];
      sc.base = states_[i].greens;
      sc.eff = sc.base;
      std::size_t k = states_[i].links.size();
      sc.arr_cur.assign(k, 0.0);
      sc.arr_last.assign(k, 0.0);
      sc.delta.assign(k, 0.0);
      sc.decided.assign(k, false);
    }
  }

  void observe_step(const StepSense& sense) override {
    for (const ApproachSense& ap : sense.approaches) {
      for (std::size_t i = 0; i < states_.size(); ++i) {
        if (states_[i].connector != ap.connector) continue;
        int s = stage_of(states_[i], ap.link);
        if (s >= 0) scoot_[i].arr_cur[s] += ap.arrivals;
      }
    }
  }

  void signal_greens(double t_s, std::vector<int>& green) override {
    for (std::size_t i = 0; i < states_.size(); ++i) {
      ConnectorState& st = states_[i];
      ScootState& sc = scoot_[i];
      while (t_s - st.cycle_start_s >= kCycle_s) {
        end_cycle(st, sc);
        st.cycle_start_s += kCycle_s;
      }
      double tau = t_s - st.cycle_start_s;
      // Pending stage-end decisions: 5 s before each internal stage boundary.
      double pos = 0.0;
      for (std::size_t s = 0; s + 1 < sc.eff.size(); ++s) {
        double end = pos + sc.eff[s];
        if (!sc.decided[s] && tau >= end - 5.0 && tau < end) decide(st, sc, s);
        pos = end + kIntergreen_s;
      }
      green[st.connector] = scheduled_green(sc.eff, st.links, tau);
    }
  }

 private:
  struct ScootState {
    std::vector<double> base, eff, arr_cur, arr_last, delta;
    std::vector<bool> decided;
  };

  double saturation(const ConnectorState& st, const ScootState& sc, std::size_t s) const {
    double cap_vps = steady_flow(st.lim_mps[s]) * sc.base[s] / kCycle_s;  // cycle-average
    double demand_vps = sc.arr_last[s] / kCycle_s;
    return cap_vps > 0.0 ? demand_vps / cap_vps : 0.0;
  }

  void decide(ConnectorState& st, ScootState& sc, std::size_t s) {
    sc.decided[s] = true;
    double d = scoot_decision(saturation(st, sc, s), saturation(st, sc, s + 1));
    if (d == 0.0) return;
    if (sc.eff[s] + d < kMinGreen_s || sc.eff[s + 1] - d < kMinGreen_s) return;
    sc.eff[s] += d;
    sc.eff[s + 1] -= d;
    sc.delta[s] = d;
  }

  void end_cycle(ConnectorState&, ScootState& sc) {
    for (std::size_t s = 0; s + 1 < sc.delta.size(); ++s) {
      if (sc.delta[s] == 0.0) continue;
      double keep = sc.delta[s] > 0.0 ? 1.0 : -1.0;
      if (sc.base[s] + keep >= kMinGreen_s && sc.base[s + 1] - keep >= kMinGreen_s) {
        sc.base[s] += keep;
        sc.base[s + 1] -= keep;
      }
    }
    sc.eff = sc.base;
    sc.arr_last = sc.arr_cur;
    std::fill(sc.arr_cur.begin(), sc.arr_cur.end(), 0.0);
    std::fill(sc.delta.begin(), sc.delta.end(), 0.0);
    std::fill(sc.decided.begin(), sc.decided.end(), false);
  }

  std::vector<ScootState> scoot_;
};

/// Analytic speed modulation: when a merge's receiving segment is filling
/// faster than its occupancy headroom allows, scale the feeding segments'
/// ceilings by the admissible inflow fraction.
class BackpressureController : public Controller {
 public:
  explicit BackpressureController(double b_star = kDefaultBStar) : b_star_(b_star) {}
  std::string name() const override { return "backpressure"; }

  void reset(const RoadNetwork& net, std::uint64_t) override {
    merges_.clear();
    for (const Connector& c : net.cfg.connectors) {
      if (c.kind != ConnectorKind::Merge) continue;
      Merge m;
      m.down_segment = net.link_segment[c.downstream.front()];
      for (int up : c.upstream) {
        int s = net.link_segment[up];
        if (std::find(m.up_segments.begin(), m.up_segments.end(), s) == m.up_segments.end())
          m.up_segments.push_back(s);
      }
      merges_.push_back(std::move(m));
    }
    seg_len_m_.assign(net.n_segments(), 0.0);
    seg_lim_kmh_.assign(net.n_segments(), 0.0);
    for (int s = 0; s < net.n_segments(); ++s) {
      double wsum = 0.0;
      for (int l : net.segments[s].links) {
        seg_len_m_[s] += net.cfg.links[l].length_m;
        wsum += net.cfg.links[l].length_m * net.cfg.links[l].speed_limit_kmh;
      }
      seg_lim_kmh_[s] = wsum / seg_len_m_[s];
    }
  }

  void plan_interval(double, const IntervalMeasurements& m, std::vector<double>& cmd_kmh) override {
    std::fill(cmd_kmh.begin(), cmd_kmh.end(), 0.0);
    for (const Merge& mg : merges_) {
      const SegmentMeasurement& d = m.segments[mg.down_segment];
      double capacity_veh = seg_len_m_[mg.down_segment] / 5.0;
      double headroom = (b_star_ - d.occupancy) * capacity_veh;
      double gain = (d.inflow_vps - d.outflow_vps) * m.interval_s;
      if (gain <= headroom) continue;
      double alpha = backpressure_alpha(d.inflow_vps, d.outflow_vps, headroom, m.interval_s);
      if (alpha >= 1.0) continue;
      for (int s : mg.up_segments) {
        double cmd = std::clamp(alpha * m.segments[s].mean_speed_kmh, 5.0, seg_lim_kmh_[s]);
        cmd_kmh[s] = cmd_kmh[s] > 0.0 ? std::min(cmd_kmh[s], cmd) : cmd;
      }
    }
  }

  double b_star() const { return b_star_; }

 private:
  struct Merge {
    int down_segment = -1;
    std::vector<int> up_segments;
  };
  std::vector<Merge> merges_;
  std::vector<double> seg_len_m_, seg_lim_kmh_;
  double b_star_;
};

/// Controller factory for everything that needs no external artifacts.
inline std::unique_ptr<Controller> make_controller(const ControllerSpec& spec) {
  const std::string& t = spec.type;
  if (t == "none") return std::make_unique<NoneController>();
  if (t == "equal_split") return std::make_unique<EqualSplitController>();
  if (t == "prop_split") return std::make_unique<PropSplitController>();
  if (t == "green_wave") return std::make_unique<GreenWaveController>();
  if (t == "scats") return std::make_unique<ScatsController>();
  if (t == "scoot") return std::make_unique<ScootController>();
  if (t == "backpressure") {
    double b = spec.params.contains("b_star") ? spec.params["b_star"].get<double>() : kDefaultBStar;
    return std::make_unique<BackpressureController>(b);
  }
  if (t == "fixed") {
    std::vector<double> cmd;
    if (spec.params.contains("cmd_kmh")) {
      if (spec.params["cmd_kmh"].is_array())
        cmd = spec.params["cmd_kmh"].get<std::vector<double>>();
      else
        cmd = {spec.params["cmd_kmh"].get<double>()};
    }
    return std::make_unique<FixedCommandController>(std::move(cmd));
  }
  throw ConfigError("controller: type '" + t + "' requires dedicated construction");
}

}  // namespace freeflow
