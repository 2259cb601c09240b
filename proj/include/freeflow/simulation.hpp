#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "freeflow/core.hpp"
#include "freeflow/dynamics.hpp"
#include "freeflow/metrics.hpp"
#include "freeflow/network.hpp"

namespace freeflow {

// ---------------------------------------------------------------------------
// Controller-facing measurement types
// ---------------------------------------------------------------------------

/// Aggregate state of one super-segment at a control boundary. Flow rates
/// cover the interval that just ended; the rest is instantaneous.
struct SegmentMeasurement {
  double occupancy = 0.0;       // sum of vehicle footprints / segment length
  double mean_speed_kmh = 0.0;  // effective ceiling when the segment is empty
  double mean_gap_m = 0.0;      // segment length when fewer than two vehicles
  double inflow_vps = 0.0;      // boundary crossings into the segment / dt
  double outflow_vps = 0.0;     // boundary crossings out of the segment / dt
  int count = 0;
};

struct IntervalMeasurements {
  double t_s = 0.0;
  double interval_s = 0.0;
  std::vector<SegmentMeasurement> segments;
};

/// Per-step detector reading for one signalized approach.
struct ApproachSense {
  int connector = -1;
  int link = -1;
  bool green = false;
  bool discharging = false;  // a vehicle was within 15 m of the stop line
  int arrivals = 0;          // vehicles that entered the approach this step
  int count = 0;             // vehicles on the approach at the start of the step
};

struct StepSense {
  double t_s = 0.0;
  std::vector<ApproachSense> approaches;
};

inline constexpr int kSignalInactive = -2;
inline constexpr int kSignalAllRed = -1;
inline constexpr double kDischargeZone_m = 15.0;
inline constexpr double kMergeCandidateZone_m = 20.0;
inline constexpr double kLookahead_m = 500.0;

/// Strategy hook: commands a speed ceiling per super-segment at each control
/// boundary and, optionally, drives signal heads every step.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void reset(const RoadNetwork& net, std::uint64_t seed) {
    (void)net;
    (void)seed;
  }
  /// Overwrite cmd_kmh (one entry per segment; <= 0 means "no ceiling").
  virtual void plan_interval(double t_s, const IntervalMeasurements& m,
                             std::vector<double>& cmd_kmh) {
    (void)t_s;
    (void)m;
    (void)cmd_kmh;
  }
  virtual bool wants_signals() const { return false; }
  /// Fill green[c] for each connector: upstream link index with right of way,
  /// kSignalAllRed during intergreen. Ignored unless wants_signals().
  virtual void signal_greens(double t_s, std::vector<int>& green) {
    (void)t_s;
    (void)green;
  }
  virtual void observe_step(const StepSense& sense) { (void)sense; }
};

// ---------------------------------------------------------------------------
// Simulation engine
// ---------------------------------------------------------------------------

struct Vehicle {
  long id = 0;
  int route = 0;
  int route_pos = 0;     // index into the route's link list
  double pos_m = 0.0;    // front bumper, measured from link start
  double speed_mps = 0.0;
  double accel_prev = 0.0;  // applied in the previous step; what followers see
  double length_m = kVehicleLength_m;
  bool compliant = true;
  double entry_time_s = 0.0;
  double dist_m = 0.0;
  double delay_s = 0.0;
  double delay_stop_s = 0.0;
  StopTracker stop_tracker;
  Regime regime = Regime::FreeFlow;
};

struct QueuedArrival {
  double t_s = 0.0;
  int route = 0;
  bool compliant = true;
};

/// Deterministic single-lane network simulation. Per step: accelerations from
/// the start-of-step snapshot, integration, hard-clamp repair, transfers in
/// priority order, demand injection, then metric accumulation. One RNG stream
/// consumed in a fixed order makes equal seeds bit-reproducible.
class Simulation {
 public:
  explicit Simulation(const RoadNetwork& net, std::uint64_t seed, double compliance_override = -1.0)
      : net_(net), rng_(seed) {
    dt_ = net_.cfg.sim.step_s;
    duration_s_ = net_.cfg.sim.duration_s;
    interval_s_ = net_.cfg.sim.control_interval_s;
    compliance_ = compliance_override >= 0.0 ? compliance_override : net_.cfg.sim.compliance;
    total_steps_ = static_cast<long>(std::llround(duration_s_ / dt_));
    steps_per_interval_ = static_cast<long>(std::llround(interval_s_ / dt_));
    steps_per_second_ = std::max<long>(1, std::llround(1.0 / dt_));

    const auto& links = net_.cfg.links;
    n_links_ = static_cast<int>(links.size());
    n_segments_ = net_.n_segments();
    len_m_.resize(n_links_);
    lim_mps_.resize(n_links_);
    for (int l = 0; l < n_links_; ++l) {
      len_m_[l] = links[l].length_m;
      lim_mps_[l] = kmh_to_mps(links[l].speed_limit_kmh);
    }
    seg_len_m_.assign(n_segments_, 0.0);
    seg_lim_kmh_.assign(n_segments_, 0.0);
    for (int s = 0; s < n_segments_; ++s) {
      double wsum = 0.0;
      for (int l : net_.segments[s].links) {
        seg_len_m_[s] += len_m_[l];
        wsum += len_m_[l] * links[l].speed_limit_kmh;
      }
      seg_lim_kmh_[s] = wsum / seg_len_m_[s];
    }
    lanes_.resize(n_links_);
    queues_.resize(net_.cfg.entries.size());
    cmd_kmh_.assign(n_segments_, 0.0);
    greens_.assign(net_.cfg.connectors.size(), kSignalInactive);
    accepted_.assign(n_links_, false);
    in_ctr_.assign(n_segments_, 0);
    out_ctr_.assign(n_segments_, 0);
    link_arrivals_step_.assign(n_links_, 0);
  }

  void set_controller(Controller* c) { controller_ = c; }
  void set_trace(std::ostream* out) {
    trace_ = out;
    if (trace_) *trace_ << "t_s,vehicle_id,link_id,pos_m,speed_mps,regime\n";
  }
  void enable_occupancy_recorder() { record_occupancy_ = true; }

  double dt() const { return dt_; }
  double interval_s() const { return interval_s_; }
  double duration_s() const { return duration_s_; }
  double time_s() const { return static_cast<double>(step_idx_) * dt_; }
  int n_segments() const { return n_segments_; }
  bool finished() const { return step_idx_ >= total_steps_; }

  long injected_count() const { return injected_; }
  long arrived_count() const { return arrived_; }
  long hard_clamp_events() const { return clamp_events_; }
  long vehicle_steps() const { return veh_steps_; }
  /// occupancy_history()[k][s]: occupancy of segment s at second k+1.
  const std::vector<std::vector<double>>& occupancy_history() const { return occ_history_; }

  long active_count() const {
    long n = 0;
    for (const auto& lane : lanes_) n += static_cast<long>(lane.size());
    return n;
  }
  long latent_count() const {
    long n = 0;
    for (const auto& q : queues_) n += static_cast<long>(q.size());
    return n;
  }

  /// Measurements before any step has run: flows are zero by definition.
  IntervalMeasurements measure_initial() const { return measure(); }

  /// Apply per-segment ceilings, run one control interval, and return the
  /// measurements observed at its end.
  IntervalMeasurements advance_interval(const std::vector<double>& cmd_kmh) {
    set_commands(cmd_kmh);
    for (long i = 0; i < steps_per_interval_ && !finished(); ++i) step();
    IntervalMeasurements m = measure();
    reset_flow_counters();
    return m;
  }

  /// Controller-driven run to completion.
  void run() {
    if (controller_) controller_->reset(net_, net_.cfg.sim.seed);
    while (!finished()) {
      if (controller_ && step_idx_ % steps_per_interval_ == 0) {
        IntervalMeasurements m = measure();
        reset_flow_counters();
        controller_->plan_interval(time_s(), m, cmd_kmh_);
        if (static_cast<int>(cmd_kmh_.size()) != n_segments_)
          throw RunError("controller produced a command vector of the wrong size");
        clamp_commands();
      }
      step();
    }
  }

  /// Close the run: fold still-active vehicles and the latent queues into the
  /// report. Call once, after the last step.
  Report finalize() {
    double t_end = time_s();
    for (int l : net_.topo_links) {
      for (const Vehicle& v : lanes_[l]) {
        acc_.record_served(v.dist_m, t_end - v.entry_time_s, v.delay_s, v.delay_stop_s,
                           v.stop_tracker.stops, false);
      }
    }
    for (const auto& q : queues_)
      for (const QueuedArrival& a : q) acc_.record_latent(t_end - a.t_s);
    return acc_.finalize();
  }

  void set_commands(const std::vector<double>& cmd_kmh) {
    if (static_cast<int>(cmd_kmh.size()) != n_segments_)
      throw RunError("command vector size " + std::to_string(cmd_kmh.size()) +
                     " does not match segment count " + std::to_string(n_segments_));
    cmd_kmh_ = cmd_kmh;
    clamp_commands();
  }

  /// One simulation step; public so tests can drive the engine directly.
  void step() {
    const double t = time_s();

    // Signal states for this step.
    if (controller_ && controller_->wants_signals()) {
      controller_->signal_greens(t, greens_);
    }

    // Pre-step detectors: stop-line presence and approach occupancy.
    std::vector<char> discharging;
    std::vector<int> approach_counts;
    if (controller_ && controller_->wants_signals()) {
      for (int ci : net_.signal_connectors) {
        for (int up : net_.cfg.connectors[ci].upstream) {
          bool near = !lanes_[up].empty() && (len_m_[up] - lanes_[up].front().pos_m) <= kDischargeZone_m;
          discharging.push_back(near ? 1 : 0);
          approach_counts.push_back(static_cast<int>(lanes_[up].size()));
        }
      }
    }
    std::fill(link_arrivals_step_.begin(), link_arrivals_step_.end(), 0);

    evaluate_merge_acceptance();

    // Phase 1: accelerations from the start-of-step snapshot.
    front_gap_scratch_.assign(static_cast<std::size_t>(n_links_),
                              std::numeric_limits<double>::infinity());
    for (int l = 0; l < n_links_; ++l) {
      auto& lane = lanes_[l];
      for (std::size_t i = 0; i < lane.size(); ++i) {
        Vehicle& v = lane[i];
        std::optional<LeaderView> leader;
        if (i > 0) {
          const Vehicle& lead = lane[i - 1];
          leader = LeaderView{lead.pos_m - lead.length_m - v.pos_m, lead.speed_mps, lead.accel_prev};
        } else {
          leader = front_vehicle_leader(l, v);
          if (leader) front_gap_scratch_[static_cast<std::size_t>(l)] = leader->net_gap_m;
        }
        auto r = car_following_accel(params_, v.speed_mps, ceiling_mps(v, l), dt_, leader);
        accel_scratch_.push_back(r.accel_mps2);
        v.regime = r.regime;
      }
    }

    // Phase 2: integration (semi-implicit Euler) with a collision-free speed
    // cap: a vehicle may never close inside the standstill gap within one
    // step. Same-link leaders are already integrated (front-to-back order),
    // so the cap is exact; front vehicles use the start-of-step gap, which
    // only under-estimates the room ahead. accel_prev records the realized
    // value.
    std::size_t k = 0;
    for (int l = 0; l < n_links_; ++l) {
      auto& lane = lanes_[l];
      for (std::size_t i = 0; i < lane.size(); ++i) {
        Vehicle& v = lane[i];
        double a = accel_scratch_[k++];
        double v_old = v.speed_mps;
        double v_new = integrate_speed(v_old, a, dt_, ceiling_mps(v, l));
        double room = (i > 0) ? lane[i - 1].pos_m - lane[i - 1].length_m - v.pos_m
                              : front_gap_scratch_[static_cast<std::size_t>(l)];
        room -= params_.cc0_m;
        if (v_new * dt_ > room) v_new = std::max(0.0, room / dt_);
        v.speed_mps = v_new;
        v.pos_m += v_new * dt_;
        v.dist_m += v_new * dt_;
        v.accel_prev = (v_new - v_old) / dt_;
      }
    }
    accel_scratch_.clear();

    // Phase 3: hard-clamp repair of residual overlaps.
    for (int l = 0; l < n_links_; ++l) {
      auto& lane = lanes_[l];
      for (std::size_t i = 1; i < lane.size(); ++i) {
        const Vehicle& lead = lane[i - 1];
        Vehicle& v = lane[i];
        double limit = lead.pos_m - lead.length_m;
        if (v.pos_m > limit) {
          v.dist_m -= (v.pos_m - limit);
          v.pos_m = limit;
          v.speed_mps = lead.speed_mps;
          ++clamp_events_;
        }
      }
    }

    do_transfers();
    do_injection(t);

    // Phase 6: per-vehicle metrics on post-step state.
    for (int l = 0; l < n_links_; ++l) {
      for (Vehicle& v : lanes_[l]) {
        ++veh_steps_;
        v.delay_s += step_delay_s(dt_, v.speed_mps, ceiling_mps(v, l));
        if (v.speed_mps < kStopThreshold_mps) v.delay_stop_s += dt_;
        v.stop_tracker.step(v.speed_mps);
      }
    }

    ++step_idx_;

    if (record_occupancy_ && step_idx_ % steps_per_second_ == 0) {
      std::vector<double> row(n_segments_, 0.0);
      for (int l = 0; l < n_links_; ++l) {
        double footprint = 0.0;
        for (const Vehicle& v : lanes_[l]) footprint += v.length_m + params_.cc0_m;
        row[net_.link_segment[l]] += footprint;
      }
      for (int s = 0; s < n_segments_; ++s) row[s] /= seg_len_m_[s];
      occ_history_.push_back(std::move(row));
    }

    if (controller_ && controller_->wants_signals()) {
      StepSense sense;
      sense.t_s = time_s();
      std::size_t di = 0;
      for (int ci : net_.signal_connectors) {
        for (int up : net_.cfg.connectors[ci].upstream) {
          ApproachSense ap;
          ap.connector = ci;
          ap.link = up;
          ap.green = greens_[ci] == up;
          ap.discharging = discharging[di] != 0;
          ap.count = approach_counts[di];
          ++di;
          ap.arrivals = link_arrivals_step_[up];
          sense.approaches.push_back(ap);
        }
      }
      controller_->observe_step(sense);
    }

    if (trace_) {
      const double tt = time_s();
      for (int l : net_.topo_links) {
        for (const Vehicle& v : lanes_[l]) {
          *trace_ << fmt_double(tt) << ',' << v.id << ',' << net_.cfg.links[l].id << ','
                  << fmt_double(v.pos_m) << ',' << fmt_double(v.speed_mps) << ','
                  << to_string(v.regime) << '\n';
        }
      }
    }
  }

  IntervalMeasurements measure() const {
    IntervalMeasurements m;
    m.t_s = time_s();
    m.interval_s = interval_s_;
    m.segments.resize(n_segments_);
    std::vector<double> speed_sum(n_segments_, 0.0), gap_sum(n_segments_, 0.0);
    std::vector<int> gap_pairs(n_segments_, 0);
    for (int l = 0; l < n_links_; ++l) {
      int s = net_.link_segment[l];
      const auto& lane = lanes_[l];
      SegmentMeasurement& seg = m.segments[s];
      for (std::size_t i = 0; i < lane.size(); ++i) {
        const Vehicle& v = lane[i];
        seg.occupancy += v.length_m + params_.cc0_m;
        speed_sum[s] += v.speed_mps;
        ++seg.count;
        if (i > 0) {
          gap_sum[s] += lane[i - 1].pos_m - lane[i - 1].length_m - v.pos_m;
          ++gap_pairs[s];
        }
      }
    }
    for (int s = 0; s < n_segments_; ++s) {
      SegmentMeasurement& seg = m.segments[s];
      seg.occupancy /= seg_len_m_[s];
      double ceiling = cmd_kmh_[s] > 0.0 ? std::min(seg_lim_kmh_[s], cmd_kmh_[s]) : seg_lim_kmh_[s];
      seg.mean_speed_kmh = seg.count > 0 ? mps_to_kmh(speed_sum[s] / seg.count) : ceiling;
      seg.mean_gap_m = gap_pairs[s] > 0 ? gap_sum[s] / gap_pairs[s] : seg_len_m_[s];
      seg.inflow_vps = interval_s_ > 0 ? in_ctr_[s] / interval_s_ : 0.0;
      seg.outflow_vps = interval_s_ > 0 ? out_ctr_[s] / interval_s_ : 0.0;
    }
    return m;
  }

  const std::deque<Vehicle>& lane(int link) const { return lanes_[link]; }
  const std::vector<double>& commands_kmh() const { return cmd_kmh_; }

 private:
  void reset_flow_counters() {
    std::fill(in_ctr_.begin(), in_ctr_.end(), 0);
    std::fill(out_ctr_.begin(), out_ctr_.end(), 0);
  }

  void clamp_commands() {
    for (double& c : cmd_kmh_)
      if (c > 0.0 && c < 5.0) c = 5.0;
  }

  double ceiling_mps(const Vehicle& v, int link) const {
    double lim = lim_mps_[link];
    if (!v.compliant) return lim;
    double cmd = cmd_kmh_[net_.link_segment[link]];
    return cmd > 0.0 ? std::min(lim, kmh_to_mps(cmd)) : lim;
  }

  /// Leader for a link's front vehicle: nearest of the cross-link vehicle on
  /// its route within the lookahead and any stop-line ahead (red signal, or an
  /// unaccepted merge approach).
  std::optional<LeaderView> front_vehicle_leader(int link, const Vehicle& v) const {
    std::optional<LeaderView> best;
    double dist = len_m_[link] - v.pos_m;
    const auto& route = net_.cfg.routes[v.route].links;
    for (std::size_t rp = v.route_pos + 1; rp < route.size() && dist <= kLookahead_m; ++rp) {
      int nl = route[rp];
      if (!lanes_[nl].empty()) {
        const Vehicle& back = lanes_[nl].back();
        best = LeaderView{dist + back.pos_m - back.length_m, back.speed_mps, back.accel_prev};
        break;
      }
      dist += len_m_[nl];
    }
    int ci = net_.out_connector[link];
    if (ci >= 0) {
      bool stopline = false;
      if (greens_[ci] != kSignalInactive) {
        stopline = greens_[ci] != link;  // red or intergreen for this approach
      } else if (net_.is_minor_approach(ci, link)) {
        stopline = !accepted_[link];
      }
      if (stopline) {
        double gap = len_m_[link] - v.pos_m;
        if (!best.has_value() || gap < best->net_gap_m) best = LeaderView{gap, 0.0, 0.0};
      }
    }
    return best;
  }

  /// Re-evaluated every step: the front vehicle of each give-way approach may
  /// proceed iff the nearest conflicting vehicle arrives later than the
  /// critical gap and the receiving link has room. Signal control overrides.
  void evaluate_merge_acceptance() {
    std::fill(accepted_.begin(), accepted_.end(), false);
    for (std::size_t ci = 0; ci < net_.cfg.connectors.size(); ++ci) {
      const Connector& c = net_.cfg.connectors[ci];
      if (c.kind != ConnectorKind::Merge) continue;
      if (greens_[ci] != kSignalInactive) continue;  // signal heads govern
      int major = c.priority.front();
      int dlink = c.downstream.front();
      for (std::size_t pi = 1; pi < c.priority.size(); ++pi) {
        int minor = c.priority[pi];
        const auto& lane = lanes_[minor];
        if (lane.empty()) continue;
        const Vehicle& cand = lane.front();
        if (len_m_[minor] - cand.pos_m > kMergeCandidateZone_m) continue;
        double arrival = std::numeric_limits<double>::infinity();
        if (!lanes_[major].empty()) {
          const Vehicle& mv = lanes_[major].front();
          arrival = arrival_time_s(len_m_[major] - mv.pos_m, mv.speed_mps);
        }
        double space = lanes_[dlink].empty()
                           ? len_m_[dlink]
                           : lanes_[dlink].back().pos_m - lanes_[dlink].back().length_m;
        accepted_[minor] = merge_gap_accept(arrival, space, cand.length_m, params_.cc0_m);
      }
    }
  }

  /// Move vehicles whose front bumper crossed their link end. Merge upstreams
  /// go in priority order; a vehicle that cannot proceed holds at the line.
  void do_transfers() {
    for (std::size_t ci = 0; ci < net_.cfg.connectors.size(); ++ci) {
      const Connector& c = net_.cfg.connectors[ci];
      const std::vector<int>& order = c.kind == ConnectorKind::Merge ? c.priority : c.upstream;
      for (int up : order) {
        auto& lane = lanes_[up];
        while (!lane.empty() && lane.front().pos_m >= len_m_[up]) {
          Vehicle& v = lane.front();
          bool allowed = true;
          if (greens_[ci] != kSignalInactive) {
            allowed = greens_[ci] == up;
          } else if (net_.is_minor_approach(static_cast<int>(ci), up)) {
            allowed = accepted_[up];
          }
          int next = net_.cfg.routes[v.route].links[v.route_pos + 1];
          double new_pos = v.pos_m - len_m_[up];
          if (allowed && !lanes_[next].empty()) {
            const Vehicle& back = lanes_[next].back();
            if (back.pos_m - back.length_m - new_pos < params_.cc0_m) allowed = false;
          }
          if (!allowed) {
            v.pos_m = len_m_[up];  // hold at the line; dynamics resolve next step
            break;
          }
          v.pos_m = new_pos;
          v.route_pos += 1;
          Vehicle moved = v;
          lane.pop_front();
          lanes_[next].push_back(moved);
          ++link_arrivals_step_[next];
          int s_from = net_.link_segment[up], s_to = net_.link_segment[next];
          if (s_from != s_to) {
            ++out_ctr_[s_from];
            ++in_ctr_[s_to];
          }
        }
      }
    }
    // Route completions: front bumper past the end of the final link.
    for (int l = 0; l < n_links_; ++l) {
      if (!net_.cfg.links[l].exit) continue;
      auto& lane = lanes_[l];
      while (!lane.empty() && lane.front().pos_m >= len_m_[l]) {
        const Vehicle& v = lane.front();
        acc_.record_served(v.dist_m, time_s() + dt_ - v.entry_time_s, v.delay_s, v.delay_stop_s,
                           v.stop_tracker.stops, true);
        ++arrived_;
        ++out_ctr_[net_.link_segment[l]];
        lane.pop_front();
      }
    }
  }

  /// Draw new demand and release at most one queued vehicle per entry. The
  /// insertion speed fits the available gap; release needs the minimum
  /// following distance at that speed.
  void do_injection(double t) {
    for (std::size_t ei = 0; ei < net_.cfg.entries.size(); ++ei) {
      const EntrySpec& e = net_.cfg.entries[ei];
      double rate = 0.0;
      for (const DemandWindow& w : e.windows)
        if (t >= w.t_start_s && t < w.t_end_s) rate += w.rate_veh_per_hr;
      if (rate > 0.0) {
        int n = rng_.poisson(rate * dt_ / 3600.0);
        for (int i = 0; i < n; ++i) {
          QueuedArrival qa;
          qa.t_s = t;
          qa.route = draw_route(e.link);
          qa.compliant = rng_.uniform01() < compliance_;
          queues_[ei].push_back(qa);
          ++injected_;
        }
      }
      if (queues_[ei].empty()) continue;

      int link = e.link;
      auto& lane = lanes_[link];
      const QueuedArrival& qa = queues_[ei].front();
      double insert_pos = kVehicleLength_m;
      double v_lim = lim_mps_[link];
      Vehicle nv;
      nv.compliant = qa.compliant;
      double v_cap = ceiling_mps(nv, link);
      double v_ins;
      bool ok;
      if (lane.empty()) {
        v_ins = v_cap;
        ok = len_m_[link] >= insert_pos;
      } else {
        const Vehicle& last = lane.back();
        double gap = last.pos_m - last.length_m - insert_pos;
        double fit = std::max(0.0, (gap - params_.cc0_m) / params_.cc1_s);
        double brake = last.speed_mps + std::sqrt(2.0 * 3.5 * std::max(gap - params_.cc0_m, 0.0));
        v_ins = std::min({v_cap, fit, brake});
        // Gate on the speed the vehicle aspires to, not the gap-fitted one:
        // a vehicle enters either into following position at stream speed or
        // onto the tail of a queue, never crawling behind a receding leader.
        double v_gate = std::min(v_cap, brake);
        W99Thresholds th = w99_thresholds(params_, v_gate, last.speed_mps, last.accel_prev, gap);
        ok = gap >= th.sdxc;
      }
      (void)v_lim;
      if (!ok) continue;

      nv.id = next_id_++;
      nv.route = qa.route;
      nv.route_pos = 0;
      nv.pos_m = insert_pos;
      nv.speed_mps = v_ins;
      nv.accel_prev = 0.0;
      nv.entry_time_s = t;
      nv.stop_tracker.init(v_ins);
      lane.push_back(nv);
      queues_[ei].pop_front();
      ++link_arrivals_step_[link];
      ++in_ctr_[net_.link_segment[link]];
    }
  }

  int draw_route(int entry_link) {
    double u = rng_.uniform01();
    double cum = 0.0;
    int last_match = -1;
    for (std::size_t ri = 0; ri < net_.cfg.routes.size(); ++ri) {
      if (net_.cfg.routes[ri].links.front() != entry_link) continue;
      last_match = static_cast<int>(ri);
      cum += net_.cfg.routes[ri].weight;
      if (u < cum) return last_match;
    }
    return last_match;  // numeric slack: weights sum to 1 within tolerance
  }

  RoadNetwork net_;
  W99Params params_;
  Rng rng_;
  Controller* controller_ = nullptr;
  std::ostream* trace_ = nullptr;

  double dt_ = 0.1;
  double duration_s_ = 0.0;
  double interval_s_ = 60.0;
  double compliance_ = 1.0;
  long total_steps_ = 0;
  long steps_per_interval_ = 0;
  long steps_per_second_ = 10;
  long step_idx_ = 0;

  int n_links_ = 0;
  int n_segments_ = 0;
  std::vector<double> len_m_, lim_mps_, seg_len_m_, seg_lim_kmh_;

  std::vector<std::deque<Vehicle>> lanes_;
  std::vector<std::deque<QueuedArrival>> queues_;
  std::vector<double> cmd_kmh_;
  std::vector<int> greens_;
  std::vector<char> accepted_;
  std::vector<double> accel_scratch_;
  std::vector<double> front_gap_scratch_;
  std::vector<int> in_ctr_, out_ctr_, link_arrivals_step_;

  MetricsAccumulator acc_;
  long injected_ = 0;
  long arrived_ = 0;
  long clamp_events_ = 0;
  long veh_steps_ = 0;
  long next_id_ = 1;

  bool record_occupancy_ = false;
  std::vector<std::vector<double>> occ_history_;
};

/// First second at which `series` exceeds `threshold` for `sustain_s`
/// consecutive samples (1 Hz series); infinity when it never does.
inline double first_sustained_exceed(const std::vector<double>& series, double threshold,
                                     int sustain_s) {
  int run = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] > threshold) {
      if (++run >= sustain_s) return static_cast<double>(i + 2 - sustain_s);
    } else {
      run = 0;
    }
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace freeflow
