#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freeflow/core.hpp"

namespace freeflow {

// ---------------------------------------------------------------------------
// Per-vehicle instruments
// ---------------------------------------------------------------------------

inline constexpr double kStopThreshold_mps = 0.2;
inline constexpr double kStopRearm_mps = 1.0;

/// Counts stop events: a downward crossing of the stop threshold counts once,
/// and the tracker re-arms only after the speed recovers past the re-arm
/// level. A vehicle inserted below the re-arm level starts disarmed, so
/// entering the network at standstill is not itself a stop.
struct StopTracker {
  bool armed = false;
  int stops = 0;

  void init(double v0_mps) {
    armed = v0_mps >= kStopRearm_mps;
    stops = 0;
  }
  void step(double v_mps) {
    if (armed && v_mps < kStopThreshold_mps) {
      ++stops;
      armed = false;
    } else if (!armed && v_mps >= kStopRearm_mps) {
      armed = true;
    }
  }
};

/// Delay accrued over one step against the effective commanded ceiling: the
/// time lost relative to covering the step at v_ref. Non-negative because the
/// integrator never lets speed exceed the ceiling.
inline double step_delay_s(double dt, double v_mps, double v_ref_mps) {
  if (v_ref_mps <= 0.0) return 0.0;
  double d = dt * (1.0 - v_mps / v_ref_mps);
  return d > 0.0 ? d : 0.0;
}

/// Fuel-burn CO2 rate (g/km) as a function of mean speed, valid on
/// [5, 150] km/h and clamped outside.
inline double co2_g_per_km(double v_kmh) {
  double v = std::clamp(v_kmh, 5.0, 150.0);
  return 429.51 - 7.8227 * v + 0.0617 * v * v;
}

// ---------------------------------------------------------------------------
// Network performance report
// ---------------------------------------------------------------------------

inline constexpr int kNumMetrics = 14;

inline const std::array<const char*, kNumMetrics>& metric_names() {
  static const std::array<const char*, kNumMetrics> kNames = {
      "VEHARR",       "DISTTOT",      "SPEEDAVG",  "DEMANDLATENT", "STOPSAVG",
      "STOPSTOT",     "DELAYAVG",     "DELAYSTOPAVG", "DELAYTOT",  "DELAYSTOPTOT",
      "DELAYLATENT",  "VEHACT",       "TRAVTMAVG", "EMISSIONSCO2"};
  return kNames;
}

struct Report {
  double veh_arrived = 0;       // vehicles that completed their route
  double dist_total_km = 0;     // distance covered by served vehicles
  double speed_avg_kmh = 0;     // space-mean speed: total distance / total time
  double demand_latent = 0;     // vehicles still waiting to enter at the end
  double stops_avg = 0;
  double stops_total = 0;
  double delay_avg_s = 0;
  double delay_stop_avg_s = 0;
  double delay_total_s = 0;
  double delay_stop_total_s = 0;
  double delay_latent_s = 0;    // accumulated waiting of the latent queue
  double veh_active = 0;        // vehicles still on the network at the end
  double travel_time_avg_s = 0;
  double emissions_co2 = 0;     // distance-weighted kg/km, scaled by demand/served

  std::array<double, kNumMetrics> row() const {
    return {veh_arrived,  dist_total_km,      speed_avg_kmh,    demand_latent,
            stops_avg,    stops_total,        delay_avg_s,      delay_stop_avg_s,
            delay_total_s, delay_stop_total_s, delay_latent_s,  veh_active,
            travel_time_avg_s, emissions_co2};
  }
};

/// Collects per-vehicle outcomes during a run and folds them into a Report.
/// Arrived and still-active vehicles both count as served; latent demand only
/// scales the emissions figure and its own latency metrics.
class MetricsAccumulator {
 public:
  void record_served(double dist_m, double travel_s, double delay_s, double delay_stop_s,
                     int stops, bool arrived) {
    if (arrived)
      ++n_arrived_;
    else
      ++n_active_;
    sum_dist_m_ += dist_m;
    sum_travel_s_ += travel_s;
    sum_delay_s_ += delay_s;
    sum_delay_stop_s_ += delay_stop_s;
    sum_stops_ += stops;
    if (travel_s > 0.0) {
      double mean_kmh = mps_to_kmh(dist_m / travel_s);
      sum_co2_g_ += co2_g_per_km(mean_kmh) * (dist_m / 1000.0);
    }
  }

  void record_latent(double wait_s) {
    ++n_latent_;
    sum_latent_wait_s_ += wait_s;
  }

  long served() const { return n_arrived_ + n_active_; }
  long arrived() const { return n_arrived_; }
  long active() const { return n_active_; }
  long latent() const { return n_latent_; }

  Report finalize() const {
    Report r;
    const double served_n = static_cast<double>(n_arrived_ + n_active_);
    r.veh_arrived = static_cast<double>(n_arrived_);
    r.veh_active = static_cast<double>(n_active_);
    r.demand_latent = static_cast<double>(n_latent_);
    r.dist_total_km = sum_dist_m_ / 1000.0;
    r.speed_avg_kmh = sum_travel_s_ > 0.0 ? r.dist_total_km / (sum_travel_s_ / 3600.0) : 0.0;
    r.stops_total = static_cast<double>(sum_stops_);
    r.delay_total_s = sum_delay_s_;
    r.delay_stop_total_s = sum_delay_stop_s_;
    r.delay_latent_s = sum_latent_wait_s_;
    if (served_n > 0) {
      r.stops_avg = r.stops_total / served_n;
      r.delay_avg_s = sum_delay_s_ / served_n;
      r.delay_stop_avg_s = sum_delay_stop_s_ / served_n;
      r.travel_time_avg_s = sum_travel_s_ / served_n;
      if (r.dist_total_km > 0.0) {
        double mean_kg_per_km = sum_co2_g_ / (r.dist_total_km * 1000.0);
        double demand_scale = (served_n + static_cast<double>(n_latent_)) / served_n;
        r.emissions_co2 = mean_kg_per_km * demand_scale;
      }
    }
    return r;
  }

 private:
  long n_arrived_ = 0;
  long n_active_ = 0;
  long n_latent_ = 0;
  long sum_stops_ = 0;
  double sum_dist_m_ = 0;
  double sum_travel_s_ = 0;
  double sum_delay_s_ = 0;
  double sum_delay_stop_s_ = 0;
  double sum_latent_wait_s_ = 0;
  double sum_co2_g_ = 0;
};

// ---------------------------------------------------------------------------
// CSV + sidecar serialization
// ---------------------------------------------------------------------------

struct SeedReport {
  std::uint64_t seed = 0;
  Report report;
};

/// One row per seed in input order, then "mean" and "stdev" rows (sample
/// standard deviation). All numbers use shortest %.9g form.
inline std::string report_csv(const std::vector<SeedReport>& rows) {
  std::string out = "seed";
  for (const char* name : metric_names()) {
    out += ',';
    out += name;
  }
  out += '\n';
  std::array<std::vector<double>, kNumMetrics> columns;
  for (const SeedReport& sr : rows) {
    out += std::to_string(sr.seed);
    auto vals = sr.report.row();
    for (int i = 0; i < kNumMetrics; ++i) {
      out += ',';
      out += fmt_double(vals[i]);
      columns[i].push_back(vals[i]);
    }
    out += '\n';
  }
  out += "mean";
  for (int i = 0; i < kNumMetrics; ++i) {
    out += ',';
    out += fmt_double(columns[i].empty() ? 0.0 : mean_of(columns[i]));
  }
  out += "\nstdev";
  for (int i = 0; i < kNumMetrics; ++i) {
    out += ',';
    out += fmt_double(columns[i].empty() ? 0.0 : stdev_of(columns[i]));
  }
  out += '\n';
  return out;
}

struct MetaInfo {
  std::string controller;
  std::vector<std::uint64_t> seeds;
  std::string scenario_hash_hex;
  std::string delay_reference =
      "delay is measured against each vehicle's effective commanded ceiling; "
      "non-compliant vehicles are referenced to the speed limit";
  std::vector<std::string> warnings;
};

inline std::string meta_json(const MetaInfo& m) {
  nlohmann::json j;
  j["controller"] = m.controller;
  j["seeds"] = m.seeds;
  j["scenario_hash"] = m.scenario_hash_hex;
  j["delay_reference"] = m.delay_reference;
  j["warnings"] = m.warnings;
  return j.dump(2) + "\n";
}

/// Sidecar path: the csv path with its extension replaced by ".meta".
inline std::string meta_path_for(const std::string& csv_path) {
  auto slash = csv_path.find_last_of('/');
  auto dot = csv_path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return csv_path + ".meta";
  return csv_path.substr(0, dot) + ".meta";
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot open '" + path + "' for writing");
  f << content;
  if (!f.good()) throw RunError("failed writing '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot open '" + path + "' for reading");
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace freeflow
