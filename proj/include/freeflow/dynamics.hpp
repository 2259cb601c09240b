#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace freeflow {

// ---------------------------------------------------------------------------
// Psychophysical car-following (Wiedemann-style, ten-parameter form)
// ---------------------------------------------------------------------------

struct W99Params {
  double cc0_m = 0.5;      // standstill gap
  double cc1_s = 2.5;      // desired time headway
  double cc2_m = 20.0;     // following band width
  double cc3 = -25.0;      // approach onset factor (per m/s of closing)
  double cc4_mps = -0.5;   // closing perception threshold offset
  double cc5_mps = 0.6;    // opening perception threshold offset
  double cc6 = 10.0;       // oscillation speed dependency (per 1e4 m)
  double cc7_mps2 = 0.5;   // oscillation acceleration
  double cc8_mps2 = 1.0;   // acceleration from standstill
  double cc9_mps2 = 0.75;  // acceleration at 80 km/h
};

inline constexpr double kVehicleLength_m = 4.5;
inline constexpr double kAccelRefSpeed_mps = 22.22;  // 80 km/h
inline constexpr double kCriticalGap_s = 3.0;
inline constexpr double kStoppedSpeed_mps = 0.05;

/// Follower's view of the vehicle ahead. `accel_mps2` must come from the
/// leader's previous step so update order cannot influence the result.
struct LeaderView {
  double net_gap_m = 0.0;  // leader rear bumper to follower front bumper
  double speed_mps = 0.0;
  double accel_mps2 = 0.0;
};

enum class Regime { FreeFlow, Following, ClosingIn, Emergency };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::FreeFlow: return "free";
    case Regime::Following: return "follow";
    case Regime::ClosingIn: return "closing";
    case Regime::Emergency: return "emergency";
  }
  return "?";
}

struct W99Thresholds {
  double sdxc;  // minimum following distance
  double sdxo;  // maximum following distance
  double sdxv;  // approach onset distance
  double sdv;   // speed-difference perception scale
  double sdvc;  // closing perception threshold (<= 0)
  double sdvo;  // opening perception threshold (>= 0)
};

/// Perception thresholds for a follower at speed v_f behind a leader at v_l
/// with previous-step acceleration a_l at net gap dx. dv = v_l - v_f.
inline W99Thresholds w99_thresholds(const W99Params& p, double v_f, double v_l, double a_l,
                                    double dx) {
  W99Thresholds t;
  const double dv = v_l - v_f;
  const double v_slower = (dv >= 0.0 || a_l < -1.0) ? v_f : v_l;
  t.sdxc = (v_l <= 0.0) ? p.cc0_m : p.cc0_m + p.cc1_s * v_slower;
  t.sdxo = t.sdxc + p.cc2_m;
  t.sdxv = t.sdxo + p.cc3 * (dv - p.cc4_mps);
  t.sdv = (p.cc6 / 1.0e4) * dx * dx;
  t.sdvc = (v_l > 0.0) ? (p.cc4_mps - t.sdv) : 0.0;
  t.sdvo = (v_f > p.cc5_mps) ? (t.sdv + p.cc5_mps) : t.sdv;
  return t;
}

/// Free acceleration capability, interpolated between the standstill value and
/// the value at 80 km/h.
inline double max_accel_mps2(const W99Params& p, double v_mps) {
  double f = std::min(v_mps, kAccelRefSpeed_mps) / kAccelRefSpeed_mps;
  return p.cc8_mps2 + (p.cc9_mps2 - p.cc8_mps2) * f;
}

struct CarFollowResult {
  double accel_mps2 = 0.0;
  Regime regime = Regime::FreeFlow;
};

/// One follower's acceleration for the next step of length dt, bounded so the
/// speed update can neither go negative nor exceed the commanded ceiling
/// v_cmd (commanded drops take effect within a single step).
inline CarFollowResult car_following_accel(const W99Params& p, double v_f, double v_cmd, double dt,
                                           const std::optional<LeaderView>& leader) {
  CarFollowResult res;
  const double lo = -v_f / dt;
  const double hi = (v_cmd - v_f) / dt;

  if (!leader.has_value()) {
    res.regime = Regime::FreeFlow;
    res.accel_mps2 = std::min(max_accel_mps2(p, v_f), hi);
    res.accel_mps2 = std::clamp(res.accel_mps2, lo, hi);
    return res;
  }

  const double dx = leader->net_gap_m;
  const double v_l = leader->speed_mps;
  const double a_l = leader->accel_mps2;
  const double dv = v_l - v_f;
  const W99Thresholds t = w99_thresholds(p, v_f, v_l, a_l, dx);

  double a;
  if (dx <= t.sdxc && dv <= t.sdvo) {
    res.regime = Regime::Emergency;
    if (dx <= p.cc0_m) {
      a = -8.0;
    } else {
      a = a_l - dv * dv / (2.0 * std::max(dx - p.cc0_m, 0.1));
      a = std::clamp(a, -8.0, -p.cc7_mps2);
    }
  } else if (dx < t.sdxv && dv < t.sdvc) {
    res.regime = Regime::ClosingIn;
    a = a_l - dv * dv / (2.0 * std::max(dx - t.sdxc, 0.1));
    a = std::clamp(a, -4.0, 0.0);
  } else if (dx <= t.sdxo && dx > t.sdxc && dv >= t.sdvc && dv < t.sdvo) {
    res.regime = Regime::Following;
    a = (dv < 0.0) ? -p.cc7_mps2 : p.cc7_mps2;
  } else {
    res.regime = Regime::FreeFlow;
    a = max_accel_mps2(p, v_f);
  }

  res.accel_mps2 = std::clamp(a, lo, hi);
  return res;
}

/// Speed update for one step; the commanded ceiling is a hard bound.
inline double integrate_speed(double v, double accel, double dt, double v_cmd) {
  return std::clamp(v + accel * dt, 0.0, v_cmd);
}

// ---------------------------------------------------------------------------
// Steady-state flow and merge gap acceptance
// ---------------------------------------------------------------------------

/// Flow (veh/s) of a homogeneous stream at speed v where each vehicle claims
/// d0 metres of road plus a time headway T: q = v / (d0 + v T).
inline double steady_flow(double v_mps, double d0_m = kVehicleLength_m + 0.5,
                          double headway_s = 2.5) {
  return v_mps / (d0_m + v_mps * headway_s);
}

/// Time until a conflicting vehicle at distance d and speed v reaches the
/// merge point; infinite when it is absent or effectively stopped.
inline double arrival_time_s(double dist_m, double v_mps) {
  if (v_mps <= kStoppedSpeed_mps) return std::numeric_limits<double>::infinity();
  return dist_m / v_mps;
}

/// A minor-stream candidate may enter iff the nearest conflicting major-stream
/// vehicle arrives no sooner than the critical gap AND the downstream link has
/// room for the candidate plus the standstill gap.
inline bool merge_gap_accept(double major_arrival_s, double downstream_space_m,
                             double candidate_len_m, double cc0_m = 0.5,
                             double t_crit_s = kCriticalGap_s) {
  return major_arrival_s >= t_crit_s && downstream_space_m >= cc0_m + candidate_len_m;
}

}  // namespace freeflow
