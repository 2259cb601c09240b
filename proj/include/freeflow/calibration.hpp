#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freeflow/core.hpp"
#include "freeflow/network.hpp"
#include "freeflow/simulation.hpp"

namespace freeflow {

// ---------------------------------------------------------------------------
// Demand sweep: empirical flow-density samples from the simulator.
// ---------------------------------------------------------------------------

struct VDFSample {
  double density = 0.0;     // occupancy fraction of the measured segment
  double flow_vps = 0.0;    // veh/s across the segment's downstream boundary
  double demand_vph = 0.0;  // commanded entry demand for this run
  std::uint64_t seed = 0;
  bool steady = true;  // false when the window's flow never settled
};

struct SweepConfig {
  double warmup_s = 300.0;   // discarded before anything is measured
  double run_s = 1500.0;     // total simulated time per point
  double window_s = 600.0;   // trailing steady window that is measured
  double flow_cv_max = 0.35; // flow coefficient of variation above this flags the sample
  int segment = 0;           // measured super-segment
};

/// One simulation point of the sweep: run the scenario at the given entry
/// demand, averaging density (per-second occupancy) and boundary outflow over
/// the trailing window. The sample is flagged non-steady when the
/// per-interval flows in the window vary more than flow_cv_max allows.
inline VDFSample sweep_point(const ScenarioConfig& base, double demand_vph, std::uint64_t seed,
                             const SweepConfig& sc = {}) {
  if (base.entries.size() != 1)
    throw ConfigError("demand sweep needs a scenario with exactly one entry");
  if (sc.window_s + sc.warmup_s > sc.run_s)
    throw ConfigError("demand sweep: warmup plus window exceed the run length");
  ScenarioConfig cfg = base;
  cfg.sim.duration_s = sc.run_s;
  cfg.entries[0].windows = {{0.0, sc.run_s, demand_vph}};

  RoadNetwork net = build_network(cfg);
  if (sc.segment < 0 || sc.segment >= net.n_segments())
    throw ConfigError("demand sweep: measured segment out of range");
  Simulation sim(net, seed);
  sim.enable_occupancy_recorder();

  std::vector<double> cmd(static_cast<std::size_t>(net.n_segments()), 0.0);
  const double window_start = sc.run_s - sc.window_s;
  std::vector<double> window_flows;
  while (!sim.finished()) {
    double t0 = sim.time_s();
    IntervalMeasurements m = sim.advance_interval(cmd);
    if (t0 >= window_start - 1e-9)
      window_flows.push_back(m.segments[static_cast<std::size_t>(sc.segment)].outflow_vps);
  }

  VDFSample s;
  s.demand_vph = demand_vph;
  s.seed = seed;
  // Density: mean of the per-second occupancy samples inside the window.
  const auto& occ = sim.occupancy_history();
  std::size_t first = static_cast<std::size_t>(std::lround(window_start));
  double dsum = 0.0;
  for (std::size_t k = first; k < occ.size(); ++k)
    dsum += occ[k][static_cast<std::size_t>(sc.segment)];
  s.density = occ.size() > first ? dsum / static_cast<double>(occ.size() - first) : 0.0;
  // Flow: mean of the per-interval boundary outflows inside the window.
  double fsum = 0.0;
  for (double f : window_flows) fsum += f;
  s.flow_vps = window_flows.empty() ? 0.0 : fsum / static_cast<double>(window_flows.size());
  // Steadiness: coefficient of variation of the window's interval flows.
  if (window_flows.size() >= 2 && s.flow_vps > 1e-9) {
    double var = 0.0;
    for (double f : window_flows) var += (f - s.flow_vps) * (f - s.flow_vps);
    var /= static_cast<double>(window_flows.size() - 1);
    s.steady = std::sqrt(var) / s.flow_vps <= sc.flow_cv_max;
  }
  return s;
}

/// Full sweep: every demand at every seed, in input order.
inline std::vector<VDFSample> sweep_demand(const ScenarioConfig& base,
                                           const std::vector<double>& demands,
                                           const std::vector<std::uint64_t>& seeds,
                                           const SweepConfig& sc = {}) {
  std::vector<VDFSample> out;
  out.reserve(demands.size() * seeds.size());
  for (double d : demands)
    for (std::uint64_t seed : seeds) out.push_back(sweep_point(base, d, seed, sc));
  return out;
}

inline std::string samples_csv(const std::vector<VDFSample>& samples) {
  std::string out = "density,flow_vps,demand_vph,seed,steady\n";
  for (const VDFSample& s : samples) {
    out += fmt_double(s.density) + "," + fmt_double(s.flow_vps) + "," +
           fmt_double(s.demand_vph) + "," + std::to_string(s.seed) + "," +
           (s.steady ? "1" : "0") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unimodal volume-density families and their least-squares fits.
// ---------------------------------------------------------------------------

enum class VDFFamily { Greenshields, Underwood, Drake };

inline std::string vdf_family_name(VDFFamily f) {
  switch (f) {
    case VDFFamily::Greenshields: return "greenshields";
    case VDFFamily::Underwood: return "underwood";
    case VDFFamily::Drake: return "drake";
  }
  return "?";
}

/// Fitted volume-density curve C(rho) = rho * v(rho). `scale` is the fitted
/// free-flow speed parameter (flow units per occupancy); `shape` is the jam
/// occupancy (linear family) or the critical occupancy (exponential families).
struct VDFFit {
  VDFFamily family = VDFFamily::Greenshields;
  double scale = 0.0;
  double shape = 0.0;
  double sse = 0.0;       // sum of squared flow residuals
  double rho_star = 0.0;  // argmax-flow occupancy, analytic per family
  double c_max = 0.0;     // flow at rho_star
};

/// Curve value for a fitted family.
inline double vdf_flow(const VDFFit& fit, double rho) {
  switch (fit.family) {
    case VDFFamily::Greenshields: return rho * fit.scale * (1.0 - rho / fit.shape);
    case VDFFamily::Underwood: return rho * fit.scale * std::exp(-rho / fit.shape);
    case VDFFamily::Drake:
      return rho * fit.scale * std::exp(-0.5 * (rho / fit.shape) * (rho / fit.shape));
  }
  return 0.0;
}

namespace detail {

/// Ordinary least squares for y = p*bx + q*cx over the given rows; returns
/// false when the normal equations are singular.
inline bool ls2(const std::vector<double>& bx, const std::vector<double>& cx,
                const std::vector<double>& y, double& p, double& q) {
  double sbb = 0, sbc = 0, scc = 0, sby = 0, scy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sbb += bx[i] * bx[i];
    sbc += bx[i] * cx[i];
    scc += cx[i] * cx[i];
    sby += bx[i] * y[i];
    scy += cx[i] * y[i];
  }
  double det = sbb * scc - sbc * sbc;
  if (std::abs(det) < 1e-12) return false;
  p = (sby * scc - scy * sbc) / det;
  q = (scy * sbb - sby * sbc) / det;
  return true;
}

inline double sse_of(const VDFFit& fit, const std::vector<VDFSample>& samples) {
  double sse = 0.0;
  for (const VDFSample& s : samples) {
    double r = s.flow_vps - vdf_flow(fit, s.density);
    sse += r * r;
  }
  return sse;
}

}  // namespace detail

/// Least-squares fit of the three classical unimodal families in flow space,
/// returning the lowest-SSE one. The linear family is fit directly; the
/// exponential families are fit on log(flow/density) and scored back in flow
/// space so the comparison is apples-to-apples.
inline VDFFit fit_vdf(const std::vector<VDFSample>& samples) {
  if (samples.size() < 8)
    throw ConfigError("volume-density fit needs at least 8 samples, got " +
                      std::to_string(samples.size()));
  double rho_min = samples[0].density, rho_max = samples[0].density;
  for (const VDFSample& s : samples) {
    rho_min = std::min(rho_min, s.density);
    rho_max = std::max(rho_max, s.density);
  }
  if (rho_max - rho_min < 1e-9) throw ConfigError("volume-density fit: samples share one density");

  std::vector<VDFFit> candidates;

  // Linear speed family: C = a*rho + b*rho^2 with a = v_f, b = -v_f/rho_jam.
  {
    std::vector<double> bx, cx, y;
    for (const VDFSample& s : samples) {
      bx.push_back(s.density);
      cx.push_back(s.density * s.density);
      y.push_back(s.flow_vps);
    }
    double a = 0, b = 0;
    if (detail::ls2(bx, cx, y, a, b) && a > 0.0 && b < 0.0) {
      VDFFit f;
      f.family = VDFFamily::Greenshields;
      f.scale = a;
      f.shape = -a / b;  // jam occupancy
      f.rho_star = f.shape / 2.0;
      f.c_max = vdf_flow(f, f.rho_star);
      f.sse = detail::sse_of(f, samples);
      candidates.push_back(f);
    }
  }

  // Exponential families: log(C/rho) = log v_f + q * basis(rho).
  auto fit_log = [&](VDFFamily family) {
    std::vector<double> bx, cx, y;
    for (const VDFSample& s : samples) {
      if (s.density <= 1e-9 || s.flow_vps <= 1e-9) continue;
      bx.push_back(1.0);
      cx.push_back(family == VDFFamily::Underwood ? s.density : s.density * s.density);
      y.push_back(std::log(s.flow_vps / s.density));
    }
    if (y.size() < 4) return;
    double p = 0, q = 0;
    if (!detail::ls2(bx, cx, y, p, q) || q >= 0.0) return;
    VDFFit f;
    f.family = family;
    f.scale = std::exp(p);
    f.shape = family == VDFFamily::Underwood ? -1.0 / q : std::sqrt(-0.5 / q);
    f.rho_star = f.shape;  // analytic argmax for both exponential families
    f.c_max = vdf_flow(f, f.rho_star);
    f.sse = detail::sse_of(f, samples);
    candidates.push_back(f);
  };
  fit_log(VDFFamily::Underwood);
  fit_log(VDFFamily::Drake);

  if (candidates.empty())
    throw ConfigError("volume-density fit: no unimodal family matches the samples");
  VDFFit best = candidates[0];
  for (const VDFFit& f : candidates)
    if (f.sse < best.sse) best = f;

  if (!(best.rho_star > rho_min && best.rho_star < rho_max)) {
    throw ConfigError("sweep range insufficient: fitted critical occupancy " +
                      fmt_double(best.rho_star) + " lies outside the sampled range [" +
                      fmt_double(rho_min) + ", " + fmt_double(rho_max) + "]");
  }
  return best;
}

/// Numerical unimodality of a fitted curve on [0, rho_max]: the flow
/// differences on a 100-point grid change sign exactly once.
inline bool fitted_curve_unimodal(const VDFFit& fit, double rho_max) {
  int changes = 0;
  double prev_diff = 0.0;
  bool have_prev = false;
  for (int k = 0; k < 100; ++k) {
    double r0 = rho_max * k / 100.0;
    double r1 = rho_max * (k + 1) / 100.0;
    double diff = vdf_flow(fit, r1) - vdf_flow(fit, r0);
    if (diff == 0.0) continue;
    if (have_prev && (diff > 0.0) != (prev_diff > 0.0)) ++changes;
    prev_diff = diff;
    have_prev = true;
  }
  return changes == 1;
}

/// Empirical (weak) unimodality: bin samples by density and average flow per
/// occupied bin. The bin means must be non-decreasing up to their maximum and
/// non-increasing after it, each within a noise tolerance relative to the
/// peak, and must actually rise out of the first bin. A saturating curve
/// (rising branch then a capacity plateau) qualifies; a dip-and-recover or
/// falling-then-rising shape does not.
inline bool empirical_unimodal(const std::vector<VDFSample>& samples, int n_bins = 8,
                               double rel_tol = 0.05) {
  if (samples.size() < 3 || n_bins < 3) return false;
  double rho_max = 0.0;
  for (const VDFSample& s : samples) rho_max = std::max(rho_max, s.density);
  if (rho_max <= 0.0) return false;
  std::vector<double> sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<int> cnt(static_cast<std::size_t>(n_bins), 0);
  for (const VDFSample& s : samples) {
    int b = std::min(n_bins - 1, static_cast<int>(s.density / rho_max * n_bins));
    sum[static_cast<std::size_t>(b)] += s.flow_vps;
    ++cnt[static_cast<std::size_t>(b)];
  }
  std::vector<double> means;
  for (int b = 0; b < n_bins; ++b)
    if (cnt[static_cast<std::size_t>(b)] > 0)
      means.push_back(sum[static_cast<std::size_t>(b)] / cnt[static_cast<std::size_t>(b)]);
  if (means.size() < 3) return false;

  std::size_t peak = 0;
  for (std::size_t k = 1; k < means.size(); ++k)
    if (means[k] > means[peak]) peak = k;
  double tol = rel_tol * means[peak];
  if (!(means[peak] > means.front() + tol)) return false;  // no rise, no mode
  for (std::size_t k = 0; k + 1 < means.size(); ++k) {
    if (k < peak && means[k + 1] < means[k] - tol) return false;
    if (k >= peak && means[k + 1] > means[k] + tol) return false;
  }
  return true;
}

inline std::string fit_json(const VDFFit& fit) {
  nlohmann::json j;
  j["family"] = vdf_family_name(fit.family);
  j["scale"] = fit.scale;
  j["shape"] = fit.shape;
  j["sse"] = fit.sse;
  j["rho_star"] = fit.rho_star;
  j["c_max"] = fit.c_max;
  return j.dump(2) + "\n";
}

}  // namespace freeflow
