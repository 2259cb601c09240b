#pragma once

// Multi-seed experiment runner. Seeds are share-nothing simulations, so they
// execute in parallel up to a thread cap (FREEFLOW_THREADS, default: hardware
// concurrency); results come back ordered by the input seed list regardless
// of completion order. Each worker builds its own controller instance, since
// controllers carry per-run state.

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "freeflow/control.hpp"
#include "freeflow/metrics.hpp"
#include "freeflow/rl.hpp"
#include "freeflow/simulation.hpp"

namespace freeflow {

/// Parallelism cap: FREEFLOW_THREADS when set (clamped to >= 1), otherwise
/// the hardware concurrency, and 1 when even that is unknown.
inline int thread_cap() {
  if (const char* env = std::getenv("FREEFLOW_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

struct RunOptions {
  double compliance = -1.0;        // -1: use the scenario's value
  bool record_occupancy = false;   // keep per-second segment occupancy
  std::string trace_path_prefix;   // when set: per-seed vehicle trace CSVs
};

struct SeedOutcome {
  SeedReport report;
  std::vector<std::vector<double>> occupancy;  // per second, per segment
};

/// Run one seed with a fresh controller built from `spec` (or a greedy policy
/// rollout when `policy` is non-null; `spec` is ignored then).
inline SeedOutcome run_one_seed(const RoadNetwork& net, const ControllerSpec& spec,
                                const QNetwork* policy, std::uint64_t seed,
                                const RunOptions& opt = {}) {
  std::unique_ptr<Controller> owned;
  std::optional<PolicyController> policy_ctl;
  Controller* ctl = nullptr;
  if (policy) {
    policy_ctl.emplace(*policy);
    ctl = &*policy_ctl;
  } else if (spec.type != "none") {
    owned = make_controller(spec);
    ctl = owned.get();
  }
  Simulation sim(net, seed, opt.compliance);
  if (ctl) sim.set_controller(ctl);
  if (opt.record_occupancy) sim.enable_occupancy_recorder();
  std::ofstream trace;
  if (!opt.trace_path_prefix.empty()) {
    std::string path = opt.trace_path_prefix + "_seed" + std::to_string(seed) + ".csv";
    trace.open(path, std::ios::binary);
    if (!trace) throw RunError("cannot open trace file " + path);
    sim.set_trace(&trace);
  }
  sim.run();
  SeedOutcome out;
  out.report = SeedReport{seed, sim.finalize()};
  if (opt.record_occupancy) out.occupancy = sim.occupancy_history();
  return out;
}

/// Run every seed, at most thread_cap() at a time, and return outcomes in the
/// order of `seeds`. The first worker exception is rethrown on the caller.
inline std::vector<SeedOutcome> run_seeds(const RoadNetwork& net, const ControllerSpec& spec,
                                          const QNetwork* policy,
                                          const std::vector<std::uint64_t>& seeds,
                                          const RunOptions& opt = {}) {
  std::vector<SeedOutcome> results(seeds.size());
  int workers = std::min<int>(thread_cap(), static_cast<int>(seeds.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i)
      results[i] = run_one_seed(net, spec, policy, seeds[i], opt);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= seeds.size()) return;
        try {
          results[i] = run_one_seed(net, spec, policy, seeds[i], opt);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

inline std::vector<SeedReport> reports_of(const std::vector<SeedOutcome>& outcomes) {
  std::vector<SeedReport> rows;
  rows.reserve(outcomes.size());
  for (const SeedOutcome& o : outcomes) rows.push_back(o.report);
  return rows;
}

}  // namespace freeflow
