#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace freeflow {

inline constexpr double kMpsPerKmh = 1.0 / 3.6;

inline double kmh_to_mps(double v_kmh) { return v_kmh * kMpsPerKmh; }
inline double mps_to_kmh(double v_mps) { return v_mps / kMpsPerKmh; }

/// Invalid configuration or usage; maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while executing a structurally valid request; maps to CLI exit code 1.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic 64-bit RNG (splitmix64). Stream content depends only on the
/// seed, never on platform or standard-library internals, so simulations are
/// reproducible byte-for-byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform index in [0, n). Requires n > 0.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform01() * static_cast<double>(n)); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    // Box-Muller; consumes two uniforms.
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Poisson sample by Knuth's product method; intended for small means
  /// (per-step arrival counts), where the loop is short.
  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform01();
    } while (p > limit);
    return k - 1;
  }

  /// Derive an independent deterministic stream.
  Rng fork(std::uint64_t salt) {
    std::uint64_t s = state_ ^ (0x632be59bd9b4e019ULL * (salt + 1));
    Rng child(s);
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
};

/// FNV-1a 64-bit hash; used to fingerprint scenario bytes in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Shortest stable decimal formatting used in all emitted CSV/JSON text, so
/// identical runs produce identical output bytes.
inline std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than two samples.
inline double stdev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::size_t n = xs.size();
  std::sort(xs.begin(), xs.end());
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace freeflow
