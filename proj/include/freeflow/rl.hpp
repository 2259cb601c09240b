#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freeflow/control.hpp"
#include "freeflow/core.hpp"
#include "freeflow/metrics.hpp"
#include "freeflow/network.hpp"
#include "freeflow/simulation.hpp"

namespace freeflow {

/// Derive a per-episode seed from a base seed; avalanches so that nearby
/// episode indices give unrelated simulator streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Dense network with hand-written backprop and adaptive-moment updates.
// ---------------------------------------------------------------------------

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Fully-connected net: linear layers with rectified hidden activations and a
/// linear output layer. Weights are row-major (out x in). The class carries
/// its own gradient accumulators and adaptive-moment state; the usage pattern
/// is zero_grads() -> forward()/backward() over a batch -> adam_step().
class Mlp {
 public:
  Mlp() = default;

  /// `sizes` = {input, hidden..., output}. Hidden layers use He-style normal
  /// initialization; the output layer starts at zero so an untrained policy
  /// is exactly indifferent (greedy selection then takes the lowest index).
  Mlp(const std::vector<int>& sizes, Rng& rng) : sizes_(sizes) {
    if (sizes.size() < 2) throw ConfigError("network needs at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      int in = sizes[l], out = sizes[l + 1];
      if (in <= 0 || out <= 0) throw ConfigError("network layer sizes must be positive");
      bool last = l + 2 == sizes.size();
      double scale = last ? 0.0 : std::sqrt(2.0 / static_cast<double>(in));
      std::vector<double> w(static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
      for (double& x : w) x = last ? 0.0 : scale * rng.normal();
      w_.push_back(std::move(w));
      b_.emplace_back(static_cast<std::size_t>(out), 0.0);
    }
    init_state();
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return w_.size(); }
  const std::vector<double>& weights(std::size_t l) const { return w_[l]; }
  const std::vector<double>& biases(std::size_t l) const { return b_[l]; }

  /// Post-activation values of every layer for one input; acts[0] is the
  /// input itself, acts.back() the linear output. Kept by the caller and
  /// handed back to backward().
  struct Trace {
    std::vector<std::vector<double>> acts;
  };

  std::vector<double> forward(const std::vector<double>& x, Trace* trace = nullptr) const {
    if (static_cast<int>(x.size()) != input_size()) {
      throw ConfigError("network input width " + std::to_string(input_size()) +
                        " does not match observation length " + std::to_string(x.size()));
    }
    std::vector<double> cur = x;
    if (trace) {
      trace->acts.clear();
      trace->acts.push_back(cur);
    }
    for (std::size_t l = 0; l < w_.size(); ++l) {
      int in = sizes_[l], out = sizes_[l + 1];
      std::vector<double> next(static_cast<std::size_t>(out));
      for (int o = 0; o < out; ++o) {
        double s = b_[l][static_cast<std::size_t>(o)];
        const double* row = &w_[l][static_cast<std::size_t>(o) * static_cast<std::size_t>(in)];
        for (int i = 0; i < in; ++i) s += row[i] * cur[static_cast<std::size_t>(i)];
        if (l + 1 < w_.size() && s < 0.0) s = 0.0;  // rectify hidden layers
        next[static_cast<std::size_t>(o)] = s;
      }
      cur = std::move(next);
      if (trace) trace->acts.push_back(cur);
    }
    return cur;
  }

  void zero_grads() {
    for (auto& g : gw_) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : gb_) std::fill(g.begin(), g.end(), 0.0);
  }

  /// Accumulate gradients for one sample given dLoss/dOutput and the trace
  /// recorded by the matching forward() call.
  void backward(const Trace& trace, const std::vector<double>& dout) {
    std::vector<double> delta = dout;
    for (std::size_t l = w_.size(); l-- > 0;) {
      int in = sizes_[l], out = sizes_[l + 1];
      const std::vector<double>& input = trace.acts[l];
      // Hidden activations are rectified: zero gradient where the unit was off.
      if (l + 1 < w_.size()) {
        const std::vector<double>& act = trace.acts[l + 1];
        for (int o = 0; o < out; ++o) {
          if (act[static_cast<std::size_t>(o)] <= 0.0) delta[static_cast<std::size_t>(o)] = 0.0;
        }
      }
      std::vector<double> dprev(static_cast<std::size_t>(in), 0.0);
      for (int o = 0; o < out; ++o) {
        double d = delta[static_cast<std::size_t>(o)];
        if (d == 0.0) continue;
        double* grow = &gw_[l][static_cast<std::size_t>(o) * static_cast<std::size_t>(in)];
        const double* row = &w_[l][static_cast<std::size_t>(o) * static_cast<std::size_t>(in)];
        for (int i = 0; i < in; ++i) {
          grow[i] += d * input[static_cast<std::size_t>(i)];
          dprev[static_cast<std::size_t>(i)] += d * row[i];
        }
        gb_[l][static_cast<std::size_t>(o)] += d;
      }
      delta = std::move(dprev);
    }
  }

  /// One adaptive-moment step on the accumulated gradients, scaled by
  /// 1/batch so the step optimizes the batch-mean loss.
  void adam_step(const AdamParams& p, int batch) {
    ++t_;
    double c1 = 1.0 - std::pow(p.beta1, t_);
    double c2 = 1.0 - std::pow(p.beta2, t_);
    double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t l = 0; l < w_.size(); ++l) {
      update(w_[l], gw_[l], mw_[l], vw_[l], p, c1, c2, inv);
      update(b_[l], gb_[l], mb_[l], vb_[l], p, c1, c2, inv);
    }
  }

  /// Direct weight access for serialization and hand-built test fixtures.
  void set_layer(std::size_t l, std::vector<double> w, std::vector<double> b) {
    std::size_t need_w = static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
    if (w.size() != need_w || b.size() != static_cast<std::size_t>(sizes_[l + 1])) {
      throw ConfigError("layer " + std::to_string(l) + " expects " + std::to_string(need_w) +
                        " weights and " + std::to_string(sizes_[l + 1]) + " biases");
    }
    w_[l] = std::move(w);
    b_[l] = std::move(b);
  }

  /// Flat parameter views used by the finite-difference gradient check.
  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) n += w_[l].size() + b_[l].size();
    return n;
  }
  double get_param(std::size_t k) const {
    const double* p = locate(const_cast<Mlp*>(this), k);
    return *p;
  }
  void set_param(std::size_t k, double v) { *locate(this, k) = v; }
  double get_grad(std::size_t k) const {
    std::size_t off = k;
    for (std::size_t l = 0; l < w_.size(); ++l) {
      if (off < gw_[l].size()) return gw_[l][off];
      off -= gw_[l].size();
      if (off < gb_[l].size()) return gb_[l][off];
      off -= gb_[l].size();
    }
    throw ConfigError("parameter index out of range");
  }

 private:
  void init_state() {
    for (std::size_t l = 0; l < w_.size(); ++l) {
      gw_.emplace_back(w_[l].size(), 0.0);
      gb_.emplace_back(b_[l].size(), 0.0);
      mw_.emplace_back(w_[l].size(), 0.0);
      vw_.emplace_back(w_[l].size(), 0.0);
      mb_.emplace_back(b_[l].size(), 0.0);
      vb_.emplace_back(b_[l].size(), 0.0);
    }
  }

  static double* locate(Mlp* self, std::size_t k) {
    for (std::size_t l = 0; l < self->w_.size(); ++l) {
      if (k < self->w_[l].size()) return &self->w_[l][k];
      k -= self->w_[l].size();
      if (k < self->b_[l].size()) return &self->b_[l][k];
      k -= self->b_[l].size();
    }
    throw ConfigError("parameter index out of range");
  }

  static void update(std::vector<double>& theta, std::vector<double>& g, std::vector<double>& m,
                     std::vector<double>& v, const AdamParams& p, double c1, double c2,
                     double inv) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      double grad = g[k] * inv;
      m[k] = p.beta1 * m[k] + (1.0 - p.beta1) * grad;
      v[k] = p.beta2 * v[k] + (1.0 - p.beta2) * grad * grad;
      theta[k] -= p.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + p.eps);
    }
  }

  std::vector<int> sizes_;
  std::vector<std::vector<double>> w_, b_;
  std::vector<std::vector<double>> gw_, gb_;
  std::vector<std::vector<double>> mw_, vw_, mb_, vb_;
  long t_ = 0;

  friend class QNetwork;
};

// ---------------------------------------------------------------------------
// Observation, reward, factored Q head.
// ---------------------------------------------------------------------------

/// Per-segment feature order within the observation vector.
inline constexpr int kFeaturesPerSegment = 5;

/// Fixed affine input standardization: occupancy, speed (km/h), mean gap (m),
/// inflow, outflow. Plain constants rather than running statistics, so a
/// policy transfers across traffic patterns unchanged.
inline constexpr std::array<double, 5> kFeatureScales = {1.0, 1.0 / 60.0, 1.0 / 1000.0, 1.0, 1.0};

/// Concatenated per-segment state [rho, v, gap, lambda, mu] x N, unscaled.
inline std::vector<double> observation_from(const IntervalMeasurements& m) {
  std::vector<double> obs;
  obs.reserve(m.segments.size() * kFeaturesPerSegment);
  for (const SegmentMeasurement& s : m.segments) {
    obs.push_back(s.occupancy);
    obs.push_back(s.mean_speed_kmh);
    obs.push_back(s.mean_gap_m);
    obs.push_back(s.inflow_vps);
    obs.push_back(s.outflow_vps);
  }
  return obs;
}

struct RewardParams {
  double rho_star = 0.3;
  double alpha_d = 1000.0;  // congestion penalty; must exceed beta_v * max action
  double beta_v = 1.0;      // speed reward scale
  double gamma = 0.9;
};

/// Physics-informed per-segment reward on a post-step observation: a flat
/// penalty once occupancy crosses rho_star plus a speed term. With
/// alpha_d > beta_v * max speed the congested regime is strictly negative.
inline std::vector<double> reward_per_segment(const std::vector<double>& obs,
                                              const RewardParams& p) {
  std::vector<double> r(obs.size() / kFeaturesPerSegment);
  for (std::size_t i = 0; i < r.size(); ++i) {
    double rho = obs[i * kFeaturesPerSegment];
    double v = obs[i * kFeaturesPerSegment + 1];
    r[i] = (rho > p.rho_star ? -p.alpha_d : 0.0) + p.beta_v * v;
  }
  return r;
}

/// Factored action-value head over super-segments: one shared trunk maps the
/// scaled observation to N rows of |actions| values; each segment acts on its
/// own row. A joint head over |actions|^N would be intractable.
class QNetwork {
 public:
  QNetwork() = default;

  QNetwork(int n_segments, std::vector<double> actions_kmh, const std::vector<int>& hidden,
           Rng& rng)
      : n_segments_(n_segments), actions_kmh_(std::move(actions_kmh)) {
    if (n_segments <= 0) throw ConfigError("Q-network needs at least one super-segment");
    if (actions_kmh_.size() < 2) throw ConfigError("action set needs at least two speeds");
    std::vector<int> sizes;
    sizes.push_back(n_segments * kFeaturesPerSegment);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(n_segments * static_cast<int>(actions_kmh_.size()));
    net_ = Mlp(sizes, rng);
  }

  int n_segments() const { return n_segments_; }
  int n_actions() const { return static_cast<int>(actions_kmh_.size()); }
  const std::vector<double>& actions_kmh() const { return actions_kmh_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  /// Applies the fixed feature scales, then the dense net. Returns the flat
  /// N x |actions| table (row i = segment i).
  std::vector<double> forward(const std::vector<double>& obs, Mlp::Trace* trace = nullptr) const {
    return net_.forward(scaled(obs), trace);
  }

  std::vector<double> scaled(const std::vector<double>& obs) const {
    if (static_cast<int>(obs.size()) != n_segments_ * kFeaturesPerSegment) {
      throw ConfigError("observation length " + std::to_string(obs.size()) +
                        " does not match network input width " +
                        std::to_string(n_segments_ * kFeaturesPerSegment));
    }
    std::vector<double> x(obs.size());
    for (std::size_t k = 0; k < obs.size(); ++k) {
      x[k] = obs[k] * kFeatureScales[k % kFeaturesPerSegment];
    }
    return x;
  }

 private:
  int n_segments_ = 0;
  std::vector<double> actions_kmh_;
  Mlp net_;
};

/// Greedy row argmax with ties resolved to the lowest action index.
inline int argmax_row(const std::vector<double>& q, int row, int n_actions) {
  int best = 0;
  double best_v = q[static_cast<std::size_t>(row) * n_actions];
  for (int a = 1; a < n_actions; ++a) {
    double v = q[static_cast<std::size_t>(row) * n_actions + a];
    if (v > best_v) {
      best_v = v;
      best = a;
    }
  }
  return best;
}

/// Independent epsilon-greedy per segment: explore with probability eps
/// (uniform over the action set), otherwise greedy with lowest-index ties.
inline std::vector<int> select_actions(const std::vector<double>& q, int n_segments,
                                       int n_actions, double eps, Rng& rng) {
  std::vector<int> a(static_cast<std::size_t>(n_segments));
  for (int i = 0; i < n_segments; ++i) {
    if (rng.uniform01() < eps) {
      a[static_cast<std::size_t>(i)] = static_cast<int>(rng.index(static_cast<std::size_t>(n_actions)));
    } else {
      a[static_cast<std::size_t>(i)] = argmax_row(q, i, n_actions);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Replay buffer and TD update.
// ---------------------------------------------------------------------------

struct Transition {
  std::vector<double> obs;
  std::vector<int> actions;      // action indices, one per segment
  std::vector<double> rewards;   // one per segment
  std::vector<double> next_obs;
  bool terminal = false;
};

/// Fixed-capacity ring with strictly FIFO eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : cap_(capacity) {}

  void push(Transition t) {
    if (data_.size() < cap_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % cap_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return cap_; }
  /// k-th oldest transition (FIFO order).
  const Transition& at(std::size_t k) const { return data_[(head_ + k) % data_.size()]; }
  /// Uniform sample (with replacement).
  const Transition& sample(Rng& rng) const { return data_[rng.index(data_.size())]; }

 private:
  std::size_t cap_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

/// Squared TD error of one transition under current and target nets, summed
/// over segments. Terminal transitions drop the bootstrap term.
inline double td_loss(const QNetwork& qnet, const QNetwork& target, const Transition& t,
                      double gamma) {
  std::vector<double> q = qnet.forward(t.obs);
  std::vector<double> qt;
  if (!t.terminal) qt = target.forward(t.next_obs);
  int na = qnet.n_actions();
  double loss = 0.0;
  for (int i = 0; i < qnet.n_segments(); ++i) {
    double boot = 0.0;
    if (!t.terminal) boot = gamma * qt[static_cast<std::size_t>(i) * na + argmax_row(qt, i, na)];
    double err = t.rewards[static_cast<std::size_t>(i)] + boot -
                 q[static_cast<std::size_t>(i) * na + t.actions[static_cast<std::size_t>(i)]];
    loss += err * err;
  }
  return loss;
}

/// Zero the current net's gradient accumulators, then accumulate the TD-loss
/// gradient over the batch. Returns the summed (not yet batch-averaged) loss.
/// Gradients flow only through the current net's chosen-action outputs; the
/// target net is a frozen snapshot.
inline double td_accumulate(QNetwork& qnet, const QNetwork& target,
                            const std::vector<const Transition*>& batch, double gamma) {
  Mlp& net = qnet.net();
  net.zero_grads();
  int na = qnet.n_actions();
  double total = 0.0;
  Mlp::Trace trace;
  for (const Transition* t : batch) {
    std::vector<double> q = qnet.forward(t->obs, &trace);
    std::vector<double> qt;
    if (!t->terminal) qt = target.forward(t->next_obs);
    std::vector<double> dout(q.size(), 0.0);
    for (int i = 0; i < qnet.n_segments(); ++i) {
      double boot = 0.0;
      if (!t->terminal) boot = gamma * qt[static_cast<std::size_t>(i) * na + argmax_row(qt, i, na)];
      std::size_t k = static_cast<std::size_t>(i) * na +
                      static_cast<std::size_t>(t->actions[static_cast<std::size_t>(i)]);
      double err = q[k] - (t->rewards[static_cast<std::size_t>(i)] + boot);
      total += err * err;
      dout[k] = 2.0 * err;
    }
    net.backward(trace, dout);
  }
  return total;
}

/// One gradient step on the batch-mean TD loss; returns that loss.
inline double td_update(QNetwork& qnet, const QNetwork& target,
                        const std::vector<const Transition*>& batch, double gamma,
                        const AdamParams& adam) {
  if (batch.empty()) throw ConfigError("TD update needs a nonempty batch");
  double total = td_accumulate(qnet, target, batch, gamma);
  qnet.net().adam_step(adam, static_cast<int>(batch.size()));
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Policy serialization.
// ---------------------------------------------------------------------------

inline constexpr int kPolicyVersion = 1;

/// Write the trained head as structured text: header (segment count, action
/// set, feature scales) plus per-layer weights. Doubles round-trip exactly.
inline void save_policy(const QNetwork& qnet, const std::string& path) {
  nlohmann::json j;
  j["version"] = kPolicyVersion;
  j["n_segments"] = qnet.n_segments();
  j["actions_kmh"] = qnet.actions_kmh();
  j["feature_scales"] = kFeatureScales;
  nlohmann::json layers = nlohmann::json::array();
  const Mlp& net = qnet.net();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    nlohmann::json layer;
    layer["in"] = net.sizes()[l];
    layer["out"] = net.sizes()[l + 1];
    layer["activation"] = (l + 1 < net.layer_count()) ? "relu" : "linear";
    layer["w"] = net.weights(l);
    layer["b"] = net.biases(l);
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  write_text_file(path, j.dump() + "\n");
}

inline QNetwork load_policy(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("policy file " + path + ": " + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != kPolicyVersion) {
    throw ConfigError("policy file " + path + ": unsupported version");
  }
  int n = j.at("n_segments").get<int>();
  std::vector<double> actions = j.at("actions_kmh").get<std::vector<double>>();
  std::vector<double> scales = j.at("feature_scales").get<std::vector<double>>();
  if (scales.size() != kFeatureScales.size() ||
      !std::equal(scales.begin(), scales.end(), kFeatureScales.begin())) {
    throw ConfigError("policy file " + path + ": feature scales do not match this build");
  }
  const nlohmann::json& layers = j.at("layers");
  if (layers.empty()) throw ConfigError("policy file " + path + ": no layers");
  std::vector<int> hidden;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) hidden.push_back(layers[l].at("out").get<int>());
  Rng dummy(0);
  QNetwork qnet(n, actions, hidden, dummy);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    int in = layers[l].at("in").get<int>();
    int out = layers[l].at("out").get<int>();
    if (in != qnet.net().sizes()[l] || out != qnet.net().sizes()[l + 1]) {
      throw ConfigError("policy file " + path + ": layer " + std::to_string(l) + " is " +
                        std::to_string(in) + "x" + std::to_string(out) + ", expected " +
                        std::to_string(qnet.net().sizes()[l]) + "x" +
                        std::to_string(qnet.net().sizes()[l + 1]));
    }
    qnet.net().set_layer(l, layers[l].at("w").get<std::vector<double>>(),
                         layers[l].at("b").get<std::vector<double>>());
  }
  return qnet;
}

// ---------------------------------------------------------------------------
// Greedy policy controller.
// ---------------------------------------------------------------------------

/// Drives per-segment speed commands from a trained head, always greedy.
/// Signals stay inactive; merging runs on gap acceptance.
class PolicyController : public Controller {
 public:
  explicit PolicyController(QNetwork qnet) : qnet_(std::move(qnet)) {}

  std::string name() const override { return "dqn"; }

  void reset(const RoadNetwork& net, std::uint64_t) override {
    if (net.n_segments() != qnet_.n_segments()) {
      throw ConfigError("policy trained for " + std::to_string(qnet_.n_segments()) +
                        " super-segments, scenario has " + std::to_string(net.n_segments()));
    }
  }

  void plan_interval(double, const IntervalMeasurements& m,
                     std::vector<double>& cmd_kmh) override {
    std::vector<double> q = qnet_.forward(observation_from(m));
    for (int i = 0; i < qnet_.n_segments(); ++i) {
      cmd_kmh[static_cast<std::size_t>(i)] =
          qnet_.actions_kmh()[static_cast<std::size_t>(argmax_row(q, i, qnet_.n_actions()))];
    }
  }

  const QNetwork& qnet() const { return qnet_; }

 private:
  QNetwork qnet_;
};

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int episodes = 60;
  std::vector<double> actions_kmh = {30.0, 45.0, 60.0};
  std::vector<int> hidden = {128, 128};
  RewardParams reward;
  AdamParams adam;
  int batch_size = 64;
  std::size_t buffer_capacity = 100000;
  double eps_start = 0.9;
  double eps_min = 0.1;
  double eps_decay = 0.035;  // per episode
};

struct TrainResult {
  QNetwork qnet;
  std::vector<double> losses;          // one entry per TD update
  std::vector<double> episode_return;  // summed reward per episode
};

/// DQN over super-segments: each control interval observes, picks per-segment
/// speeds epsilon-greedily, advances the simulator, scores the post-step
/// observation, stores the transition, and takes one TD step on a sampled
/// batch. The bootstrap snapshot refreshes at each episode start; episode k
/// runs on seed mix_seed(seed, k).
inline TrainResult train_dqn(const RoadNetwork& net, const TrainConfig& cfg, std::uint64_t seed,
                             std::ostream* log = nullptr) {
  if (cfg.actions_kmh.empty()) throw ConfigError("training needs a nonempty action set");
  double top = *std::max_element(cfg.actions_kmh.begin(), cfg.actions_kmh.end());
  if (!(cfg.reward.alpha_d > cfg.reward.beta_v * top)) {
    throw ConfigError("congestion penalty " + fmt_double(cfg.reward.alpha_d) +
                      " must exceed the best speed reward " +
                      fmt_double(cfg.reward.beta_v * top) +
                      " or congested segments could score positive");
  }
  if (cfg.reward.gamma < 0.0 || cfg.reward.gamma > 1.0)
    throw ConfigError("discount factor must be within [0, 1]");
  if (cfg.batch_size <= 0) throw ConfigError("batch size must be positive");
  Rng rng(mix_seed(seed, 0x7261696eULL));
  TrainResult out{QNetwork(net.n_segments(), cfg.actions_kmh, cfg.hidden, rng), {}, {}};
  ReplayBuffer buffer(cfg.buffer_capacity);

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    QNetwork target = out.qnet;  // previous-iteration snapshot for bootstraps
    double eps = std::max(cfg.eps_min, cfg.eps_start - cfg.eps_decay * ep);
    Simulation sim(net, mix_seed(seed, static_cast<std::uint64_t>(ep)));
    std::vector<double> obs = observation_from(sim.measure_initial());
    std::vector<double> cmd(static_cast<std::size_t>(net.n_segments()), 0.0);
    double ep_return = 0.0;

    while (!sim.finished()) {
      std::vector<double> q = out.qnet.forward(obs);
      std::vector<int> actions = select_actions(q, out.qnet.n_segments(), out.qnet.n_actions(),
                                                eps, rng);
      for (int i = 0; i < net.n_segments(); ++i) {
        cmd[static_cast<std::size_t>(i)] =
            cfg.actions_kmh[static_cast<std::size_t>(actions[static_cast<std::size_t>(i)])];
      }
      IntervalMeasurements m = sim.advance_interval(cmd);
      std::vector<double> next_obs = observation_from(m);
      std::vector<double> r = reward_per_segment(next_obs, cfg.reward);
      for (double ri : r) ep_return += ri;
      // Episode ends are duration truncations of a continuing process, not
      // absorbing states, so the bootstrap is kept: marking them terminal
      // would teach the net two different values for indistinguishable
      // observations (time is not a feature) and put an irreducible floor
      // of about (gamma * Q / episode_length)^2 under the TD loss.
      buffer.push(Transition{obs, actions, r, next_obs, false});

      std::vector<const Transition*> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int k = 0; k < cfg.batch_size; ++k) batch.push_back(&buffer.sample(rng));
      double loss = td_update(out.qnet, target, batch, cfg.reward.gamma, cfg.adam);
      if (!std::isfinite(loss)) {
        throw RunError("TD loss diverged (non-finite) at episode " + std::to_string(ep) +
                       ", t=" + fmt_double(sim.time_s()) + " s");
      }
      out.losses.push_back(loss);
      obs = std::move(next_obs);
    }
    out.episode_return.push_back(ep_return);
    if (log) {
      (*log) << "episode " << ep << " eps " << fmt_double(eps) << " return "
             << fmt_double(ep_return) << " loss "
             << fmt_double(out.losses.empty() ? 0.0 : out.losses.back()) << "\n";
    }
  }
  return out;
}

/// Greedy rollouts of a trained head over the given seeds; one report per
/// seed, in input order.
inline std::vector<SeedReport> evaluate_policy(const RoadNetwork& net, const QNetwork& qnet,
                                               const std::vector<std::uint64_t>& seeds) {
  std::vector<SeedReport> reports;
  reports.reserve(seeds.size());
  for (std::uint64_t s : seeds) {
    PolicyController ctl(qnet);
    Simulation sim(net, s);
    sim.set_controller(&ctl);
    sim.run();
    reports.push_back(SeedReport{s, sim.finalize()});
  }
  return reports;
}

}  // namespace freeflow
