#pragma once

// Desk-scale desalination case study: a synthetic two-sensor plant (brine
// temperature TB0 and distillate flow Wd driven by the steam flow Ws), a
// cascaded PI controller, seven injectable attacks, ADC sampling, and the
// sliding-window detector running as a second scan-cycle task.
//
// Surrogate dynamics, per 100 ms step:
//   TB0' = (T_base + d + g * Ws_eff - TB0) / tau_tb0
//   Wd'  = (Wd_nom + k * (TB0 - TB0_nom) - Wd) / tau_wd
// where d is an Ornstein-Uhlenbeck disturbance on the brine inlet
// temperature. The nominal operating point is TB0 = 90.5, Wd = 19.18 at
// Ws = 50.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "icsml/error.hpp"
#include "icsml/layers.hpp"
#include "icsml/math.hpp"
#include "icsml/model_io.hpp"
#include "icsml/runtime.hpp"

namespace icsml::msf {

inline constexpr double kCycleSeconds = 0.1;
inline constexpr std::size_t kFeatures = 2;
inline constexpr std::size_t kWindowSamples = 200;  // 20 s at 10 samples/s
inline constexpr std::size_t kWindowSize = kFeatures * kWindowSamples;

struct PlantParams {
  double tb0_base = 70.0;
  double steam_gain = 0.41;
  double tau_tb0_s = 8.0;
  double tb0_nominal = 90.5;
  double wd_nominal = 19.18;
  double wd_gain = 0.35;
  double tau_wd_s = 4.0;
  double disturbance_tau_s = 30.0;
  double disturbance_stddev = 0.3;  // stationary stddev of d
  double tb0_noise = 0.02;
  double wd_noise = 0.003;
  double ws_min = 0.0;
  double ws_max = 80.0;

  double ws_nominal() const { return (tb0_nominal - tb0_base) / steam_gain; }
};

enum class AttackKind : int {
  ActuatorScaling = 1,   // Ws_eff = Ws * m
  TempSensorDrift = 2,   // reported TB0 += m * cycles since start
  SteamOscillation = 3,  // Ws_eff = Ws + m * sin(2 pi t / 4 s)
  FlowSensorOffset = 4,  // reported Wd += m
  HeatTransferLoss = 5,  // steam gain *= m
  NoiseInjection = 6,    // sensor noise stddev *= m
  SteamLoss = 7,         // Ws_eff = max(0, Ws - m)
};

inline constexpr std::array<AttackKind, 7> kAllAttacks = {
    AttackKind::ActuatorScaling,  AttackKind::TempSensorDrift, AttackKind::SteamOscillation,
    AttackKind::FlowSensorOffset, AttackKind::HeatTransferLoss, AttackKind::NoiseInjection,
    AttackKind::SteamLoss};

inline constexpr std::string_view attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::ActuatorScaling: return "actuator_scaling";
    case AttackKind::TempSensorDrift: return "tb0_sensor_drift";
    case AttackKind::SteamOscillation: return "steam_oscillation";
    case AttackKind::FlowSensorOffset: return "wd_sensor_offset";
    case AttackKind::HeatTransferLoss: return "heat_transfer_loss";
    case AttackKind::NoiseInjection: return "noise_injection";
    case AttackKind::SteamLoss: return "steam_loss";
  }
  return "?";
}

inline std::optional<AttackKind> parse_attack(std::string_view s) {
  for (auto k : kAllAttacks) {
    if (attack_name(k) == s || std::to_string(static_cast<int>(k)) == s) return k;
  }
  return std::nullopt;
}

inline constexpr double default_magnitude(AttackKind k) {
  switch (k) {
    case AttackKind::ActuatorScaling: return 0.5;
    case AttackKind::TempSensorDrift: return 0.02;
    case AttackKind::SteamOscillation: return 10.0;
    case AttackKind::FlowSensorOffset: return 0.3;
    case AttackKind::HeatTransferLoss: return 0.6;
    case AttackKind::NoiseInjection: return 10.0;
    case AttackKind::SteamLoss: return 35.0;
  }
  return 0.0;
}

struct AttackSpec {
  AttackKind kind = AttackKind::ActuatorScaling;
  std::uint64_t start_cycle = 436;
  double magnitude = default_magnitude(AttackKind::ActuatorScaling);

  static AttackSpec make(AttackKind kind, std::uint64_t start) { return {kind, start, default_magnitude(kind)}; }
};

struct Measurement {
  double tb0 = 0.0;
  double wd = 0.0;
};

class Plant {
 public:
  Plant(PlantParams params, std::uint64_t seed, std::optional<AttackSpec> attack = std::nullopt)
      : p_(params), attack_(attack), rng_(seed) {
    tb0_ = p_.tb0_nominal;
    wd_ = p_.wd_nominal;
  }

  std::uint64_t cycle() const { return cycle_; }
  double tb0() const { return tb0_; }
  double wd() const { return wd_; }
  const std::optional<AttackSpec>& attack() const { return attack_; }
  bool attack_active() const { return attack_ && cycle_ >= attack_->start_cycle; }

  // Sensor reading of the current state. Always draws the same random
  // numbers so that attacked and clean runs share one noise sequence.
  Measurement sample() {
    const double n_tb0 = normal_(rng_), n_wd = normal_(rng_);
    double gain = 1.0;
    Measurement m{tb0_, wd_};
    if (attack_active()) {
      const double since = static_cast<double>(cycle_ - attack_->start_cycle);
      switch (attack_->kind) {
        case AttackKind::TempSensorDrift: m.tb0 += attack_->magnitude * since; break;
        case AttackKind::FlowSensorOffset: m.wd += attack_->magnitude; break;
        case AttackKind::NoiseInjection: gain = attack_->magnitude; break;
        default: break;
      }
    }
    m.tb0 += gain * p_.tb0_noise * n_tb0;
    m.wd += gain * p_.wd_noise * n_wd;
    return m;
  }

  // Advances the dynamics one cycle under the commanded steam flow.
  void advance(double ws) {
    double ws_eff = std::clamp(ws, p_.ws_min, p_.ws_max);
    double gain = p_.steam_gain;
    if (attack_active()) {
      const double since = static_cast<double>(cycle_ - attack_->start_cycle);
      switch (attack_->kind) {
        case AttackKind::ActuatorScaling: ws_eff *= attack_->magnitude; break;
        case AttackKind::SteamOscillation:
          ws_eff += attack_->magnitude * std::sin(2.0 * std::numbers::pi * since * kCycleSeconds / 4.0);
          break;
        case AttackKind::HeatTransferLoss: gain *= attack_->magnitude; break;
        case AttackKind::SteamLoss: ws_eff = std::max(0.0, ws_eff - attack_->magnitude); break;
        default: break;
      }
    }
    const double dt = kCycleSeconds;
    const double theta = dt / p_.disturbance_tau_s;
    const double kick = p_.disturbance_stddev * std::sqrt(2.0 * theta) * normal_(rng_);
    disturbance_ += -theta * disturbance_ + kick;
    const double tb0_target = p_.tb0_base + disturbance_ + gain * ws_eff;
    const double wd_target = p_.wd_nominal + p_.wd_gain * (tb0_ - p_.tb0_nominal);
    tb0_ += dt * (tb0_target - tb0_) / p_.tau_tb0_s;
    wd_ += dt * (wd_target - wd_) / p_.tau_wd_s;
    ++cycle_;
  }

  Measurement step(double ws) {
    advance(ws);
    return sample();
  }

 private:
  PlantParams p_;
  std::optional<AttackSpec> attack_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double tb0_ = 0.0;
  double wd_ = 0.0;
  double disturbance_ = 0.0;
  std::uint64_t cycle_ = 0;
};

// ---------------------------------------------------------------------------
// ADC

struct AdcRange {
  double lo = 0.0;
  double hi = 1.0;
};

inline constexpr AdcRange kTb0Range{80.0, 100.0};
inline constexpr AdcRange kWdRange{17.0, 21.0};
inline constexpr int kAdcBits = 12;

// Clamps to [lo, hi] and rounds to the nearest multiple of (hi - lo) / 2^bits
// above lo. Both range ends are representable.
inline float adc_sample(double value, AdcRange range, int bits = kAdcBits) {
  if (bits < 8 || bits > 16 || !(range.lo < range.hi)) {
    throw Error(ErrorCode::ShapeMismatch, "ADC needs 8..16 bits and lo < hi");
  }
  const double levels = std::ldexp(1.0, bits);
  const double step = (range.hi - range.lo) / levels;
  const double v = std::clamp(value, range.lo, range.hi);
  const double code = std::round((v - range.lo) / step);
  return static_cast<float>(range.lo + code * step);
}

inline std::array<float, 2> adc_measurement(const Measurement& m, int bits = kAdcBits) {
  return {adc_sample(m.tb0, kTb0Range, bits), adc_sample(m.wd, kWdRange, bits)};
}

// Detector features: each reading mapped from its ADC range onto [-1, 1].
// Keeping features near zero keeps the first layer's float32 sums small.
inline float scale_to_range(float value, AdcRange range) {
  const double mid = 0.5 * (range.lo + range.hi), half = 0.5 * (range.hi - range.lo);
  return static_cast<float>((static_cast<double>(value) - mid) / half);
}

inline std::array<float, 2> detector_features(float tb0, float wd) {
  return {scale_to_range(tb0, kTb0Range), scale_to_range(wd, kWdRange)};
}

// ---------------------------------------------------------------------------
// Control

struct ControllerParams {
  double wd_setpoint = 19.18;
  double tb0_nominal = 90.5;
  double ws_nominal = 50.0;
  double outer_kp = 1.0;  // TB0 setpoint per unit of Wd error
  double outer_ki = 0.2;  // per second
  double inner_kp = 4.0;  // Ws per degree of TB0 error
  double inner_ki = 0.6;  // per second
  double tb0_sp_min = 85.0;
  double tb0_sp_max = 96.0;
  double ws_min = 0.0;
  double ws_max = 80.0;
  double dt_s = kCycleSeconds;
};

class PiLoop {
 public:
  PiLoop(double kp, double ki, double bias, double lo, double hi) : kp_(kp), ki_(ki), bias_(bias), lo_(lo), hi_(hi) {}

  // Conditional integration: the integrator holds while the output is
  // saturated in the direction of the error.
  double update(double error, double dt) {
    const double candidate = integral_ + ki_ * error * dt;
    const double unclamped = bias_ + kp_ * error + candidate;
    const bool pushes_out = (unclamped > hi_ && error > 0.0) || (unclamped < lo_ && error < 0.0);
    if (!pushes_out) integral_ = candidate;
    return std::clamp(bias_ + kp_ * error + integral_, lo_, hi_);
  }

  double integral() const { return integral_; }

 private:
  double kp_, ki_, bias_, lo_, hi_;
  double integral_ = 0.0;
};

// Outer loop on Wd sets the TB0 setpoint; inner loop on TB0 sets Ws.
class CascadeController {
 public:
  explicit CascadeController(ControllerParams p = {})
      : p_(p),
        outer_(p.outer_kp, p.outer_ki, p.tb0_nominal, p.tb0_sp_min, p.tb0_sp_max),
        inner_(p.inner_kp, p.inner_ki, p.ws_nominal, p.ws_min, p.ws_max) {}

  double update(double tb0, double wd) {
    tb0_setpoint_ = outer_.update(p_.wd_setpoint - wd, p_.dt_s);
    ws_ = inner_.update(tb0_setpoint_ - tb0, p_.dt_s);
    return ws_;
  }

  double ws() const { return ws_; }
  double tb0_setpoint() const { return tb0_setpoint_; }

 private:
  ControllerParams p_;
  PiLoop outer_;
  PiLoop inner_;
  double tb0_setpoint_ = 0.0;
  double ws_ = 0.0;
};

// ---------------------------------------------------------------------------
// Sliding window

struct SlidingWindow {
  std::array<float, kWindowSize> contents{};  // (tb0, wd) feature pairs, oldest first
  std::size_t fill = 0;

  bool full() const { return fill == kWindowSize; }

  void push(float tb0, float wd) {
    if (full()) {
      std::copy(contents.begin() + kFeatures, contents.end(), contents.begin());
      fill -= kFeatures;
    }
    contents[fill] = tb0;
    contents[fill + 1] = wd;
    fill += kFeatures;
  }

  std::span<const float> values() const { return std::span<const float>(contents.data(), fill); }
};

inline SlidingWindow window_push(SlidingWindow w, float tb0, float wd) {
  w.push(tb0, wd);
  return w;
}

enum class DetectorClass : std::uint8_t { Normal = 0, Attack = 1 };

struct Detection {
  DetectorClass cls = DetectorClass::Normal;
  std::array<float, 2> probs{};  // softmax of the two outputs
};

inline Detection detect(SequentialModel& model, const SlidingWindow& window) {
  if (!window.full()) {
    throw Error(ErrorCode::WindowNotFull, "window holds " + std::to_string(window.fill) + " of " +
                                              std::to_string(kWindowSize) + " values");
  }
  if (model.output_size() != 2) throw Error(ErrorCode::ShapeMismatch, "detector must have two outputs");
  model.set_input(window.contents);
  model.evaluate();
  const auto out = model.output();
  Detection d;
  d.cls = out[1] > out[0] ? DetectorClass::Attack : DetectorClass::Normal;
  softmax(out, d.probs);
  return d;
}

// ---------------------------------------------------------------------------
// Scan-cycle tasks. Input channels: [tb0, wd]. Output channels:
// [ws, detector class, attack probability].

inline constexpr std::size_t kInputChannels = 2;
inline constexpr std::size_t kOutputChannels = 3;

inline Task make_control_task(CascadeController& controller, double cost_us = 5.0) {
  return Task{"control", [&controller, cost_us](TaskContext& ctx) {
                const auto in = ctx.inputs();
                ctx.outputs()[0] = static_cast<float>(controller.update(in[0], in[1]));
                ctx.charge(cost_us);
              }};
}

struct DetectorState {
  SequentialModel* model = nullptr;
  SlidingWindow window;
  double cost_us = 0.0;  // modeled cost of one inference
  std::optional<std::uint64_t> first_attack_cycle;
  std::uint64_t inferences = 0;
  std::uint64_t attack_classifications = 0;
  std::vector<std::int8_t>* classes = nullptr;  // optional per-cycle log, -1 until the window fills
};

inline double inference_cost_us(const SequentialModel& model, const CostModel& cost = {}) {
  std::int64_t ns = 0;
  for (const auto& layer : model.layers()) ns += cost.layer_cost_ns(layer);
  return static_cast<double>(ns) / 1000.0;
}

inline Task make_detector_task(DetectorState& state) {
  return Task{"detector", [&state](TaskContext& ctx) {
                const auto in = ctx.inputs();
                const auto f = detector_features(in[0], in[1]);
                state.window.push(f[0], f[1]);
                if (!state.window.full()) {
                  if (state.classes) state.classes->push_back(-1);
                  return;
                }
                const Detection d = detect(*state.model, state.window);
                ++state.inferences;
                ctx.charge(state.cost_us);
                ctx.outputs()[1] = static_cast<float>(d.cls);
                ctx.outputs()[2] = d.probs[1];
                if (d.cls == DetectorClass::Attack) {
                  ++state.attack_classifications;
                  if (!state.first_attack_cycle) state.first_attack_cycle = ctx.cycle_index();
                }
                if (state.classes) state.classes->push_back(static_cast<std::int8_t>(d.cls));
              }};
}

// ---------------------------------------------------------------------------
// Closed-loop simulation

struct SimulationConfig {
  std::uint64_t seed = 1;
  std::uint64_t cycles = 1000;
  std::optional<AttackSpec> attack;
  PlantParams plant;
  ControllerParams controller;
  int adc_bits = kAdcBits;
};

struct SimulationTrace {
  std::vector<float> sensors;  // frame-major (tb0, wd) as read by the controller
  std::vector<float> ws;       // control output per cycle
  std::vector<std::uint8_t> labels;
  std::vector<std::int8_t> classes;  // empty without a detector
  std::optional<std::uint64_t> first_attack_cycle;
  std::uint64_t attack_classifications = 0;
  std::uint64_t overruns = 0;
};

// Runs the plant in closed loop with the controller inside the scan-cycle
// runtime; installs the detector as a second task when a model is given.
inline SimulationTrace simulate(const SimulationConfig& cfg, SequentialModel* detector = nullptr,
                                const CostModel& cost = {}) {
  Plant plant(cfg.plant, cfg.seed, cfg.attack);
  CascadeController controller(cfg.controller);
  ScanRuntime runtime({100'000.0, kInputChannels, kOutputChannels});

  SimulationTrace trace;
  trace.sensors.reserve(cfg.cycles * kFeatures);
  trace.ws.reserve(cfg.cycles);
  trace.labels.reserve(cfg.cycles);

  DetectorState det;
  std::vector<Task> tasks{make_control_task(controller)};
  if (detector) {
    det.model = detector;
    det.cost_us = inference_cost_us(*detector, cost);
    trace.classes.reserve(cfg.cycles);
    det.classes = &trace.classes;
    tasks.push_back(make_detector_task(det));
  }

  Measurement m = plant.sample();
  for (std::uint64_t k = 0; k < cfg.cycles; ++k) {
    const auto reading = adc_measurement(m, cfg.adc_bits);
    trace.labels.push_back(plant.attack_active() ? 1 : 0);
    trace.sensors.insert(trace.sensors.end(), reading.begin(), reading.end());
    double ws = 0.0;
    runtime.run_cycle([&](std::uint64_t, std::span<float> in) { std::copy(reading.begin(), reading.end(), in.begin()); },
                      tasks, [&](std::uint64_t, std::span<const float> out) { ws = out[0]; });
    trace.ws.push_back(static_cast<float>(ws));
    m = plant.step(ws);
  }
  trace.first_attack_cycle = det.first_attack_cycle;
  trace.attack_classifications = det.attack_classifications;
  trace.overruns = runtime.overruns();
  return trace;
}

// Open-loop replay of a recorded sensor trace through the detector task.
struct ReplayResult {
  std::vector<std::int8_t> classes;
  std::optional<std::uint64_t> first_attack_cycle;
  std::uint64_t attack_classifications = 0;
  std::uint64_t inferences = 0;
};

inline ReplayResult replay(SequentialModel& detector, std::span<const float> sensors) {
  if (sensors.size() % kFeatures != 0) throw Error(ErrorCode::ShapeMismatch, "trace is not whole (tb0, wd) frames");
  const std::size_t cycles = sensors.size() / kFeatures;
  ScanRuntime runtime({100'000.0, kInputChannels, kOutputChannels});
  ReplayResult result;
  result.classes.reserve(cycles);
  DetectorState det;
  det.model = &detector;
  det.cost_us = inference_cost_us(detector);
  det.classes = &result.classes;
  std::vector<Task> tasks{make_detector_task(det)};
  for (std::size_t k = 0; k < cycles; ++k) {
    runtime.run_cycle(
        [&](std::uint64_t, std::span<float> in) {
          in[0] = sensors[k * kFeatures];
          in[1] = sensors[k * kFeatures + 1];
        },
        tasks, nullptr);
  }
  result.first_attack_cycle = det.first_attack_cycle;
  result.attack_classifications = det.attack_classifications;
  result.inferences = det.inferences;
  return result;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetConfig {
  std::uint64_t seed = 2024;
  std::size_t attacked_episodes = 24;
  std::size_t normal_episodes = 4;
  std::uint64_t cycles_per_episode = 1000;
  std::uint64_t start_min = 300;
  std::uint64_t start_max = 600;
  double magnitude_jitter = 0.3;  // magnitudes drawn from default * [1 - j, 1 + j]
  std::vector<AttackKind> attacks{kAllAttacks.begin(), kAllAttacks.end()};
  std::array<double, 3> split{0.7225, 0.1275, 0.15};
};

struct Episode {
  std::uint64_t seed = 0;
  std::optional<AttackSpec> attack;
  SimulationTrace trace;
};

inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::vector<Episode> generate_dataset(const DatasetConfig& cfg) {
  if (cfg.attacks.empty() && cfg.attacked_episodes > 0) {
    throw Error(ErrorCode::DegenerateInput, "attacked episodes requested with no attack kinds");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::uint64_t> start(cfg.start_min, cfg.start_max);
  std::uniform_real_distribution<double> jitter(1.0 - cfg.magnitude_jitter, 1.0 + cfg.magnitude_jitter);
  std::vector<Episode> episodes;
  const std::size_t total = cfg.attacked_episodes + cfg.normal_episodes;
  for (std::size_t e = 0; e < total; ++e) {
    Episode ep;
    ep.seed = episode_seed(cfg.seed, e);
    if (e < cfg.attacked_episodes) {
      const AttackKind kind = cfg.attacks[e % cfg.attacks.size()];
      double magnitude = default_magnitude(kind) * jitter(rng);
      // Keep the scaling attacks on the harmful side of 1.
      if (kind == AttackKind::ActuatorScaling || kind == AttackKind::HeatTransferLoss) magnitude = std::min(magnitude, 0.8);
      ep.attack = AttackSpec{kind, start(rng), magnitude};
    }
    SimulationConfig sim;
    sim.seed = ep.seed;
    sim.cycles = cfg.cycles_per_episode;
    sim.attack = ep.attack;
    ep.trace = simulate(sim);
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

inline std::string episode_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%03zu", index);
  return buf;
}

// Writes <stem>.bin (2-channel trace), <stem>.labels and index.json.
inline void write_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg,
                          const std::vector<Episode>& episodes) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json index;
  index["format"] = "icsml-trace-v1";
  index["channels"] = {"tb0", "wd"};
  index["cycle_seconds"] = kCycleSeconds;
  index["window_samples"] = kWindowSamples;
  index["feature_ranges"] = {{"tb0", {kTb0Range.lo, kTb0Range.hi}}, {"wd", {kWdRange.lo, kWdRange.hi}}};
  index["seed"] = cfg.seed;
  index["split"] = {{"train", cfg.split[0]}, {"val", cfg.split[1]}, {"test", cfg.split[2]}};
  index["episodes"] = nlohmann::ordered_json::array();
  std::size_t attack_samples = 0, samples = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    const std::string stem = episode_stem(e);
    write_trace(dir / (stem + ".bin"), ep.trace.sensors);
    write_labels(dir / (stem + ".labels"), ep.trace.labels);
    nlohmann::ordered_json j;
    j["trace"] = stem + ".bin";
    j["labels"] = stem + ".labels";
    j["cycles"] = ep.trace.labels.size();
    j["seed"] = ep.seed;
    if (ep.attack) {
      j["attack"] = {{"kind", attack_name(ep.attack->kind)},
                     {"id", static_cast<int>(ep.attack->kind)},
                     {"start_cycle", ep.attack->start_cycle},
                     {"magnitude", ep.attack->magnitude}};
    } else {
      j["attack"] = nullptr;
    }
    index["episodes"].push_back(std::move(j));
    samples += ep.trace.labels.size();
    attack_samples += static_cast<std::size_t>(std::count(ep.trace.labels.begin(), ep.trace.labels.end(), 1));
  }
  index["samples"] = samples;
  index["attack_samples"] = attack_samples;
  std::ofstream os(dir / "index.json");
  if (!os) throw Error(ErrorCode::IOFailure, (dir / "index.json").string());
  os << index.dump(2) << "\n";
}

}  // namespace icsml::msf
