#pragma once

// Host benchmarks: layer stacking, layer width, quantization, pruning and
// multipart scheduling. Counter-derived numbers are exact; wall-clock numbers
// are only ever compared against each other (orderings, fit quality).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "icsml/error.hpp"
#include "icsml/layers.hpp"
#include "icsml/math.hpp"
#include "icsml/quantization.hpp"
#include "icsml/runtime.hpp"
#include "icsml/sparse.hpp"

namespace icsml::bench {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares y = slope * x + intercept.
inline LinearFit fit_linear(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 3) throw Error(ErrorCode::DegenerateInput, "need >= 3 (x, y) points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) throw Error(ErrorCode::DegenerateInput, "all x values are equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (fit.slope * xs[i] + fit.intercept);
    ss_res += r * r;
  }
  // Zero total variance: a perfect (flat) fit by convention.
  fit.r2 = syy == 0.0 ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return fit;
}

struct Timing {
  std::vector<double> samples_us;  // one per repeat, per-call time
  double mean_us = 0.0;
  double stddev_us = 0.0;
  double median_of_means_us = 0.0;
};

inline Timing summarize(std::vector<double> samples) {
  Timing t;
  t.samples_us = std::move(samples);
  const auto& s = t.samples_us;
  const double n = static_cast<double>(s.size());
  t.mean_us = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double v : s) var += (v - t.mean_us) * (v - t.mean_us);
  t.stddev_us = s.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  // Five groups of consecutive repeats.
  const std::size_t groups = std::min<std::size_t>(5, s.size());
  std::vector<double> means;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t b = g * s.size() / groups, e = (g + 1) * s.size() / groups;
    means.push_back(std::accumulate(s.begin() + b, s.begin() + e, 0.0) / static_cast<double>(e - b));
  }
  std::sort(means.begin(), means.end());
  t.median_of_means_us = means.size() % 2 ? means[means.size() / 2]
                                          : 0.5 * (means[means.size() / 2 - 1] + means[means.size() / 2]);
  return t;
}

struct TimingOptions {
  std::size_t repeats = 10;
  std::size_t warmup = 3;
  double min_batch_us = 2000.0;  // each repeat times enough calls to last this long
};

namespace detail {

inline double run_batch(const std::function<void()>& fn, std::size_t calls) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  for (std::size_t i = 0; i < calls; ++i) fn();
  return std::chrono::duration<double, std::micro>(clock::now() - start).count();
}

inline std::size_t calibrate_calls(const std::function<void()>& fn, double min_batch_us) {
  std::size_t calls = 1;
  for (double elapsed = run_batch(fn, 1); elapsed < min_batch_us && calls < (std::size_t{1} << 24);) {
    calls *= 2;
    elapsed = run_batch(fn, calls);
  }
  return calls;
}

}  // namespace detail

// Times a set of functions round-robin: repeat r of every function runs
// before repeat r + 1 of any, so slow phases of the host are shared by all
// configurations instead of landing on one. Each repeat is a batch of calls
// sized to min_batch_us and is reported per call; warm-up rounds are
// discarded.
class InterleavedTimer {
 public:
  explicit InterleavedTimer(TimingOptions opt) : opt_(opt) {}

  std::size_t add(std::function<void()> fn) {
    fns_.push_back(std::move(fn));
    return fns_.size() - 1;
  }

  std::vector<Timing> run() const {
    std::vector<std::size_t> calls;
    for (const auto& fn : fns_) calls.push_back(detail::calibrate_calls(fn, opt_.min_batch_us));
    for (std::size_t w = 0; w < opt_.warmup; ++w) {
      for (std::size_t i = 0; i < fns_.size(); ++i) detail::run_batch(fns_[i], calls[i]);
    }
    std::vector<std::vector<double>> samples(fns_.size());
    for (std::size_t r = 0; r < opt_.repeats; ++r) {
      for (std::size_t i = 0; i < fns_.size(); ++i) {
        samples[i].push_back(detail::run_batch(fns_[i], calls[i]) / static_cast<double>(calls[i]));
      }
    }
    std::vector<Timing> out;
    for (auto& s : samples) out.push_back(summarize(std::move(s)));
    return out;
  }

 private:
  TimingOptions opt_;
  std::vector<std::function<void()>> fns_;
};

inline Timing time_calls(const std::function<void()>& fn, const TimingOptions& opt) {
  InterleavedTimer timer(opt);
  timer.add(fn);
  return timer.run().front();
}

struct BenchRow {
  std::string experiment;
  std::string config;
  std::string metric;
  double x = 0.0;  // numeric form of config used for fits
  std::size_t repeats = 0;
  Timing timing;
  OpCounters counters;  // for one inference of this config
};

struct PropertyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct BenchReport {
  std::string experiment;
  std::vector<BenchRow> rows;
  std::vector<std::pair<std::string, LinearFit>> fits;  // metric -> fit
  std::vector<PropertyCheck> checks;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }

  void check(std::string name, bool passed, std::string detail = {}) {
    checks.push_back({std::move(name), passed, std::move(detail)});
  }

  std::vector<const BenchRow*> metric_rows(const std::string& metric) const {
    std::vector<const BenchRow*> out;
    for (const auto& r : rows) {
      if (r.metric == metric) out.push_back(&r);
    }
    return out;
  }

  const BenchRow* find(const std::string& config, const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.config == config && r.metric == metric) return &r;
    }
    return nullptr;
  }

  std::optional<LinearFit> fit(const std::string& metric) const {
    for (const auto& [m, f] : fits) {
      if (m == metric) return f;
    }
    return std::nullopt;
  }
};

inline constexpr const char* kCsvSchema =
    "# icsml-bench v1: one row per (experiment, config, metric); times in microseconds per call";
inline constexpr const char* kCsvHeader =
    "experiment,config,metric,x,repeats,mean_us,stddev_us,median_of_means_us,fp_mul,fp_add,int_mul,int_add,skipped";

inline void write_csv(std::ostream& os, const BenchReport& report, bool header = true) {
  if (header) os << kCsvSchema << "\n" << kCsvHeader << "\n";
  for (const auto& r : report.rows) {
    os << r.experiment << ',' << r.config << ',' << r.metric << ',' << r.x << ',' << r.repeats << ','
       << r.timing.mean_us << ',' << r.timing.stddev_us << ',' << r.timing.median_of_means_us << ','
       << r.counters.fp_mul << ',' << r.counters.fp_add << ',' << r.counters.int_mul << ',' << r.counters.int_add
       << ',' << r.counters.skipped << "\n";
  }
  for (const auto& [metric, f] : report.fits) {
    os << "# fit " << report.experiment << ' ' << metric << ": slope=" << f.slope << " intercept=" << f.intercept
       << " r2=" << f.r2 << "\n";
  }
  for (const auto& c : report.checks) {
    os << "# check " << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail)
       << "\n";
  }
}

// ---------------------------------------------------------------------------
// Model helpers

inline void fill_uniform(std::span<float> values, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : values) v = dist(rng);
}

// Input(input_size) followed by dense layers of the given widths.
inline SequentialModel random_mlp(std::uint32_t input_size, std::span<const std::uint32_t> widths,
                                  std::optional<Activation> activation, std::uint64_t seed) {
  std::size_t capacity = 2 * std::size_t{input_size};
  std::size_t prev = input_size;
  for (auto w : widths) {
    capacity += prev * w + 2 * std::size_t{w};
    prev = w;
  }
  SequentialModel model{Arena(capacity)};
  model.add_input(input_size);
  std::mt19937_64 rng(seed);
  for (auto w : widths) {
    const auto idx = model.add_dense(w, activation);
    const float bound = 1.0f / std::sqrt(static_cast<float>(model.layer(idx).inputs()));
    fill_uniform(model.weights(idx), rng, -bound, bound);
    fill_uniform(model.biases(idx), rng, -0.1f, 0.1f);
  }
  model.seal();
  return model;
}

inline std::vector<float> random_vector(std::size_t n, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> v(n);
  std::mt19937_64 rng(seed);
  fill_uniform(v, rng, lo, hi);
  return v;
}

// Zeroes each weight with probability `sparsity`; 0 and 1 are exact.
inline void prune(std::span<float> weights, double sparsity, std::uint64_t seed) {
  if (sparsity <= 0.0) return;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop(std::min(sparsity, 1.0));
  for (auto& w : weights) {
    if (sparsity >= 1.0 || drop(rng)) w = 0.0f;
  }
}

inline bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

// Time of the dot-product and activation phases of every dense layer, run
// separately over the model's current buffers.
inline void dense_dot_phase(SequentialModel& model) {
  OpCounters scratch;
  auto& arena = model.arena();
  for (const auto& layer : model.layers()) {
    if (layer.kind != LayerKind::Dense || layer.is_quantized()) continue;
    const auto in = arena.span(layer.input_views[0]);
    const auto w = arena.span(layer.weights);
    auto out = arena.span(layer.output_view);
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = dot(w.subspan(n * in.size(), in.size()), in, scratch);
  }
}

inline void dense_activation_phase(SequentialModel& model) {
  auto& arena = model.arena();
  for (const auto& layer : model.layers()) {
    if (layer.kind != LayerKind::Dense || !layer.activation) continue;
    activate_inplace(*layer.activation, arena.span(layer.output_view));
  }
}

// ---------------------------------------------------------------------------
// Experiments

struct BenchOptions {
  std::size_t repeats = 10;
  std::uint64_t seed = 1;
  double min_batch_us = 2000.0;
  double min_r2 = 0.98;

  TimingOptions timing() const { return {std::max<std::size_t>(repeats, 10), 3, min_batch_us}; }
};

namespace detail {

// Rows waiting for their timing; filled in by one interleaved run.
class PendingRows {
 public:
  explicit PendingRows(const BenchOptions& opt) : timer_(opt.timing()), repeats_(opt.timing().repeats) {}

  void add(BenchRow row, std::function<void()> fn) {
    row.repeats = repeats_;
    rows_.push_back(std::move(row));
    timer_.add(std::move(fn));
  }

  void run_into(BenchReport& report) {
    auto timings = timer_.run();
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      rows_[i].timing = std::move(timings[i]);
      report.rows.push_back(std::move(rows_[i]));
    }
    rows_.clear();
  }

 private:
  InterleavedTimer timer_;
  std::size_t repeats_;
  std::vector<BenchRow> rows_;
};

inline void fit_metrics(BenchReport& report, std::initializer_list<const char*> metrics) {
  for (const char* metric : metrics) {
    std::vector<double> xs, ys;
    for (const auto* r : report.metric_rows(metric)) {
      xs.push_back(r->x);
      ys.push_back(r->timing.median_of_means_us);
    }
    report.fits.emplace_back(metric, fit_linear(xs, ys));
  }
}

}  // namespace detail

// Model of 1..max_layers dense layers, each `width` wide with ReLU.
inline BenchReport bench_layer_stacking(std::size_t max_layers, const BenchOptions& opt, std::uint32_t width = 64) {
  if (max_layers < 3) throw Error(ErrorCode::DegenerateInput, "layer stacking needs max_layers >= 3");
  BenchReport report;
  report.experiment = "stack";
  const auto relu = Activation::of(ActivationKind::ReLU);
  const auto input = random_vector(width, opt.seed + 7);
  std::deque<SequentialModel> models;
  detail::PendingRows pending(opt);
  std::optional<OpCounters> previous;
  bool increments_exact = true;
  for (std::size_t layers = 1; layers <= max_layers; ++layers) {
    std::vector<std::uint32_t> widths(layers, width);
    auto& model = models.emplace_back(random_mlp(width, widths, relu, opt.seed));
    model.set_input(input);
    model.reset_counters();
    model.evaluate();
    const OpCounters counters = model.counters();
    if (previous) {
      const auto delta = counters - *previous;
      increments_exact &= delta.fp_mul == std::uint64_t{width} * width &&
                          delta.fp_add == std::uint64_t{width} * width + width;
    }
    previous = counters;
    const std::string config = std::to_string(layers) + "x" + std::to_string(width);
    const double x = static_cast<double>(layers);
    pending.add({"stack", config, "total", x, 0, {}, counters}, [&model] { model.evaluate(); });
    pending.add({"stack", config, "dot", x, 0, {}, counters}, [&model] { dense_dot_phase(model); });
    pending.add({"stack", config, "activation", x, 0, {}, counters}, [&model] { dense_activation_phase(model); });
  }
  pending.run_into(report);
  detail::fit_metrics(report, {"total", "dot", "activation"});
  const auto total = *report.fit("total");
  report.check("per-layer counter increment == width^2 fp_mul", increments_exact);
  report.check("total time linear in layer count (r2 >= " + std::to_string(opt.min_r2) + ")", total.r2 >= opt.min_r2,
               "r2=" + std::to_string(total.r2));
  return report;
}

// Input of `input_size` features into one dense ReLU layer of each width.
inline BenchReport bench_layer_width(std::span<const std::uint32_t> widths, const BenchOptions& opt,
                                     std::uint32_t input_size = 32) {
  if (widths.size() < 3) throw Error(ErrorCode::DegenerateInput, "width sweep needs >= 3 widths");
  BenchReport report;
  report.experiment = "width";
  const auto relu = Activation::of(ActivationKind::ReLU);
  const auto input = random_vector(input_size, opt.seed + 7);
  std::deque<SequentialModel> models;
  detail::PendingRows pending(opt);
  bool counters_exact = true;
  for (auto w : widths) {
    const std::uint32_t one[] = {w};
    auto& model = models.emplace_back(random_mlp(input_size, one, relu, opt.seed));
    model.set_input(input);
    model.reset_counters();
    model.evaluate();
    const OpCounters counters = model.counters();
    counters_exact &= counters.fp_mul == std::uint64_t{input_size} * w;
    const std::string config = std::to_string(w);
    const double x = static_cast<double>(w);
    pending.add({"width", config, "total", x, 0, {}, counters}, [&model] { model.evaluate(); });
    pending.add({"width", config, "dot", x, 0, {}, counters}, [&model] { dense_dot_phase(model); });
    pending.add({"width", config, "activation", x, 0, {}, counters}, [&model] { dense_activation_phase(model); });
  }
  pending.run_into(report);
  detail::fit_metrics(report, {"total", "dot", "activation"});
  const auto total = *report.fit("total");
  report.check("fp_mul == inputs x width", counters_exact);
  report.check("total time linear in width (r2 >= " + std::to_string(opt.min_r2) + ")", total.r2 >= opt.min_r2,
               "r2=" + std::to_string(total.r2));
  return report;
}

inline std::vector<std::uint32_t> doubling_widths(std::uint32_t from, std::uint32_t to) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t w = from; w <= to; w *= 2) out.push_back(w);
  return out;
}

// Worst-case |float - quantized| output gap of a dense layer before the
// activation, from per-element rounding of weights and inputs.
inline double quantization_error_bound(const QuantizedDense& q, std::span<const float> float_weights,
                                       std::span<const float> input) {
  double worst = 0.0;
  const double in_step = q.input_scale;
  for (std::size_t n = 0; n < q.neurons; ++n) {
    double bound = 0.0;
    const double w_step = q.weight_scales[n];
    for (std::size_t i = 0; i < q.inputs; ++i) {
      const double w = std::fabs(float_weights[n * q.inputs + i]);
      const double x = std::fabs(input[i]);
      // (w + dw)(x + dx) - wx with |dw| <= w_step/2, |dx| <= in_step/2
      bound += w * in_step / 2 + x * w_step / 2 + w_step * in_step / 4;
    }
    worst = std::max(worst, bound);
  }
  // Float rounding of the accumulated and dequantized values.
  return worst * (1.0 + 1e-5) + 1e-5;
}

inline BenchReport bench_quantization(std::uint32_t inputs, std::uint32_t neurons, std::span<const QuantScheme> schemes,
                                      const BenchOptions& opt) {
  BenchReport report;
  report.experiment = "quant";
  const auto relu = Activation::of(ActivationKind::ReLU);
  const std::uint32_t one[] = {neurons};
  auto model = random_mlp(inputs, one, relu, opt.seed);
  const auto input = random_vector(inputs, opt.seed + 11);
  model.set_input(input);
  model.reset_counters();
  model.evaluate();
  const std::vector<float> reference(model.output().begin(), model.output().end());
  const auto weights = model.arena().span(model.layer(1).weights);
  const auto biases = model.arena().span(model.layer(1).biases);
  const std::uint64_t macs = std::uint64_t{inputs} * neurons;

  // Pre-activation float reference for the error bound.
  std::vector<float> pre(neurons);
  {
    OpCounters c;
    for (std::uint32_t n = 0; n < neurons; ++n) pre[n] = dot(weights.subspan(n * inputs, inputs), input, c) + biases[n];
  }

  struct QuantCase {
    QuantizedDense q;
    QuantScratch scratch;
    std::vector<float> out;
  };
  std::deque<QuantCase> cases;
  detail::PendingRows pending(opt);
  OpCounters sink;
  std::vector<std::string> quantized_configs;

  for (auto scheme : schemes) {
    const std::string config = std::string(scheme_name(scheme)) + "_" + std::to_string(inputs) + "x" +
                               std::to_string(neurons);
    if (!is_integer(scheme)) {
      auto& layer = model.layer(1);
      auto& arena = model.arena();
      OpCounters counters;
      dense_eval(arena, layer, counters);
      report.check(config + " output equals unoptimized path", bitwise_equal(model.layer_output(1), reference));
      report.check(config + " counters == (" + std::to_string(macs) + ", " + std::to_string(macs + neurons) +
                       ", 0, 0)",
                   counters.fp_mul == macs && counters.fp_add == macs + neurons && counters.int_mul == 0 &&
                       counters.int_add == 0);
      pending.add({"quant", config, "total", 32, 0, {}, counters}, [&arena, &layer, &sink] { dense_eval(arena, layer, sink); });
      pending.add({"quant", config, "dot", 32, 0, {}, counters}, [&model] { dense_dot_phase(model); });
      pending.add({"quant", config, "activation", 32, 0, {}, counters}, [&model] { dense_activation_phase(model); });
      continue;
    }
    auto q = quantize_dense(weights, biases, inputs, relu, scheme, calibrate_input_max(input));
    auto scratch = make_scratch(q);
    auto& c = cases.emplace_back(QuantCase{std::move(q), std::move(scratch), std::vector<float>(neurons)});
    OpCounters counters;
    quantized_dense_eval(c.q, input, c.out, c.scratch, counters);
    report.check(config + " counters == (" + std::to_string(2 * neurons) + ", " + std::to_string(neurons) + ", " +
                     std::to_string(macs) + ", " + std::to_string(macs) + ")",
                 counters.fp_mul == 2ull * neurons && counters.fp_add == neurons && counters.int_mul == macs &&
                     counters.int_add == macs);
    // Pre-activation gap bounded; ReLU is 1-Lipschitz so the bound carries over.
    const double bound = quantization_error_bound(c.q, weights, input);
    double gap = 0.0;
    for (std::uint32_t n = 0; n < neurons; ++n) {
      gap = std::max(gap, std::fabs(static_cast<double>(c.out[n]) - std::max(0.0, static_cast<double>(pre[n]))));
    }
    report.check(config + " output within quantization error bound", gap <= bound,
                 "gap=" + std::to_string(gap) + " bound=" + std::to_string(bound));
    const double bits = scheme_bits(scheme);
    pending.add({"quant", config, "total", bits, 0, {}, counters},
                [&c, &input, &sink] { quantized_dense_eval(c.q, input, c.out, c.scratch, sink); });
    pending.add({"quant", config, "dot", bits, 0, {}, counters},
                [&c, &sink] { accumulate_rows(c.q, c.scratch, 0, c.q.neurons, SkipPolicy::NoSkip, sink); });
    pending.add({"quant", config, "activation", bits, 0, {}, counters},
                [&c] { activate_rows(c.q.activation, c.out, 0, c.q.neurons); });
    pending.add({"quant", config, "dequantization", bits, 0, {}, counters},
                [&c, &sink] { dequantize_rows(c.q, c.scratch, c.out, 0, c.q.neurons, sink); });
    pending.add({"quant", config, "input_quantization", bits, 0, {}, counters},
                [&c, &input] { quantize_input(c.q, input, c.scratch); });
    quantized_configs.push_back(config);
  }
  pending.run_into(report);

  // "other" = dequantization + input quantization.
  for (const auto& config : quantized_configs) {
    const BenchRow* deq = report.find(config, "dequantization");
    const BenchRow* qin = report.find(config, "input_quantization");
    BenchRow other = *qin;
    other.metric = "other";
    for (std::size_t i = 0; i < other.timing.samples_us.size(); ++i) other.timing.samples_us[i] += deq->timing.samples_us[i];
    other.timing = summarize(std::move(other.timing.samples_us));
    report.rows.push_back(std::move(other));
  }

  const auto mean_of = [&](QuantScheme s) -> std::optional<double> {
    for (const auto& r : report.rows) {
      if (r.metric == "total" && r.config.rfind(std::string(scheme_name(s)) + "_", 0) == 0) return r.timing.mean_us;
    }
    return std::nullopt;
  };
  const auto q8 = mean_of(QuantScheme::Q8), q16 = mean_of(QuantScheme::Q16), f32 = mean_of(QuantScheme::F32);
  if (q8 && q16 && f32) {
    std::ostringstream detail;
    detail << "q8=" << *q8 << "us q16=" << *q16 << "us f32=" << *f32 << "us";
    report.check("latency ordering Q8 < Q16 < F32", *q8 < *q16 && *q16 < *f32, detail.str());
  }
  return report;
}

struct PruneOptions {
  std::uint32_t inputs = 784;
  std::uint32_t neurons = 512;
  std::vector<double> sparsities{0.0, 0.5, 0.9, 1.0};
  std::vector<SkipPolicy> policies{SkipPolicy::NoSkip, SkipPolicy::SkipZeroWeight, SkipPolicy::SkipZeroWeightOrInput};
  std::vector<QuantScheme> schemes{QuantScheme::F32, QuantScheme::Q8};
};

inline std::string prune_config(QuantScheme scheme, double sparsity, SkipPolicy policy) {
  std::ostringstream os;
  os << scheme_name(scheme) << "_s" << sparsity << "_" << skip_policy_name(policy);
  return os.str();
}

inline BenchReport bench_pruning(const PruneOptions& popt, const BenchOptions& opt) {
  BenchReport report;
  report.experiment = "prune";
  const auto relu = Activation::of(ActivationKind::ReLU);
  const std::uint32_t one[] = {popt.neurons};
  const auto input = random_vector(popt.inputs, opt.seed + 13);
  const std::uint64_t macs = std::uint64_t{popt.inputs} * popt.neurons;

  // One case per (sparsity, scheme); each owns everything its kernels touch.
  struct PruneCase {
    SequentialModel model;
    NonzeroIndex index;
    std::optional<QuantizedDense> q;
    std::optional<QuantScratch> scratch;
    std::vector<float> out;
  };
  std::deque<PruneCase> cases;
  detail::PendingRows pending(opt);

  for (double sparsity : popt.sparsities) {
    for (auto scheme : popt.schemes) {
      auto model = random_mlp(popt.inputs, one, relu, opt.seed);
      prune(model.weights(1), sparsity, opt.seed + 17);
      model.seal();
      model.set_input(input);
      model.evaluate();  // fills the input layer buffer
      const LayerSpec& base = model.layer(1);
      NonzeroIndex index(std::span<const float>(model.arena().span(base.weights)), base.neurons(), base.inputs());
      auto& c = cases.emplace_back(PruneCase{std::move(model), std::move(index), std::nullopt, std::nullopt,
                                             std::vector<float>(popt.neurons)});
      if (is_integer(scheme)) {
        c.q = quantize_dense(c.model, 1, scheme, calibrate_input_max(input));
        c.scratch = make_scratch(*c.q);
      }

      std::vector<float> reference;
      for (auto policy : popt.policies) {
        std::function<void(OpCounters&)> kernel;
        if (c.q) {
          kernel = [&c, &input, policy](OpCounters& k) { quantized_dense_eval(*c.q, input, c.out, *c.scratch, k, policy); };
        } else if (policy == SkipPolicy::NoSkip) {
          kernel = [&c](OpCounters& k) {
            const LayerSpec& layer = c.model.layer(1);
            dense_eval(c.model.arena(), layer, k);
            const auto o = c.model.arena().span(layer.output_view);
            std::copy(o.begin(), o.end(), c.out.begin());
          };
        } else {
          kernel = [&c, policy](OpCounters& k) {
            const LayerSpec& layer = c.model.layer(1);
            sparse_dense_eval(c.model.arena(), layer, policy, c.index, k);
            const auto o = c.model.arena().span(layer.output_view);
            std::copy(o.begin(), o.end(), c.out.begin());
          };
        }
        OpCounters counters;
        kernel(counters);
        const std::string config = prune_config(scheme, sparsity, policy);
        if (policy == SkipPolicy::NoSkip) reference = c.out;
        else report.check(config + " output bitwise equal to NoSkip", bitwise_equal(c.out, reference));
        if (policy == SkipPolicy::SkipZeroWeight) {
          // Quantization can round small weights to a zero code; those are
          // the only terms a dense (sparsity 0) layer may skip.
          const std::uint64_t zeros = macs - (c.q ? c.q->nonzero.nonzeros() : c.index.nonzeros());
          report.check(config + " skipped == zero weight count", counters.skipped == zeros,
                       std::to_string(counters.skipped) + " skipped, " + std::to_string(zeros) + " zero weights");
          if (sparsity == 0.0 && !c.q) report.check(config + " skipped == 0", counters.skipped == 0);
        }
        if (policy != SkipPolicy::NoSkip && sparsity >= 1.0) {
          report.check(config + " skipped == inputs x neurons", counters.skipped == macs);
        }
        pending.add({"prune", config, "kernel", sparsity, 0, {}, counters}, [kernel] {
          OpCounters sink;
          kernel(sink);
        });
      }
    }
  }
  pending.run_into(report);

  const auto mean = [&](QuantScheme s, double sp, SkipPolicy p) -> std::optional<double> {
    if (const auto* r = report.find(prune_config(s, sp, p), "kernel")) return r->timing.mean_us;
    return std::nullopt;
  };
  for (double sp : popt.sparsities) {
    if (sp < 0.9) continue;
    const auto skip = mean(QuantScheme::Q8, sp, SkipPolicy::SkipZeroWeight);
    const auto noskip = mean(QuantScheme::Q8, sp, SkipPolicy::NoSkip);
    if (skip && noskip) {
      std::ostringstream name;
      name << "Q8 sparsity " << sp << ": SkipZeroWeight faster than NoSkip";
      report.check(name.str(), *skip < *noskip,
                   "skip=" + std::to_string(*skip) + "us noskip=" + std::to_string(*noskip) + "us");
    }
  }
  {
    const auto skip = mean(QuantScheme::F32, 0.0, SkipPolicy::SkipZeroWeight);
    const auto noskip = mean(QuantScheme::F32, 0.0, SkipPolicy::NoSkip);
    if (skip && noskip) {
      report.check("F32 sparsity 0: SkipZeroWeight not faster than NoSkip", *skip >= *noskip,
                   "skip=" + std::to_string(*skip) + "us noskip=" + std::to_string(*noskip) + "us");
    }
  }
  return report;
}

// Per-MAC and per-element costs of this host, from a width sweep.
inline CostModel fit_cost_model(const BenchReport& width_report, std::uint32_t input_size = 32) {
  CostModel cost;
  const auto dot = width_report.fit("dot");
  const auto act = width_report.fit("activation");
  if (dot) cost.mac_us = std::max(dot->slope / input_size, 1e-6);
  if (act) cost.element_us = std::max(act->slope, 1e-6);
  return cost;
}

}  // namespace icsml::bench
