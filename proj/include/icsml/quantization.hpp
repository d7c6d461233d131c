#pragma once

// Symmetric integer quantization of dense layers.
//
// Weights are quantized per output row (one REAL scale per neuron) and the
// layer input is quantized with a single REAL input scale, so a quantized
// layer carries neurons + 1 scaling factors. Inference accumulates exact
// integer dot products and dequantizes each neuron with two float multiplies
// and one float add (the bias).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "icsml/error.hpp"
#include "icsml/math.hpp"
#include "icsml/sparse.hpp"

namespace icsml {

enum class QuantScheme { Q8, Q16, Q32, F32 };

inline constexpr int scheme_bits(QuantScheme s) {
  switch (s) {
    case QuantScheme::Q8: return 8;
    case QuantScheme::Q16: return 16;
    case QuantScheme::Q32: return 32;
    case QuantScheme::F32: return 32;
  }
  return 32;
}

inline constexpr std::size_t bytes_per_weight(QuantScheme s) {
  return static_cast<std::size_t>(scheme_bits(s) / 8);
}

inline constexpr bool is_integer(QuantScheme s) { return s != QuantScheme::F32; }

// Largest code magnitude, 2^(bits-1) - 1.
inline constexpr std::int64_t scheme_qmax(QuantScheme s) {
  return (std::int64_t{1} << (scheme_bits(s) - 1)) - 1;
}

inline constexpr std::string_view scheme_name(QuantScheme s) {
  switch (s) {
    case QuantScheme::Q8: return "q8";
    case QuantScheme::Q16: return "q16";
    case QuantScheme::Q32: return "q32";
    case QuantScheme::F32: return "f32";
  }
  return "?";
}

// IEC 61131-3 elementary type holding one weight.
inline constexpr std::string_view scheme_iec_type(QuantScheme s) {
  switch (s) {
    case QuantScheme::Q8: return "SINT";
    case QuantScheme::Q16: return "INT";
    case QuantScheme::Q32: return "DINT";
    case QuantScheme::F32: return "REAL";
  }
  return "?";
}

inline std::optional<QuantScheme> parse_scheme(std::string_view name) {
  for (auto s : {QuantScheme::Q8, QuantScheme::Q16, QuantScheme::Q32, QuantScheme::F32}) {
    if (scheme_name(s) == name) return s;
  }
  return std::nullopt;
}

struct MemoryFootprint {
  std::size_t weights = 0;
  std::size_t biases = 0;
  std::size_t scales = 0;  // 0 and has_scales == false for F32
  std::size_t total = 0;
  bool has_scales = false;

  friend bool operator==(const MemoryFootprint&, const MemoryFootprint&) = default;
};

// Bytes needed by one dense layer's parameters under a scheme.
inline constexpr MemoryFootprint memory_footprint(std::size_t inputs, std::size_t neurons, QuantScheme scheme) {
  MemoryFootprint f;
  f.weights = inputs * neurons * bytes_per_weight(scheme);
  f.biases = neurons * sizeof(float);
  f.has_scales = is_integer(scheme);
  f.scales = f.has_scales ? (neurons + 1) * sizeof(float) : 0;
  f.total = f.weights + f.biases + f.scales;
  return f;
}

namespace detail {

template <QuantScheme S>
struct code_type;
template <>
struct code_type<QuantScheme::Q8> { using type = std::int8_t; };
template <>
struct code_type<QuantScheme::Q16> { using type = std::int16_t; };
template <>
struct code_type<QuantScheme::Q32> { using type = std::int32_t; };

// Q8 sums of products stay below 2^31 for this many inputs.
inline constexpr std::size_t kQ8Int32MaxInputs =
    static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max() / (127 * 127));

template <typename T>
constexpr QuantScheme scheme_of() {
  if constexpr (std::is_same_v<T, std::int8_t>) return QuantScheme::Q8;
  else if constexpr (std::is_same_v<T, std::int16_t>) return QuantScheme::Q16;
  else return QuantScheme::Q32;
}

template <typename T>
T quantize_value(double v, std::int64_t qmax) {
  const double r = std::round(v);  // half away from zero
  const double q = std::clamp(r, -static_cast<double>(qmax), static_cast<double>(qmax));
  return static_cast<T>(q);
}

}  // namespace detail

using QuantCodes = std::variant<std::vector<std::int8_t>, std::vector<std::int16_t>, std::vector<std::int32_t>>;

inline QuantCodes make_codes(QuantScheme scheme, std::size_t count) {
  switch (scheme) {
    case QuantScheme::Q8: return std::vector<std::int8_t>(count);
    case QuantScheme::Q16: return std::vector<std::int16_t>(count);
    case QuantScheme::Q32: return std::vector<std::int32_t>(count);
    case QuantScheme::F32: break;
  }
  throw Error(ErrorCode::UnsupportedKind, "F32 has no integer codes");
}

// Immutable quantized dense layer. Shareable across evaluation contexts.
struct QuantizedDense {
  QuantScheme scheme = QuantScheme::Q8;
  std::size_t inputs = 0;
  std::size_t neurons = 0;
  QuantCodes q_weights;               // neurons x inputs, row-major
  std::vector<float> biases;          // neurons
  std::vector<float> weight_scales;   // neurons
  float input_scale = 1.0f;
  std::optional<Activation> activation;
  NonzeroIndex nonzero;               // columns with nonzero codes, per row

  std::int64_t qmax() const { return scheme_qmax(scheme); }

  // Scaling-factor block as stored on disk: per-row scales then input scale.
  std::vector<float> scale_store() const {
    std::vector<float> s(weight_scales);
    s.push_back(input_scale);
    return s;
  }

  double weight(std::size_t n, std::size_t i) const {
    return std::visit([&](const auto& codes) { return static_cast<double>(codes[n * inputs + i]); },
                      q_weights) *
           static_cast<double>(weight_scales[n]);
  }
};

// Checks every structural invariant; throws ShapeMismatch on violation.
inline void validate(const QuantizedDense& q) {
  if (!is_integer(q.scheme)) throw Error(ErrorCode::ShapeMismatch, "quantized layer needs an integer scheme");
  const auto qmax = q.qmax();
  std::visit(
      [&](const auto& codes) {
        using T = typename std::decay_t<decltype(codes)>::value_type;
        if (detail::scheme_of<T>() != q.scheme) throw Error(ErrorCode::ShapeMismatch, "code width does not match scheme");
        if (codes.size() != q.inputs * q.neurons) throw Error(ErrorCode::ShapeMismatch, "code count != neurons x inputs");
        for (auto c : codes) {
          if (std::abs(static_cast<std::int64_t>(c)) > qmax) {
            throw Error(ErrorCode::ShapeMismatch, "weight code outside +-qmax");
          }
        }
      },
      q.q_weights);
  if (q.biases.size() != q.neurons) throw Error(ErrorCode::ShapeMismatch, "bias count != neurons");
  if (q.weight_scales.size() != q.neurons) throw Error(ErrorCode::ShapeMismatch, "scale count != neurons");
  for (float s : q.weight_scales) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw Error(ErrorCode::ShapeMismatch, "weight scales must be positive");
  }
  if (!(q.input_scale > 0.0f) || !std::isfinite(q.input_scale)) {
    throw Error(ErrorCode::ShapeMismatch, "input scale must be positive");
  }
}

// Assembles a layer from stored codes and an N+1 scale block.
inline QuantizedDense make_quantized_dense(QuantScheme scheme, std::size_t inputs, QuantCodes codes,
                                           std::span<const float> biases, std::span<const float> scale_store,
                                           std::optional<Activation> activation) {
  QuantizedDense q;
  q.scheme = scheme;
  q.inputs = inputs;
  q.neurons = biases.size();
  q.q_weights = std::move(codes);
  q.biases.assign(biases.begin(), biases.end());
  if (scale_store.size() != q.neurons + 1) {
    throw Error(ErrorCode::ShapeMismatch, "scale block must hold neurons + 1 values");
  }
  q.weight_scales.assign(scale_store.begin(), scale_store.end() - 1);
  q.input_scale = scale_store.back();
  q.activation = activation;
  validate(q);
  std::visit([&](const auto& c) { q.nonzero = NonzeroIndex(std::span(c), q.neurons, q.inputs); }, q.q_weights);
  return q;
}

namespace detail {

// max_abs / qmax rounded to the nearest REAL. With 31-bit codes that
// rounding can leave max_abs / scale many codes above qmax, so the clamped
// largest weight would miss by more than half a step; the scale is then
// nudged up just far enough.
inline float scale_for(float max_abs, std::int64_t qmax) {
  float scale = static_cast<float>(static_cast<double>(max_abs) / static_cast<double>(qmax));
  const auto clamp_error = [&] { return static_cast<double>(max_abs) - static_cast<double>(qmax) * scale; };
  while (clamp_error() > 0.5 * static_cast<double>(scale)) {
    scale = std::nextafter(scale, std::numeric_limits<float>::infinity());
  }
  return scale;
}

}  // namespace detail

// Symmetric max-abs quantization per row; biases stay REAL.
inline QuantizedDense quantize_dense(std::span<const float> weights, std::span<const float> biases,
                                     std::size_t inputs, std::optional<Activation> activation,
                                     QuantScheme scheme, float calib_input_max) {
  if (!is_integer(scheme)) throw Error(ErrorCode::UnsupportedKind, "cannot quantize to F32");
  if (!(calib_input_max > 0.0f) || !std::isfinite(calib_input_max)) {
    throw Error(ErrorCode::ShapeMismatch, "calibration input max must be positive");
  }
  const std::size_t neurons = biases.size();
  if (weights.size() != neurons * inputs) throw Error(ErrorCode::ShapeMismatch, "weights != neurons x inputs");

  const std::int64_t qmax = scheme_qmax(scheme);
  std::vector<float> scales(neurons + 1);
  QuantCodes codes = make_codes(scheme, weights.size());
  std::visit(
      [&](auto& out) {
        using T = typename std::decay_t<decltype(out)>::value_type;
        for (std::size_t n = 0; n < neurons; ++n) {
          const float* row = weights.data() + n * inputs;
          float max_abs = 0.0f;
          for (std::size_t i = 0; i < inputs; ++i) {
            if (!std::isfinite(row[i])) throw Error(ErrorCode::ShapeMismatch, "non-finite weight");
            max_abs = std::max(max_abs, std::fabs(row[i]));
          }
          const float scale = max_abs > 0.0f ? detail::scale_for(max_abs, qmax) : 1.0f;
          scales[n] = scale;
          for (std::size_t i = 0; i < inputs; ++i) {
            out[n * inputs + i] =
                detail::quantize_value<T>(static_cast<double>(row[i]) / static_cast<double>(scale), qmax);
          }
        }
      },
      codes);
  scales[neurons] = detail::scale_for(calib_input_max, qmax);
  return make_quantized_dense(scheme, inputs, std::move(codes), biases, scales, activation);
}

// Per-context working memory for quantized evaluation, sized once.
struct QuantScratch {
  QuantCodes q_input;
  std::vector<float> accumulators;  // integer sums converted to REAL, one per neuron
};

inline QuantScratch make_scratch(const QuantizedDense& q) {
  return QuantScratch{make_codes(q.scheme, q.inputs), std::vector<float>(q.neurons)};
}

// Phase 1: input quantization, q_in = clamp(round(x / input_scale)).
inline void quantize_input(const QuantizedDense& q, std::span<const float> input, QuantScratch& scratch) {
  const double scale = static_cast<double>(q.input_scale);
  const std::int64_t qmax = q.qmax();
  std::visit(
      [&](auto& codes) {
        using T = typename std::decay_t<decltype(codes)>::value_type;
        for (std::size_t i = 0; i < q.inputs; ++i) {
          codes[i] = detail::quantize_value<T>(static_cast<double>(input[i]) / scale, qmax);
        }
      },
      scratch.q_input);
}

namespace detail {

template <typename Acc, typename T>
void accumulate_rows_impl(const QuantizedDense& q, const std::vector<T>& w, const std::vector<T>& x,
                          std::span<float> acc, std::size_t row_begin, std::size_t row_end,
                          SkipPolicy policy, OpCounters& counters) {
  const std::size_t inputs = q.inputs;
  if (policy == SkipPolicy::NoSkip) {
    const std::span<const T> xs(x.data(), inputs);
    OpCounters local;
    for (std::size_t n = row_begin; n < row_end; ++n) {
      acc[n] = static_cast<float>(int_dot<Acc>(std::span<const T>(w.data() + n * inputs, inputs), xs, local));
    }
    counters += local;
    return;
  }
  const bool skip_input = policy == SkipPolicy::SkipZeroWeightOrInput;
  std::uint64_t executed_total = 0;
  for (std::size_t n = row_begin; n < row_end; ++n) {
    std::uint64_t executed = 0;
    acc[n] = static_cast<float>(
        sparse_row_dot<Acc>(w.data() + n * inputs, x.data(), q.nonzero.row(n), skip_input, executed));
    executed_total += executed;
  }
  const std::uint64_t terms = static_cast<std::uint64_t>(row_end - row_begin) * inputs;
  counters.int_mul += executed_total;
  counters.int_add += executed_total;
  counters.skipped += terms - executed_total;
}

}  // namespace detail

// Phase 2: exact integer row sums for neurons [row_begin, row_end).
inline void accumulate_rows(const QuantizedDense& q, QuantScratch& scratch, std::size_t row_begin,
                            std::size_t row_end, SkipPolicy policy, OpCounters& counters) {
  std::visit(
      [&](const auto& w) {
        using T = typename std::decay_t<decltype(w)>::value_type;
        const auto& x = std::get<std::vector<T>>(scratch.q_input);
        if constexpr (std::is_same_v<T, std::int8_t>) {
          if (q.inputs <= detail::kQ8Int32MaxInputs) {
            detail::accumulate_rows_impl<std::int32_t>(q, w, x, scratch.accumulators, row_begin, row_end, policy, counters);
          } else {
            detail::accumulate_rows_impl<std::int64_t>(q, w, x, scratch.accumulators, row_begin, row_end, policy, counters);
          }
        } else if constexpr (std::is_same_v<T, std::int16_t>) {
          detail::accumulate_rows_impl<std::int64_t>(q, w, x, scratch.accumulators, row_begin, row_end, policy, counters);
        } else {
          detail::accumulate_rows_impl<__int128>(q, w, x, scratch.accumulators, row_begin, row_end, policy, counters);
        }
      },
      q.q_weights);
}

// Phase 3: out[n] = acc[n] * weight_scale[n] * input_scale + bias[n].
inline void dequantize_rows(const QuantizedDense& q, const QuantScratch& scratch, std::span<float> out,
                            std::size_t row_begin, std::size_t row_end, OpCounters& counters) {
  for (std::size_t n = row_begin; n < row_end; ++n) {
    out[n] = scratch.accumulators[n] * q.weight_scales[n] * q.input_scale + q.biases[n];
  }
  const auto rows = static_cast<std::uint64_t>(row_end - row_begin);
  counters.fp_mul += 2 * rows;
  counters.fp_add += rows;
}

// Elementwise activation over rows; Softmax is applied by finish_activation.
inline void activate_rows(const std::optional<Activation>& act, std::span<float> out, std::size_t row_begin,
                          std::size_t row_end) {
  if (!act || act->kind == ActivationKind::Softmax) return;
  for (std::size_t n = row_begin; n < row_end; ++n) out[n] = activate(*act, out[n]);
}

inline void finish_activation(const std::optional<Activation>& act, std::span<float> out) {
  if (act && act->kind == ActivationKind::Softmax) softmax(out, out);
}

// Quantized rows [row_begin, row_end). Input quantization runs when the
// range starts at row 0; later ranges reuse the codes already in scratch.
inline void quantized_dense_rows(const QuantizedDense& q, std::span<const float> input, std::span<float> out,
                                 QuantScratch& scratch, std::size_t row_begin, std::size_t row_end,
                                 SkipPolicy policy, OpCounters& counters) {
  if (row_begin == 0) quantize_input(q, input, scratch);
  accumulate_rows(q, scratch, row_begin, row_end, policy, counters);
  dequantize_rows(q, scratch, out, row_begin, row_end, counters);
  activate_rows(q.activation, out, row_begin, row_end);
  if (row_end == q.neurons) finish_activation(q.activation, out);
}

inline void quantized_dense_eval(const QuantizedDense& q, std::span<const float> input, std::span<float> out,
                                 QuantScratch& scratch, OpCounters& counters,
                                 SkipPolicy policy = SkipPolicy::NoSkip) {
  if (input.size() != q.inputs || out.size() != q.neurons) {
    throw Error(ErrorCode::ShapeMismatch, "quantized layer called with wrong vector sizes");
  }
  quantized_dense_rows(q, input, out, scratch, 0, q.neurons, policy, counters);
}

inline std::vector<float> quantized_dense_eval(const QuantizedDense& q, std::span<const float> input,
                                               OpCounters& counters, SkipPolicy policy = SkipPolicy::NoSkip) {
  auto scratch = make_scratch(q);
  std::vector<float> out(q.neurons);
  quantized_dense_eval(q, input, out, scratch, counters, policy);
  return out;
}

// Max-abs over a calibration set; the default calibration rule.
inline float calibrate_input_max(std::span<const float> samples) {
  float m = 0.0f;
  for (float v : samples) m = std::max(m, std::fabs(v));
  return m > 0.0f ? m : 1.0f;
}

}  // namespace icsml
