#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icsml/error.hpp"

namespace icsml {

// Arithmetic performed during inference. Kernels bump these after each loop
// rather than per term.
struct OpCounters {
  std::uint64_t fp_mul = 0;
  std::uint64_t fp_add = 0;
  std::uint64_t int_mul = 0;
  std::uint64_t int_add = 0;
  std::uint64_t skipped = 0;

  OpCounters& operator+=(const OpCounters& o) {
    fp_mul += o.fp_mul;
    fp_add += o.fp_add;
    int_mul += o.int_mul;
    int_add += o.int_add;
    skipped += o.skipped;
    return *this;
  }
  friend OpCounters operator-(OpCounters a, const OpCounters& b) {
    a.fp_mul -= b.fp_mul;
    a.fp_add -= b.fp_add;
    a.int_mul -= b.int_mul;
    a.int_add -= b.int_add;
    a.skipped -= b.skipped;
    return a;
  }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

enum class ActivationKind { BinaryStep, ELU, ReLU, LeakyReLU, Sigmoid, Softmax, Swish, Tanh };

inline constexpr float kDefaultEluAlpha = 1.0f;
inline constexpr float kDefaultLeakyAlpha = 0.01f;

struct Activation {
  ActivationKind kind = ActivationKind::ReLU;
  float alpha = 0.0f;

  static Activation of(ActivationKind kind) {
    switch (kind) {
      case ActivationKind::ELU: return {kind, kDefaultEluAlpha};
      case ActivationKind::LeakyReLU: return {kind, kDefaultLeakyAlpha};
      default: return {kind, 0.0f};
    }
  }
  static Activation of(ActivationKind kind, float alpha) {
    if (!std::isfinite(alpha)) throw Error(ErrorCode::UnsupportedKind, "activation alpha must be finite");
    if (kind == ActivationKind::LeakyReLU && alpha < 0.0f) {
      throw Error(ErrorCode::UnsupportedKind, "LeakyReLU alpha must be >= 0");
    }
    return {kind, alpha};
  }

  bool has_alpha() const { return kind == ActivationKind::ELU || kind == ActivationKind::LeakyReLU; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

inline constexpr std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::BinaryStep: return "binary_step";
    case ActivationKind::ELU: return "elu";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::LeakyReLU: return "leaky_relu";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Softmax: return "softmax";
    case ActivationKind::Swish: return "swish";
    case ActivationKind::Tanh: return "tanh";
  }
  return "?";
}

inline std::optional<ActivationKind> parse_activation_kind(std::string_view name) {
  for (auto kind : {ActivationKind::BinaryStep, ActivationKind::ELU, ActivationKind::ReLU,
                    ActivationKind::LeakyReLU, ActivationKind::Sigmoid, ActivationKind::Softmax,
                    ActivationKind::Swish, ActivationKind::Tanh}) {
    if (activation_name(kind) == name) return kind;
  }
  return std::nullopt;
}

// Left-to-right sum of products; one mul and one add per term.
inline float dot(std::span<const float> a, std::span<const float> b, OpCounters& counters) {
  const std::size_t n = a.size();
  float sum = 0.0f;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  counters.fp_mul += n;
  counters.fp_add += n;
  return sum;
}

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// Scalar activations. BinaryStep(0) == 0; Swish uses beta = 1.
inline float activate(const Activation& act, float x) {
  switch (act.kind) {
    case ActivationKind::BinaryStep: return x > 0.0f ? 1.0f : 0.0f;
    case ActivationKind::ELU: return x > 0.0f ? x : act.alpha * std::expm1(x);
    case ActivationKind::ReLU: return x > 0.0f ? x : 0.0f;
    case ActivationKind::LeakyReLU: return x > 0.0f ? x : act.alpha * x;
    case ActivationKind::Sigmoid: return sigmoid(x);
    case ActivationKind::Swish: return x * sigmoid(x);
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::Softmax:
      throw Error(ErrorCode::UnsupportedKind, "softmax is only defined over a vector");
  }
  return x;
}

// Max-shifted softmax. in and out may alias.
inline void softmax(std::span<const float> in, std::span<float> out) {
  if (in.empty()) throw Error(ErrorCode::EmptyVector, "softmax of an empty vector");
  const float m = *std::max_element(in.begin(), in.end());
  float sum = 0.0f;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - m);
    sum += out[i];
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[i] /= sum;
}

inline std::vector<float> softmax(std::span<const float> in) {
  std::vector<float> out(in.size());
  softmax(in, out);
  return out;
}

// Applies act over a whole vector in place; the vector form of Softmax.
inline void activate_inplace(const Activation& act, std::span<float> values) {
  if (act.kind == ActivationKind::Softmax) {
    softmax(values, values);
    return;
  }
  for (auto& v : values) v = activate(act, v);
}

// Exact integer dot product. Acc must hold every partial sum; callers pick it
// from the operand width (see quantization.hpp).
template <typename Acc = std::int64_t, typename T>
Acc int_dot(std::span<const T> a, std::span<const T> b, OpCounters& counters) {
  const std::size_t n = a.size();
  Acc sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += static_cast<Acc>(a[i]) * static_cast<Acc>(b[i]);
  counters.int_mul += n;
  counters.int_add += n;
  return sum;
}

}  // namespace icsml
