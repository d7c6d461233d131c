#pragma once

// Layers and the Sequential model.
//
// A model is a flat array of LayerSpec records that share buffers through
// BufferViews. evaluate() walks the array once in index order and calls each
// layer's evaluation function directly; layers never call each other, so
// there is no recursion and every layer runs exactly once per inference.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "icsml/buffer.hpp"
#include "icsml/error.hpp"
#include "icsml/math.hpp"
#include "icsml/quantization.hpp"
#include "icsml/sparse.hpp"

namespace icsml {

enum class LayerKind { Input, Dense, Activation, Concatenation, Custom };

inline constexpr std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Dense: return "dense";
    case LayerKind::Activation: return "activation";
    case LayerKind::Concatenation: return "concatenation";
    case LayerKind::Custom: return "custom";
  }
  return "?";
}

// Read-only access to the buffers feeding a layer.
class LayerInputs {
 public:
  LayerInputs(const Arena& arena, std::span<const BufferView> views) : arena_(&arena), views_(views) {}

  std::size_t size() const { return views_.size(); }
  std::span<const float> operator[](std::size_t i) const { return arena_->span(views_[i]); }
  const BufferView& view(std::size_t i) const { return views_[i]; }

 private:
  const Arena* arena_;
  std::span<const BufferView> views_;
};

// Interface for user-defined layers. Implementations must not allocate in
// evaluate().
class CustomLayer {
 public:
  virtual ~CustomLayer() = default;
  virtual std::string_view type_name() const = 0;
  virtual void evaluate(const LayerInputs& inputs, std::span<float> output, OpCounters& counters) = 0;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Input;
  std::string name;
  std::vector<std::size_t> input_layers;  // producers; for Input this is empty
  std::vector<BufferView> input_views;    // Input: the external input slot
  BufferView output_view;
  BufferView weights;  // Dense, float path: neurons x inputs, row-major
  BufferView biases;   // Dense, float path
  std::optional<Activation> activation;
  SkipPolicy skip = SkipPolicy::NoSkip;
  std::shared_ptr<const NonzeroIndex> nonzero;       // float Dense with a skip policy
  std::shared_ptr<const QuantizedDense> quantized;   // replaces weights/biases when set
  std::shared_ptr<QuantScratch> scratch;             // paired with quantized
  std::shared_ptr<CustomLayer> custom;

  std::size_t neurons() const { return output_view.length; }
  std::size_t inputs() const { return input_views.empty() ? 0 : input_views.front().length; }
  bool is_quantized() const { return quantized != nullptr; }
  // Smallest independently schedulable pieces: rows for Dense, else 1.
  std::size_t units() const { return kind == LayerKind::Dense ? neurons() : 1; }
};

// Build-time shape checks; ShapeMismatch on violation.
inline void validate_layer(const LayerSpec& layer) {
  const auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::ShapeMismatch, "layer '" + layer.name + "': " + what);
  };
  if (layer.input_views.empty()) fail("no inputs");
  switch (layer.kind) {
    case LayerKind::Input:
      if (layer.output_view.length != layer.input_views[0].length) fail("input copy length mismatch");
      break;
    case LayerKind::Dense:
      if (layer.input_views.size() != 1) fail("dense takes exactly one input");
      if (layer.quantized) {
        if (layer.quantized->neurons != layer.neurons() || layer.quantized->inputs != layer.inputs()) {
          fail("quantized store shape does not match views");
        }
      } else {
        if (layer.biases.length != layer.neurons()) fail("bias count != output length");
        if (layer.weights.length != layer.neurons() * layer.inputs()) fail("weight count != outputs x inputs");
      }
      break;
    case LayerKind::Activation:
      if (!layer.activation) fail("activation layer without an activation");
      if (layer.input_views.size() != 1 || layer.output_view.length != layer.inputs()) fail("activation length mismatch");
      break;
    case LayerKind::Concatenation: {
      std::size_t total = 0;
      for (const auto& v : layer.input_views) total += v.length;
      if (total != layer.output_view.length) fail("concatenation length != sum of inputs");
      break;
    }
    case LayerKind::Custom:
      if (!layer.custom) fail("custom layer without an implementation");
      break;
  }
}

inline void input_eval(Arena& arena, const LayerSpec& layer) {
  const auto src = arena.span(layer.input_views[0]);
  std::copy(src.begin(), src.end(), arena.span(layer.output_view).begin());
}

// Float dense rows with zero skipping driven by `index`.
inline void sparse_dense_rows(Arena& arena, const LayerSpec& layer, SkipPolicy policy, const NonzeroIndex& index,
                              std::size_t row_begin, std::size_t row_end, OpCounters& counters) {
  const auto in = arena.span(layer.input_views[0]);
  const auto w = arena.span(layer.weights);
  const auto b = arena.span(layer.biases);
  auto out = arena.span(layer.output_view);
  const std::size_t inputs = in.size();
  const bool skip_input = policy == SkipPolicy::SkipZeroWeightOrInput;
  std::uint64_t executed_total = 0;
  for (std::size_t n = row_begin; n < row_end; ++n) {
    std::uint64_t executed = 0;
    float sum = sparse_row_dot<float>(w.data() + n * inputs, in.data(), index.row(n), skip_input, executed);
    sum += b[n];
    out[n] = layer.activation && layer.activation->kind != ActivationKind::Softmax ? activate(*layer.activation, sum) : sum;
    executed_total += executed;
  }
  const auto rows = static_cast<std::uint64_t>(row_end - row_begin);
  counters.fp_mul += executed_total;
  counters.fp_add += executed_total + rows;
  counters.skipped += rows * inputs - executed_total;
  if (row_end == layer.neurons()) finish_activation(layer.activation, out);
}

// Dense rows [row_begin, row_end). The fused activation is applied per row,
// except Softmax which runs once the last row is written.
inline void dense_rows(Arena& arena, const LayerSpec& layer, std::size_t row_begin, std::size_t row_end,
                       OpCounters& counters) {
  if (layer.quantized) {
    quantized_dense_rows(*layer.quantized, arena.span(layer.input_views[0]), arena.span(layer.output_view),
                         *layer.scratch, row_begin, row_end, layer.skip, counters);
    return;
  }
  if (layer.skip != SkipPolicy::NoSkip && layer.nonzero) {
    sparse_dense_rows(arena, layer, layer.skip, *layer.nonzero, row_begin, row_end, counters);
    return;
  }
  const auto in = arena.span(layer.input_views[0]);
  const auto w = arena.span(layer.weights);
  const auto b = arena.span(layer.biases);
  auto out = arena.span(layer.output_view);
  const std::size_t inputs = in.size();
  const bool elementwise = layer.activation && layer.activation->kind != ActivationKind::Softmax;
  for (std::size_t n = row_begin; n < row_end; ++n) {
    float sum = dot(w.subspan(n * inputs, inputs), in, counters);
    sum += b[n];
    out[n] = elementwise ? activate(*layer.activation, sum) : sum;
  }
  counters.fp_add += row_end - row_begin;
  if (row_end == layer.neurons()) finish_activation(layer.activation, out);
}

inline void dense_eval(Arena& arena, const LayerSpec& layer, OpCounters& counters) {
  dense_rows(arena, layer, 0, layer.neurons(), counters);
}

inline void sparse_dense_eval(Arena& arena, const LayerSpec& layer, SkipPolicy policy, const NonzeroIndex& index,
                              OpCounters& counters) {
  sparse_dense_rows(arena, layer, policy, index, 0, layer.neurons(), counters);
}

inline void concat_eval(Arena& arena, const LayerSpec& layer) {
  auto out = arena.span(layer.output_view).begin();
  for (const auto& v : layer.input_views) {
    const auto src = arena.span(v);
    out = std::copy(src.begin(), src.end(), out);
  }
}

inline void activation_layer_eval(Arena& arena, const LayerSpec& layer) {
  const auto in = arena.span(layer.input_views[0]);
  auto out = arena.span(layer.output_view);
  if (layer.activation->kind == ActivationKind::Softmax) {
    softmax(in, out);
    return;
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = activate(*layer.activation, in[i]);
}

inline void custom_eval(Arena& arena, const LayerSpec& layer, OpCounters& counters) {
  layer.custom->evaluate(LayerInputs(arena, layer.input_views), arena.span(layer.output_view), counters);
}

class SequentialModel {
 public:
  static constexpr std::size_t kPreviousLayer = static_cast<std::size_t>(-1);

  explicit SequentialModel(Arena arena) : arena_(std::move(arena)) {}

  // --- construction ---------------------------------------------------

  std::size_t add_input(std::uint32_t size, std::string name = "input") {
    if (!layers_.empty()) throw Error(ErrorCode::ShapeMismatch, "input must be the first layer");
    LayerSpec layer;
    layer.kind = LayerKind::Input;
    layer.name = std::move(name);
    input_slot_ = arena_.allocate({size});
    layer.input_views.push_back(input_slot_);
    layer.output_view = arena_.allocate({size});
    return push(std::move(layer));
  }

  std::size_t add_dense(std::uint32_t neurons, std::optional<Activation> activation,
                        std::size_t from = kPreviousLayer, std::string name = {}) {
    LayerSpec layer = begin_layer(LayerKind::Dense, std::move(name), {from});
    const auto inputs = static_cast<std::uint32_t>(layer.input_views[0].length);
    layer.weights = arena_.allocate({neurons, inputs});
    layer.biases = arena_.allocate({neurons});
    layer.output_view = arena_.allocate({neurons});
    layer.activation = activation;
    return push(std::move(layer));
  }

  // Dense layer backed by an integer store; no float weights are allocated.
  std::size_t add_quantized_dense(QuantizedDense q, std::size_t from = kPreviousLayer, std::string name = {}) {
    LayerSpec layer = begin_layer(LayerKind::Dense, std::move(name), {from});
    if (q.inputs != layer.input_views[0].length) {
      throw Error(ErrorCode::ShapeMismatch, "quantized layer input width does not match producer");
    }
    layer.output_view = arena_.allocate({static_cast<std::uint32_t>(q.neurons)});
    layer.activation = q.activation;
    layer.scratch = std::make_shared<QuantScratch>(make_scratch(q));
    layer.quantized = std::make_shared<const QuantizedDense>(std::move(q));
    return push(std::move(layer));
  }

  std::size_t add_activation(Activation activation, std::size_t from = kPreviousLayer, std::string name = {}) {
    LayerSpec layer = begin_layer(LayerKind::Activation, std::move(name), {from});
    layer.activation = activation;
    layer.output_view = arena_.allocate({static_cast<std::uint32_t>(layer.input_views[0].length)});
    return push(std::move(layer));
  }

  std::size_t add_concatenation(std::vector<std::size_t> from, std::string name = {}) {
    LayerSpec layer = begin_layer(LayerKind::Concatenation, std::move(name), std::move(from));
    std::size_t total = 0;
    for (const auto& v : layer.input_views) total += v.length;
    layer.output_view = arena_.allocate({static_cast<std::uint32_t>(total)});
    return push(std::move(layer));
  }

  std::size_t add_custom(std::shared_ptr<CustomLayer> impl, std::uint32_t output_size, std::vector<std::size_t> from,
                         std::string name = {}) {
    LayerSpec layer = begin_layer(LayerKind::Custom, std::move(name), std::move(from));
    layer.custom = std::move(impl);
    layer.output_view = arena_.allocate({output_size});
    return push(std::move(layer));
  }

  // Takes effect at seal(); the zero index is built from the loaded weights.
  void set_skip_policy(std::size_t index, SkipPolicy policy) {
    auto& layer = layers_.at(index);
    if (layer.kind != LayerKind::Dense) throw Error(ErrorCode::ShapeMismatch, "skip policies apply to dense layers");
    layer.skip = policy;
    layer.nonzero.reset();
    sealed_ = false;
  }

  // Writable parameter stores of a float dense layer. Handing out the
  // weights unseals the model so its zero index is rebuilt.
  std::span<float> weights(std::size_t index) {
    auto& layer = const_cast<LayerSpec&>(dense_at(index));
    layer.nonzero.reset();
    sealed_ = false;
    return arena_.span(layer.weights);
  }
  std::span<float> biases(std::size_t index) { return arena_.span(dense_at(index).biases); }

  // Freezes the model: builds skip indices. Never touches the arena.
  void seal() {
    if (layers_.empty()) throw Error(ErrorCode::ShapeMismatch, "model has no layers");
    for (auto& layer : layers_) {
      validate_layer(layer);
      if (layer.kind == LayerKind::Dense && !layer.quantized && layer.skip != SkipPolicy::NoSkip && !layer.nonzero) {
        layer.nonzero = std::make_shared<const NonzeroIndex>(
            std::span<const float>(arena_.span(layer.weights)), layer.neurons(), layer.inputs());
      }
    }
    sealed_ = true;
  }
  bool sealed() const { return sealed_; }

  // --- inference ------------------------------------------------------

  void set_input(std::span<const float> input) {
    auto slot = arena_.span(input_slot_);
    if (input.size() != slot.size()) {
      throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(input.size()) + " values, model expects " +
                                                std::to_string(slot.size()));
    }
    std::copy(input.begin(), input.end(), slot.begin());
    ++input_generation_;
  }

  // Runs every layer once, in order.
  void evaluate() {
    if (!sealed_) seal();
    for (std::size_t i = 0; i < layers_.size(); ++i) evaluate_layer(i);
  }

  void evaluate_layer(std::size_t index) { evaluate_units(index, 0, layers_[index].units()); }

  // Evaluates units [begin, end) of one layer. Non-dense layers have a
  // single unit. A layer counts as evaluated when its last unit completes.
  void evaluate_units(std::size_t index, std::size_t begin, std::size_t end) {
    const LayerSpec& layer = layers_[index];
    switch (layer.kind) {
      case LayerKind::Input: input_eval(arena_, layer); break;
      case LayerKind::Dense: dense_rows(arena_, layer, begin, end, counters_); break;
      case LayerKind::Activation: activation_layer_eval(arena_, layer); break;
      case LayerKind::Concatenation: concat_eval(arena_, layer); break;
      case LayerKind::Custom: custom_eval(arena_, layer, counters_); break;
    }
    if (end == layer.units()) ++layer_evaluations_;
  }

  // --- accessors ------------------------------------------------------

  std::size_t layers_num() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t index) const { return layers_.at(index); }
  std::span<const LayerSpec> layers() const { return layers_; }

  std::span<const float> output() const { return arena_.span(layers_.back().output_view); }
  std::span<const float> layer_output(std::size_t index) const { return arena_.span(layers_.at(index).output_view); }
  std::span<const float> input() const { return arena_.span(input_slot_); }
  std::size_t input_size() const { return input_slot_.length; }
  std::size_t output_size() const { return layers_.back().output_view.length; }

  const Arena& arena() const { return arena_; }
  Arena& arena() { return arena_; }

  const OpCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }
  std::uint64_t layer_evaluations() const { return layer_evaluations_; }
  std::uint64_t input_generation() const { return input_generation_; }

  // Weights + biases (integer codes count one each).
  std::size_t parameter_count() const {
    std::size_t count = 0;
    for (const auto& layer : layers_) {
      if (layer.kind != LayerKind::Dense) continue;
      if (layer.quantized) count += layer.quantized->inputs * layer.quantized->neurons + layer.quantized->neurons;
      else count += layer.weights.length + layer.biases.length;
    }
    return count;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].name == name) return i;
    }
    return std::nullopt;
  }

 private:
  LayerSpec begin_layer(LayerKind kind, std::string name, std::vector<std::size_t> from) {
    if (layers_.empty()) throw Error(ErrorCode::ShapeMismatch, "first layer must be an input layer");
    if (from.empty()) throw Error(ErrorCode::RefError, "layer needs at least one input");
    LayerSpec layer;
    layer.kind = kind;
    layer.name = name.empty() ? "L" + std::to_string(layers_.size()) : std::move(name);
    for (auto f : from) {
      const std::size_t producer = f == kPreviousLayer ? layers_.size() - 1 : f;
      if (producer >= layers_.size()) {
        throw Error(ErrorCode::RefError, "layer '" + layer.name + "' reads from a layer that is not earlier");
      }
      layer.input_layers.push_back(producer);
      layer.input_views.push_back(layers_[producer].output_view);
    }
    return layer;
  }

  std::size_t push(LayerSpec layer) {
    sealed_ = false;
    layers_.push_back(std::move(layer));
    return layers_.size() - 1;
  }

  const LayerSpec& dense_at(std::size_t index) const {
    const auto& layer = layers_.at(index);
    if (layer.kind != LayerKind::Dense || layer.quantized) {
      throw Error(ErrorCode::ShapeMismatch, "layer '" + layer.name + "' has no float parameter store");
    }
    return layer;
  }

  Arena arena_;
  std::vector<LayerSpec> layers_;
  BufferView input_slot_;
  OpCounters counters_;
  std::uint64_t layer_evaluations_ = 0;
  std::uint64_t input_generation_ = 0;
  bool sealed_ = false;
};

inline void sequential_evaluate(SequentialModel& model) { model.evaluate(); }

// Convenience for tests and the quantizer: copies a float dense layer into
// a quantized store.
inline QuantizedDense quantize_dense(const SequentialModel& model, std::size_t index, QuantScheme scheme,
                                     float calib_input_max) {
  const auto& layer = model.layer(index);
  if (layer.kind != LayerKind::Dense || layer.quantized) {
    throw Error(ErrorCode::ShapeMismatch, "only float dense layers can be quantized");
  }
  return quantize_dense(model.arena().span(layer.weights), model.arena().span(layer.biases), layer.inputs(),
                        layer.activation, scheme, calib_input_max);
}

}  // namespace icsml
