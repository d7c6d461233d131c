#pragma once

// Soft-PLC scan-cycle simulator and multipart inference.
//
// A scan cycle latches every input channel once, runs the task list in
// order against that snapshot, then writes the outputs once. Time inside the
// simulator is virtual: tasks charge their modeled cost in microseconds and a
// cycle whose charges exceed the period is flagged as an overrun (it is not
// aborted).

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icsml/error.hpp"
#include "icsml/layers.hpp"

namespace icsml {

struct ScanConfig {
  double period_us = 100'000.0;
  std::size_t input_width = 0;
  std::size_t output_width = 0;
};

struct ScanCycleState {
  std::uint64_t cycle_index = 0;  // index of the cycle that produced this state
  std::vector<float> inputs;
  std::vector<float> outputs;
  double elapsed_virtual_us = 0.0;
  bool overrun = false;
};

class TaskContext {
 public:
  TaskContext(std::uint64_t cycle, std::span<const float> inputs, std::span<float> outputs, double& elapsed)
      : cycle_(cycle), inputs_(inputs), outputs_(outputs), elapsed_(&elapsed) {}

  std::uint64_t cycle_index() const { return cycle_; }
  std::span<const float> inputs() const { return inputs_; }
  std::span<float> outputs() const { return outputs_; }
  void charge(double us) { *elapsed_ += us; }

 private:
  std::uint64_t cycle_;
  std::span<const float> inputs_;
  std::span<float> outputs_;
  double* elapsed_;
};

struct Task {
  std::string name;
  std::function<void(TaskContext&)> run;
};

using InputSource = std::function<void(std::uint64_t cycle, std::span<float> inputs)>;
using OutputSink = std::function<void(std::uint64_t cycle, std::span<const float> outputs)>;

class ScanRuntime {
 public:
  explicit ScanRuntime(ScanConfig config) : config_(config) {
    if (!(config.period_us > 0.0)) throw Error(ErrorCode::ShapeMismatch, "scan period must be positive");
    state_.inputs.assign(config.input_width, 0.0f);
    state_.outputs.assign(config.output_width, 0.0f);
  }

  // Read inputs -> run tasks in order -> write outputs. Output channels hold
  // their last written value across cycles.
  const ScanCycleState& run_cycle(const InputSource& read, std::span<Task> tasks, const OutputSink& write) {
    state_.cycle_index = next_cycle_;
    state_.elapsed_virtual_us = 0.0;
    if (read) read(next_cycle_, state_.inputs);
    TaskContext ctx(next_cycle_, state_.inputs, state_.outputs, state_.elapsed_virtual_us);
    for (auto& task : tasks) {
      try {
        task.run(ctx);
      } catch (const std::exception& e) {
        throw Error(ErrorCode::TaskFault,
                    "cycle " + std::to_string(next_cycle_) + ", task '" + task.name + "': " + e.what());
      }
    }
    state_.overrun = state_.elapsed_virtual_us > config_.period_us;
    if (state_.overrun) ++overruns_;
    if (write) write(next_cycle_, state_.outputs);
    ++next_cycle_;
    return state_;
  }

  const ScanConfig& config() const { return config_; }
  const ScanCycleState& state() const { return state_; }
  std::uint64_t cycles_run() const { return next_cycle_; }
  std::uint64_t overruns() const { return overruns_; }

 private:
  ScanConfig config_;
  ScanCycleState state_;
  std::uint64_t next_cycle_ = 0;
  std::uint64_t overruns_ = 0;
};

// ---------------------------------------------------------------------------
// Multipart inference

// Modeled execution cost. Costs are converted to integer nanoseconds so that
// plan arithmetic is exact.
struct CostModel {
  double mac_us = 0.001;       // one multiply-accumulate in a dense row
  double row_us = 0.0;         // fixed cost per dense row
  double element_us = 0.0005;  // per element written by a non-dense layer
  double layer_us = 0.0;       // fixed cost per non-dense layer

  static std::int64_t to_ns(double us) { return std::llround(us * 1000.0); }

  std::int64_t unit_cost_ns(const LayerSpec& layer) const {
    if (layer.kind == LayerKind::Dense) return to_ns(row_us + mac_us * static_cast<double>(layer.inputs()));
    return to_ns(layer_us + element_us * static_cast<double>(layer.output_view.length));
  }

  std::int64_t layer_cost_ns(const LayerSpec& layer) const {
    return unit_cost_ns(layer) * static_cast<std::int64_t>(layer.units());
  }
};

struct WorkSlice {
  std::size_t layer = 0;
  std::size_t begin = 0;  // first unit (row) of the slice
  std::size_t end = 0;    // one past the last unit

  friend bool operator==(const WorkSlice&, const WorkSlice&) = default;
};

struct WorkChunk {
  std::vector<WorkSlice> slices;
  std::int64_t cost_ns = 0;
};

struct MultipartPlan {
  std::vector<WorkChunk> chunks;
  std::int64_t budget_ns = 0;
  std::int64_t total_cost_ns = 0;

  std::size_t latency_cycles() const { return chunks.size(); }
};

// Greedy packing of layer units into per-cycle chunks, in evaluation order.
inline MultipartPlan plan_multipart(const SequentialModel& model, const CostModel& cost, double budget_us) {
  MultipartPlan plan;
  plan.budget_ns = CostModel::to_ns(budget_us);
  if (plan.budget_ns <= 0) throw Error(ErrorCode::InfeasibleBudget, "budget must be positive");
  WorkChunk current;
  for (std::size_t i = 0; i < model.layers_num(); ++i) {
    const LayerSpec& layer = model.layer(i);
    const std::int64_t unit = cost.unit_cost_ns(layer);
    if (unit <= 0) throw Error(ErrorCode::InfeasibleBudget, "cost model must be positive for layer '" + layer.name + "'");
    if (unit > plan.budget_ns) {
      throw Error(ErrorCode::InfeasibleBudget, "one unit of layer '" + layer.name + "' costs " +
                                                   std::to_string(unit) + " ns, budget is " +
                                                   std::to_string(plan.budget_ns) + " ns");
    }
    std::size_t row = 0;
    const std::size_t units = layer.units();
    while (row < units) {
      const std::int64_t room = plan.budget_ns - current.cost_ns;
      auto fit = static_cast<std::size_t>(room / unit);
      if (fit == 0) {
        plan.chunks.push_back(std::move(current));
        current = {};
        continue;
      }
      fit = std::min(fit, units - row);
      current.slices.push_back({i, row, row + fit});
      current.cost_ns += unit * static_cast<std::int64_t>(fit);
      plan.total_cost_ns += unit * static_cast<std::int64_t>(fit);
      row += fit;
    }
  }
  if (!current.slices.empty()) plan.chunks.push_back(std::move(current));
  return plan;
}

struct InferenceCheckpoint {
  std::size_t next_layer = 0;
  std::size_t next_row = 0;
  std::size_t parts_done = 0;
  bool complete = false;
  std::uint64_t input_generation = 0;  // model input generation latched at start

  friend bool operator==(const InferenceCheckpoint&, const InferenceCheckpoint&) = default;
};

inline InferenceCheckpoint begin_multipart(const SequentialModel& model) {
  InferenceCheckpoint cp;
  cp.input_generation = model.input_generation();
  return cp;
}

// Executes exactly chunk `chunk_index` of the plan.
inline InferenceCheckpoint multipart_step(SequentialModel& model, InferenceCheckpoint checkpoint,
                                          const MultipartPlan& plan, std::size_t chunk_index) {
  if (!model.sealed()) model.seal();
  if (model.input_generation() != checkpoint.input_generation) {
    throw Error(ErrorCode::StaleInput, "model input was replaced after the inference started");
  }
  if (checkpoint.complete || chunk_index != checkpoint.parts_done || chunk_index >= plan.chunks.size()) {
    throw Error(ErrorCode::IndexOutOfBounds, "chunk " + std::to_string(chunk_index) + " does not follow checkpoint");
  }
  const WorkChunk& chunk = plan.chunks[chunk_index];
  const WorkSlice& first = chunk.slices.front();
  if (first.layer != checkpoint.next_layer || first.begin != checkpoint.next_row) {
    throw Error(ErrorCode::IndexOutOfBounds, "plan position does not match checkpoint");
  }
  for (const auto& slice : chunk.slices) model.evaluate_units(slice.layer, slice.begin, slice.end);

  const WorkSlice& last = chunk.slices.back();
  if (last.end == model.layer(last.layer).units()) {
    checkpoint.next_layer = last.layer + 1;
    checkpoint.next_row = 0;
  } else {
    checkpoint.next_layer = last.layer;
    checkpoint.next_row = last.end;
  }
  ++checkpoint.parts_done;
  checkpoint.complete = checkpoint.next_layer == model.layers_num();
  return checkpoint;
}

// Drives one inference at a time across cycles. The model input slot acts
// as the frozen snapshot: it is written only by start().
class MultipartInference {
 public:
  MultipartInference(MultipartPlan plan) : plan_(std::move(plan)) {}

  bool busy() const { return busy_; }
  const MultipartPlan& plan() const { return plan_; }
  const InferenceCheckpoint& checkpoint() const { return checkpoint_; }

  void start(SequentialModel& model, std::span<const float> input) {
    model.set_input(input);
    checkpoint_ = begin_multipart(model);
    busy_ = true;
  }

  // Runs the next chunk; returns true when this call completed the inference.
  bool step(SequentialModel& model) {
    if (!busy_) return false;
    const std::size_t chunk = checkpoint_.parts_done;
    checkpoint_ = multipart_step(model, checkpoint_, plan_, chunk);
    last_cost_ns_ = plan_.chunks[chunk].cost_ns;
    if (checkpoint_.complete) busy_ = false;
    return checkpoint_.complete;
  }

  std::int64_t last_chunk_cost_ns() const { return last_cost_ns_; }

 private:
  MultipartPlan plan_;
  InferenceCheckpoint checkpoint_;
  bool busy_ = false;
  std::int64_t last_cost_ns_ = 0;
};

}  // namespace icsml
