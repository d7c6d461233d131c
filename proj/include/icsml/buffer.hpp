#pragma once

// Static memory arena and dimension-tagged views into it.
//
// Every float buffer a model needs (weights, biases, layer outputs, input
// slot) is carved out of one Arena at build time by bump allocation. There
// is no free operation: once a model is built the arena high-water mark is
// frozen and inference touches only memory that already exists.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icsml/error.hpp"

namespace icsml {

inline constexpr std::size_t kMaxDims = 4;

// Offset + length + extents over an Arena. Address is an element index.
struct BufferView {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::array<std::uint32_t, kMaxDims> dimensions{};
  std::size_t dimensions_num = 0;

  std::span<const std::uint32_t> dims() const { return {dimensions.data(), dimensions_num}; }
  std::size_t end() const { return offset + length; }
  bool empty() const { return length == 0; }

  friend bool operator==(const BufferView&, const BufferView&) = default;
};

class Arena {
 public:
  explicit Arena(std::size_t capacity) : data_(capacity, 0.0f) {}

  Arena(Arena&&) noexcept = default;
  Arena& operator=(Arena&&) noexcept = default;
  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;

  std::size_t capacity() const { return data_.size(); }
  std::size_t high_water() const { return high_water_; }
  std::size_t remaining() const { return data_.size() - high_water_; }

  BufferView allocate(std::span<const std::uint32_t> dimensions) {
    if (dimensions.empty() || dimensions.size() > kMaxDims) {
      throw Error(ErrorCode::ShapeMismatch,
                  "view needs between 1 and " + std::to_string(kMaxDims) + " dimensions");
    }
    std::size_t length = 1;
    for (auto extent : dimensions) {
      if (extent == 0) throw Error(ErrorCode::ShapeMismatch, "zero extent");
      length *= extent;
    }
    if (length > remaining()) {
      throw Error(ErrorCode::CapacityExceeded,
                  "requested " + std::to_string(length) + " elements, " +
                      std::to_string(remaining()) + " of " + std::to_string(capacity()) +
                      " left");
    }
    BufferView view;
    view.offset = high_water_;
    view.length = length;
    view.dimensions_num = dimensions.size();
    std::copy(dimensions.begin(), dimensions.end(), view.dimensions.begin());
    std::fill_n(data_.begin() + static_cast<std::ptrdiff_t>(view.offset), length, 0.0f);
    high_water_ += length;
    return view;
  }

  BufferView allocate(std::initializer_list<std::uint32_t> dimensions) {
    return allocate(std::span<const std::uint32_t>(dimensions.begin(), dimensions.size()));
  }

  std::span<float> span(const BufferView& view) {
    return {data_.data() + view.offset, view.length};
  }
  std::span<const float> span(const BufferView& view) const {
    return {data_.data() + view.offset, view.length};
  }

  std::span<const float> data() const { return data_; }

 private:
  std::vector<float> data_;
  std::size_t high_water_ = 0;
};

inline BufferView allocate_view(Arena& arena, std::span<const std::uint32_t> dimensions) {
  return arena.allocate(dimensions);
}

inline BufferView allocate_view(Arena& arena, std::initializer_list<std::uint32_t> dimensions) {
  return arena.allocate(dimensions);
}

// Row-major linear index of coords within the view.
inline std::size_t flat_index(const BufferView& view, std::span<const std::size_t> coords) {
  if (coords.size() != view.dimensions_num) {
    throw Error(ErrorCode::IndexOutOfBounds,
                "expected " + std::to_string(view.dimensions_num) + " coordinates, got " +
                    std::to_string(coords.size()));
  }
  std::size_t index = 0;
  for (std::size_t d = 0; d < coords.size(); ++d) {
    if (coords[d] >= view.dimensions[d]) {
      throw Error(ErrorCode::IndexOutOfBounds,
                  "coordinate " + std::to_string(coords[d]) + " out of extent " +
                      std::to_string(view.dimensions[d]) + " on axis " + std::to_string(d));
    }
    index = index * view.dimensions[d] + coords[d];
  }
  return index;
}

inline std::size_t flat_index(const BufferView& view, std::initializer_list<std::size_t> coords) {
  return flat_index(view, std::span<const std::size_t>(coords.begin(), coords.size()));
}

struct PlanEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct MemoryPlan {
  std::vector<PlanEntry> entries;
  std::size_t total_elements = 0;
  std::size_t total_bytes = 0;
};

using NamedExtents = std::pair<std::string, std::vector<std::uint32_t>>;

// Lays out named buffers back to back in declaration order.
inline MemoryPlan plan_memory(std::span<const NamedExtents> layer_dims) {
  if (layer_dims.empty()) throw Error(ErrorCode::EmptyVector, "memory plan needs at least one buffer");
  MemoryPlan plan;
  plan.entries.reserve(layer_dims.size());
  for (const auto& [name, extents] : layer_dims) {
    if (extents.empty()) throw Error(ErrorCode::ShapeMismatch, name + ": no extents");
    std::size_t length = 1;
    for (auto e : extents) length *= e;
    plan.entries.push_back({name, plan.total_elements, length});
    plan.total_elements += length;
  }
  plan.total_bytes = plan.total_elements * sizeof(float);
  return plan;
}

inline MemoryPlan plan_memory(std::initializer_list<NamedExtents> layer_dims) {
  return plan_memory(std::span<const NamedExtents>(layer_dims.begin(), layer_dims.size()));
}

}  // namespace icsml
