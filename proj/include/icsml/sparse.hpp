#pragma once

// Zero-skipping kernels for pruned dense layers.
//
// Skipping is driven by a per-row list of nonzero weight columns built once
// when the layer is set up; the dense weight layout is left untouched, so the
// remaining terms are accumulated in their original order and results match
// the dense kernel bit for bit (for finite inputs).

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "icsml/error.hpp"

namespace icsml {

enum class SkipPolicy { NoSkip, SkipZeroWeight, SkipZeroWeightOrInput };

inline constexpr std::string_view skip_policy_name(SkipPolicy p) {
  switch (p) {
    case SkipPolicy::NoSkip: return "none";
    case SkipPolicy::SkipZeroWeight: return "zero_weight";
    case SkipPolicy::SkipZeroWeightOrInput: return "zero_weight_or_input";
  }
  return "?";
}

inline std::optional<SkipPolicy> parse_skip_policy(std::string_view name) {
  for (auto p : {SkipPolicy::NoSkip, SkipPolicy::SkipZeroWeight, SkipPolicy::SkipZeroWeightOrInput}) {
    if (skip_policy_name(p) == name) return p;
  }
  return std::nullopt;
}

class NonzeroIndex {
 public:
  NonzeroIndex() = default;

  template <typename T>
  NonzeroIndex(std::span<const T> weights, std::size_t neurons, std::size_t inputs) : inputs_(inputs) {
    if (weights.size() != neurons * inputs) {
      throw Error(ErrorCode::ShapeMismatch, "weight store does not match neurons x inputs");
    }
    row_ptr_.reserve(neurons + 1);
    row_ptr_.push_back(0);
    for (std::size_t n = 0; n < neurons; ++n) {
      const T* row = weights.data() + n * inputs;
      for (std::size_t i = 0; i < inputs; ++i) {
        if (row[i] != T{0}) cols_.push_back(static_cast<std::uint32_t>(i));
      }
      row_ptr_.push_back(static_cast<std::uint32_t>(cols_.size()));
    }
  }

  std::size_t neurons() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t inputs() const { return inputs_; }
  std::size_t nonzeros() const { return cols_.size(); }

  std::span<const std::uint32_t> row(std::size_t n) const {
    return {cols_.data() + row_ptr_[n], row_ptr_[n + 1] - row_ptr_[n]};
  }

 private:
  std::size_t inputs_ = 0;
  std::vector<std::uint32_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
};

// Sum over the listed columns only. `executed` receives the number of
// multiply-accumulates actually performed.
template <typename Acc, typename T>
Acc sparse_row_dot(const T* row, const T* x, std::span<const std::uint32_t> cols,
                   bool skip_zero_input, std::uint64_t& executed) {
  Acc sum = 0;
  if (skip_zero_input) {
    std::uint64_t done = 0;
    for (auto c : cols) {
      if (x[c] == T{0}) continue;
      sum += static_cast<Acc>(row[c]) * static_cast<Acc>(x[c]);
      ++done;
    }
    executed = done;
  } else {
    for (auto c : cols) sum += static_cast<Acc>(row[c]) * static_cast<Acc>(x[c]);
    executed = cols.size();
  }
  return sum;
}

}  // namespace icsml
