#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrlab/linalg.hpp"

namespace lrlab {

enum class TaskKind { Regression, Classification };

/// In-memory dataset. Inputs are stored one sample per row.
struct Dataset {
  Matrix inputs;                      // n x d
  Matrix targets;                     // n x m, regression only
  std::vector<std::uint32_t> labels;  // classification only
  std::size_t class_count = 0;
  TaskKind kind = TaskKind::Regression;
  std::string digest;  // sha256 of raw files or of the generator parameters

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t input_dim() const noexcept { return inputs.cols(); }

  /// Throws std::invalid_argument if the invariants do not hold.
  void validate() const;

  /// Copies the listed rows (in order) into a new dataset.
  Dataset subset(std::span<const std::size_t> indices) const;

  Vector input(std::size_t i) const { return Vector(inputs.row(i).begin(), inputs.row(i).end()); }
};

}  // namespace lrlab
