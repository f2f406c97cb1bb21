#pragma once

#include <cstddef>

#include "times2d/tensor.hpp"

namespace times2d {

/// Layout of a length-T series zero-padded to period * frequency and folded
/// into `period` rows by `frequency` columns. Column c holds time steps
/// [c * period, (c + 1) * period); row r holds the same phase of every period.
struct FoldPlan {
  std::size_t series_length = 0;
  std::size_t period = 0;
  std::size_t frequency = 0;
  std::size_t pad_length = 0;

  /// period = ceil(T / f); requires 1 <= f <= T.
  static FoldPlan make(std::size_t series_length, std::size_t frequency);
  /// Throws ShapeError unless the four fields are mutually consistent.
  void validate() const;
};

/// [T x D] -> [p x f x D], or batched [B x T x D] -> [B x p x f x D].
Tensor fold(const Tensor& x, const FoldPlan& plan);
/// Inverse of fold with the trailing pad positions dropped.
Tensor unfold_truncate(const Tensor& y, const FoldPlan& plan);

}  // namespace times2d
