#pragma once

// Amplitude spectra and top-k period discovery.

#include <cstddef>
#include <string>
#include <vector>

#include "times2d/tensor.hpp"

namespace times2d {

/// Channel-averaged DFT magnitudes for bins 0..floor(T/2).
struct AmplitudeSpectrum {
  std::vector<double> amplitudes;
  std::size_t series_length = 0;
};

struct PeriodEntry {
  std::size_t frequency = 0;
  std::size_t period = 0;
  double amplitude = 0.0;

  bool operator==(const PeriodEntry&) const = default;
};

/// Selected frequencies, strongest first; equal amplitudes order by lower frequency.
struct PeriodSet {
  std::vector<PeriodEntry> entries;
  std::size_t series_length = 0;

  std::size_t size() const { return entries.size(); }
  std::vector<std::size_t> frequencies() const;
  std::vector<std::size_t> periods() const;
};

/// x is [T x C] with T >= 2.
AmplitudeSpectrum rfft_amplitude(const Eigen::Ref<const RowMatrix>& x);
AmplitudeSpectrum rfft_amplitude(const Tensor& x);

/// The min(k, floor(T/2)) strongest non-DC frequencies with period ceil(T / f).
PeriodSet discover_periods(const Eigen::Ref<const RowMatrix>& x, std::size_t k);
PeriodSet discover_periods(const Tensor& x, std::size_t k);
PeriodSet select_top_frequencies(const AmplitudeSpectrum& spectrum, std::size_t k);

/// Differentiable channel-averaged |DFT| of x[T x D] at the given bins; shape [k].
/// A bin whose magnitude is exactly zero for some channel contributes zero gradient.
Tensor amplitudes_at(const Tensor& x, const std::vector<std::size_t>& frequencies);

}  // namespace times2d
