#include "times2d/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "times2d/fft.hpp"

namespace times2d {

std::vector<std::size_t> PeriodSet::frequencies() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) out.push_back(e.frequency);
  return out;
}

std::vector<std::size_t> PeriodSet::periods() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) out.push_back(e.period);
  return out;
}

AmplitudeSpectrum rfft_amplitude(const Eigen::Ref<const RowMatrix>& x) {
  const auto T = static_cast<std::size_t>(x.rows());
  const auto C = static_cast<std::size_t>(x.cols());
  if (T < 2) throw ShapeError("rfft_amplitude: series length must be >= 2, got " + std::to_string(T));
  AmplitudeSpectrum out;
  out.series_length = T;
  out.amplitudes.assign(T / 2 + 1, 0.0);
  std::vector<double> column(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) column[t] = x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
    const auto bins = fft::rfft<double>(column);
    for (std::size_t j = 0; j < bins.size(); ++j) out.amplitudes[j] += std::abs(bins[j]);
  }
  for (double& a : out.amplitudes) a /= static_cast<double>(C);
  return out;
}

AmplitudeSpectrum rfft_amplitude(const Tensor& x) {
  if (x.shape().rank() != 2) throw ShapeError("rfft_amplitude: expected [T x C], got " + x.shape().str());
  return rfft_amplitude(x.matrix());
}

PeriodSet select_top_frequencies(const AmplitudeSpectrum& spectrum, std::size_t k) {
  if (k == 0) throw ShapeError("discover_periods: k must be >= 1");
  const std::size_t T = spectrum.series_length;
  const std::size_t candidates = T / 2;
  std::vector<std::size_t> order(candidates);
  std::iota(order.begin(), order.end(), std::size_t{1});
  // DC never competes; stable sort keeps the lower frequency first on ties.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spectrum.amplitudes[a] > spectrum.amplitudes[b];
  });
  PeriodSet set;
  set.series_length = T;
  for (std::size_t i = 0; i < std::min(k, candidates); ++i) {
    const std::size_t f = order[i];
    set.entries.push_back({f, (T + f - 1) / f, spectrum.amplitudes[f]});
  }
  return set;
}

PeriodSet discover_periods(const Eigen::Ref<const RowMatrix>& x, std::size_t k) {
  return select_top_frequencies(rfft_amplitude(x), k);
}

PeriodSet discover_periods(const Tensor& x, std::size_t k) {
  return select_top_frequencies(rfft_amplitude(x), k);
}

Tensor amplitudes_at(const Tensor& x, const std::vector<std::size_t>& frequencies) {
  if (x.shape().rank() != 2) throw ShapeError("amplitudes_at: expected [T x D], got " + x.shape().str());
  const std::size_t T = x.shape()[0], D = x.shape()[1], K = frequencies.size();
  auto xv = x.values();
  // Per (bin, channel) real and imaginary parts, kept for the backward pass.
  auto re = std::make_shared<std::vector<double>>(K * D, 0.0);
  auto im = std::make_shared<std::vector<double>>(K * D, 0.0);
  std::vector<double> out(K, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(frequencies[i]) / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      const double c = std::cos(w * static_cast<double>(t));
      const double s = std::sin(w * static_cast<double>(t));
      for (std::size_t d = 0; d < D; ++d) {
        (*re)[i * D + d] += xv[t * D + d] * c;
        (*im)[i * D + d] -= xv[t * D + d] * s;
      }
    }
    for (std::size_t d = 0; d < D; ++d) out[i] += std::hypot((*re)[i * D + d], (*im)[i * D + d]);
    out[i] /= static_cast<double>(D);
  }
  Tensor result(Shape{K}, std::move(out));
  check_finite("amplitudes_at", result.values());
  if (!x.tracked()) return result;
  return x.tape()->record("amplitudes_at", std::move(result), {x.node()},
                          [x, frequencies, re, im, T, D, K](std::span<const double> g, Tape& tape) {
                            auto gx = tape.grad(x.node());
                            for (std::size_t i = 0; i < K; ++i) {
                              const double w = 2.0 * std::numbers::pi * static_cast<double>(frequencies[i]) / static_cast<double>(T);
                              for (std::size_t d = 0; d < D; ++d) {
                                const double r = (*re)[i * D + d], m = (*im)[i * D + d];
                                const double mag = std::hypot(r, m);
                                if (mag == 0.0) continue;
                                const double scale = g[i] / (static_cast<double>(D) * mag);
                                for (std::size_t t = 0; t < T; ++t) {
                                  const double c = std::cos(w * static_cast<double>(t));
                                  const double s = std::sin(w * static_cast<double>(t));
                                  gx[t * D + d] += scale * (r * c - m * s);
                                }
                              }
                            }
                          });
}

}  // namespace times2d
