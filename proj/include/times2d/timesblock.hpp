#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "times2d/spectral.hpp"
#include "times2d/tensor.hpp"

namespace times2d {

/// How the k per-period outputs are fused.
enum class Aggregation {
  Softmax,       ///< weights = softmax of the selected amplitudes
  DirectSum,     ///< plain sum, every weight 1
  RawAmplitude,  ///< weights = the amplitudes themselves, no softmax
};

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

/// Uniform draw in [0, 1) with 53 random bits; identical on every platform.
double uniform01(std::mt19937_64& rng);
/// Unbiased integer in [0, n).
std::size_t uniform_below(std::mt19937_64& rng, std::size_t n);
/// Tensor with entries uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// Two stacked multi-scale layers of same-padded square convolutions with
/// kernel sizes 1, 3, ..., 2m-1. Branch outputs are averaged within a layer
/// and a GELU sits between the layers.
class InceptionBlock {
 public:
  InceptionBlock(std::size_t channels, std::size_t branches, std::mt19937_64& rng, const std::string& prefix);

  /// x is [B x rows x cols x channels]; output has the same shape.
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

  std::size_t channels() const { return channels_; }
  std::size_t branches() const { return kernels_[0].size(); }

  void collect(std::vector<const Parameter*>& out) const;
  void collect(std::vector<Parameter*>& out);

 private:
  Tensor layer(std::size_t index, const Tensor& x, Tape* tape) const;

  std::size_t channels_;
  // [layer][branch]
  std::vector<Parameter> kernels_[2];
  std::vector<Parameter> biases_[2];
};

/// Per-sample record of one TimesBlock forward pass.
struct BlockTrace {
  std::vector<PeriodSet> periods;
  std::vector<std::vector<double>> weights;
};

struct TimesBlockOptions {
  std::size_t d_model = 16;
  std::size_t k = 3;
  std::size_t branches = 3;
  Aggregation aggregation = Aggregation::Softmax;
  bool layer_norm = true;
};

/// Period discovery, per-period fold, shared inception, truncation and
/// amplitude-weighted fusion, added back onto the input and layer-normalized.
class TimesBlock {
 public:
  TimesBlock(const TimesBlockOptions& options, std::mt19937_64& rng, const std::string& prefix);

  /// x is [B x T x d_model] with T >= 2. Periods are discovered per sample.
  Tensor forward(const Tensor& x, Tape* tape = nullptr, BlockTrace* trace = nullptr) const;

  const TimesBlockOptions& options() const { return options_; }
  std::size_t parameter_count() const;

  void collect(std::vector<const Parameter*>& out) const;
  void collect(std::vector<Parameter*>& out);

 private:
  TimesBlockOptions options_;
  InceptionBlock inception_;
  Parameter gamma_;
  Parameter beta_;
};

}  // namespace times2d
