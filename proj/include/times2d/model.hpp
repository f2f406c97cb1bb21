#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "times2d/tensor.hpp"
#include "times2d/timesblock.hpp"

namespace times2d {

enum class Task { Forecast, Impute, Classify, Reconstruct };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

/// min(max(2^ceil(log2 C), d_min), d_max).
std::size_t select_d_model(std::size_t channels, std::size_t d_min, std::size_t d_max);

struct ModelConfig {
  Task task = Task::Forecast;
  std::size_t seq_len = 96;
  std::size_t pred_len = 0;   // forecast only
  std::size_t channels = 1;
  std::size_t n_classes = 2;  // classify only
  std::size_t k = 5;
  std::size_t layers = 2;
  std::size_t d_min = 32;
  std::size_t d_max = 512;
  std::size_t branches = 3;
  Aggregation aggregation = Aggregation::Softmax;
  bool layer_norm = true;
  std::uint64_t seed = 0;

  std::size_t d_model() const { return select_d_model(channels, d_min, d_max); }
};

/// Per-sample, per-channel location and scale; both tensors are [B x C].
struct Stationarization {
  Tensor mean;
  Tensor stdev;
};

constexpr double kStationarizationEps = 1e-5;

/// Statistics over the time axis of x[B x T x C]; with a mask only entries
/// where mask == 1 count. stdev = sqrt(var + eps).
Stationarization stationarization_stats(const Tensor& x, const Tensor* observed_mask = nullptr);
Tensor stationarize(const Tensor& x, const Stationarization& stats);
Tensor destationarize(const Tensor& x, const Stationarization& stats);

/// Fixed sinusoidal position table [length x d].
Tensor positional_encoding(std::size_t length, std::size_t d);

/// Intermediate values captured during a forward pass.
struct ForwardTrace {
  std::vector<Tensor> layer_outputs;
  std::vector<BlockTrace> blocks;
};

class TimesNet {
 public:
  explicit TimesNet(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t d_model() const { return d_model_; }

  /// x [B x T x C] -> [B x H x C].
  Tensor forecast(const Tensor& x, Tape* tape = nullptr, ForwardTrace* trace = nullptr) const;
  /// mask is 1 where observed. Returns the full series with observed points copied from x.
  Tensor impute(const Tensor& x, const Tensor& mask, Tape* tape = nullptr, ForwardTrace* trace = nullptr) const;
  /// x [B x T x C] -> logits [B x n_classes].
  Tensor classify(const Tensor& x, Tape* tape = nullptr, ForwardTrace* trace = nullptr) const;
  /// x [B x T x C] -> [B x T x C].
  Tensor reconstruct(const Tensor& x, Tape* tape = nullptr, ForwardTrace* trace = nullptr) const;

  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> parameters();
  Parameter& parameter(const std::string& name);
  std::size_t parameter_count() const;
  const std::vector<TimesBlock>& blocks() const { return blocks_; }

 private:
  void check_input(const Tensor& x, Task expected) const;
  Tensor embed(const Tensor& x, Tape* tape) const;
  Tensor run_blocks(Tensor h, Tape* tape, ForwardTrace* trace) const;
  Tensor project(const Tensor& h, Tape* tape) const;

  ModelConfig config_;
  std::size_t d_model_;
  Parameter embed_w_;
  Parameter embed_b_;
  Tensor position_;  // [T (+H) x d]
  Parameter extend_w_;
  Parameter extend_b_;
  std::vector<TimesBlock> blocks_;
  Parameter head_w_;
  Parameter head_b_;
};

}  // namespace times2d
