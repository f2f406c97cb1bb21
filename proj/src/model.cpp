#include "times2d/model.hpp"

#include <cmath>
#include <random>

namespace times2d {

std::string to_string(Task t) {
  switch (t) {
    case Task::Forecast: return "forecast";
    case Task::Impute: return "impute";
    case Task::Classify: return "classify";
    case Task::Reconstruct: return "anomaly";
  }
  return "forecast";
}

Task task_from_string(const std::string& s) {
  if (s == "forecast") return Task::Forecast;
  if (s == "impute") return Task::Impute;
  if (s == "classify") return Task::Classify;
  if (s == "anomaly" || s == "reconstruct") return Task::Reconstruct;
  throw Error("unknown task '" + s + "' (expected forecast, impute, classify or anomaly)");
}

std::size_t select_d_model(std::size_t channels, std::size_t d_min, std::size_t d_max) {
  if (channels == 0) throw Error("select_d_model: channel count must be >= 1");
  if (d_min > d_max) {
    throw Error("select_d_model: d_min " + std::to_string(d_min) + " exceeds d_max " + std::to_string(d_max));
  }
  std::size_t pow2 = 1;
  while (pow2 < channels) pow2 <<= 1;
  return std::min(std::max(pow2, d_min), d_max);
}

// ---------------------------------------------------------------------------
// Series stationarization

Stationarization stationarization_stats(const Tensor& x, const Tensor* observed_mask) {
  if (x.shape().rank() != 3) throw ShapeError("stationarization: expected [B x T x C], got " + x.shape().str());
  if (observed_mask && observed_mask->shape() != x.shape()) {
    throw ShapeError("stationarization: mask " + observed_mask->shape().str() + " does not match " + x.shape().str());
  }
  const std::size_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  auto xv = x.values();
  std::vector<double> mu(B * C, 0.0), sd(B * C, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      double n = 0.0, s = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t i = (b * T + t) * C + c;
        const double w = observed_mask ? (*observed_mask)[i] : 1.0;
        n += w;
        s += w * xv[i];
      }
      if (n == 0.0) {
        throw Error("no observed points in sample " + std::to_string(b) + ", channel " + std::to_string(c));
      }
      const double m = s / n;
      double v = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t i = (b * T + t) * C + c;
        const double w = observed_mask ? (*observed_mask)[i] : 1.0;
        v += w * (xv[i] - m) * (xv[i] - m);
      }
      mu[b * C + c] = m;
      sd[b * C + c] = std::sqrt(v / n + kStationarizationEps);
    }
  }
  return {Tensor(Shape{B, C}, std::move(mu)), Tensor(Shape{B, C}, std::move(sd))};
}

Tensor stationarize(const Tensor& x, const Stationarization& stats) {
  std::vector<double> inv(stats.stdev.numel()), shift(stats.mean.numel());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    inv[i] = 1.0 / stats.stdev[i];
    shift[i] = -stats.mean[i] / stats.stdev[i];
  }
  return channel_affine(x, Tensor(stats.stdev.shape(), std::move(inv)), Tensor(stats.mean.shape(), std::move(shift)));
}

Tensor destationarize(const Tensor& x, const Stationarization& stats) {
  return channel_affine(x, stats.stdev, stats.mean);
}

Tensor positional_encoding(std::size_t length, std::size_t d) {
  std::vector<double> pe(length * d);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      pe[t * d + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor(Shape{length, d}, std::move(pe));
}

// ---------------------------------------------------------------------------
// TimesNet

TimesNet::TimesNet(const ModelConfig& config) : config_(config), d_model_(config.d_model()) {
  if (config_.seq_len < 2) throw Error("TimesNet: seq_len must be >= 2");
  if (config_.task == Task::Forecast && config_.pred_len == 0) throw Error("TimesNet: forecasting needs pred_len >= 1");
  if (config_.task == Task::Classify && config_.n_classes < 2) throw Error("TimesNet: classification needs >= 2 classes");
  if (config_.layers == 0) throw Error("TimesNet: at least one layer is required");

  std::mt19937_64 rng(config_.seed);
  const std::size_t C = config_.channels, d = d_model_, T = config_.seq_len;
  embed_w_ = {"embed.weight", fan_in_uniform(Shape{C, d}, C, rng)};
  embed_b_ = {"embed.bias", fan_in_uniform(Shape{d}, C, rng)};
  position_ = positional_encoding(T, d);
  if (config_.task == Task::Forecast) {
    const std::size_t L = T + config_.pred_len;
    extend_w_ = {"extend.weight", fan_in_uniform(Shape{L, T}, T, rng)};
    extend_b_ = {"extend.bias", fan_in_uniform(Shape{L}, T, rng)};
  }
  const TimesBlockOptions opts{d, config_.k, config_.branches, config_.aggregation, config_.layer_norm};
  for (std::size_t l = 0; l < config_.layers; ++l) blocks_.emplace_back(opts, rng, "blocks." + std::to_string(l));
  if (config_.task == Task::Classify) {
    head_w_ = {"head.weight", fan_in_uniform(Shape{T * d, config_.n_classes}, T * d, rng)};
    head_b_ = {"head.bias", fan_in_uniform(Shape{config_.n_classes}, T * d, rng)};
  } else {
    head_w_ = {"head.weight", fan_in_uniform(Shape{d, C}, d, rng)};
    head_b_ = {"head.bias", fan_in_uniform(Shape{C}, d, rng)};
  }
}

void TimesNet::check_input(const Tensor& x, Task expected) const {
  if (config_.task != expected) {
    throw Error("model was built for task '" + to_string(config_.task) + "', not '" + to_string(expected) + "'");
  }
  const auto& s = x.shape();
  if (s.rank() != 3) throw ShapeError("expected input [B x T x C], got " + s.str());
  if (s[1] != config_.seq_len) {
    throw ShapeError("input length " + std::to_string(s[1]) + " does not match configured length " +
                     std::to_string(config_.seq_len));
  }
  if (s[2] != config_.channels) {
    throw ShapeError("input has " + std::to_string(s[2]) + " channels, model expects " + std::to_string(config_.channels));
  }
}

Tensor TimesNet::embed(const Tensor& x, Tape* tape) const {
  return add(linear(x, bind(tape, embed_w_), bind(tape, embed_b_)), position_);
}

Tensor TimesNet::run_blocks(Tensor h, Tape* tape, ForwardTrace* trace) const {
  for (const TimesBlock& block : blocks_) {
    BlockTrace bt;
    h = block.forward(h, tape, trace ? &bt : nullptr);
    if (trace) {
      trace->blocks.push_back(std::move(bt));
      trace->layer_outputs.push_back(h);
    }
  }
  return h;
}

Tensor TimesNet::project(const Tensor& h, Tape* tape) const { return linear(h, bind(tape, head_w_), bind(tape, head_b_)); }

Tensor TimesNet::forecast(const Tensor& x, Tape* tape, ForwardTrace* trace) const {
  check_input(x, Task::Forecast);
  const Stationarization stats = stationarization_stats(x);
  Tensor h = embed(stationarize(x, stats), tape);
  h = temporal_linear(h, bind(tape, extend_w_), bind(tape, extend_b_));
  h = run_blocks(std::move(h), tape, trace);
  Tensor y = destationarize(project(h, tape), stats);
  return slice(y, 1, config_.seq_len, config_.pred_len);
}

Tensor TimesNet::impute(const Tensor& x, const Tensor& mask, Tape* tape, ForwardTrace* trace) const {
  check_input(x, Task::Impute);
  const Stationarization stats = stationarization_stats(x, &mask);
  Tensor normed = mul(stationarize(x, stats), mask);
  Tensor h = run_blocks(embed(normed, tape), tape, trace);
  Tensor y = destationarize(project(h, tape), stats);
  return blend(x, y, mask);
}

Tensor TimesNet::classify(const Tensor& x, Tape* tape, ForwardTrace* trace) const {
  check_input(x, Task::Classify);
  Tensor h = run_blocks(embed(x, tape), tape, trace);
  const std::size_t B = x.shape()[0];
  return linear(reshape(h, Shape{B, config_.seq_len * d_model_}), bind(tape, head_w_), bind(tape, head_b_));
}

Tensor TimesNet::reconstruct(const Tensor& x, Tape* tape, ForwardTrace* trace) const {
  check_input(x, Task::Reconstruct);
  const Stationarization stats = stationarization_stats(x);
  Tensor h = run_blocks(embed(stationarize(x, stats), tape), tape, trace);
  return destationarize(project(h, tape), stats);
}

std::vector<const Parameter*> TimesNet::parameters() const {
  std::vector<const Parameter*> out{&embed_w_, &embed_b_};
  if (config_.task == Task::Forecast) {
    out.push_back(&extend_w_);
    out.push_back(&extend_b_);
  }
  for (const TimesBlock& b : blocks_) b.collect(out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<Parameter*> TimesNet::parameters() {
  std::vector<Parameter*> out{&embed_w_, &embed_b_};
  if (config_.task == Task::Forecast) {
    out.push_back(&extend_w_);
    out.push_back(&extend_b_);
  }
  for (TimesBlock& b : blocks_) b.collect(out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

Parameter& TimesNet::parameter(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return *p;
  throw Error("no parameter named '" + name + "'");
}

std::size_t TimesNet::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.numel();
  return n;
}

}  // namespace times2d
