#include "times2d/timesblock.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "times2d/transform2d.hpp"

namespace times2d {

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Softmax: return "softmax";
    case Aggregation::DirectSum: return "direct-sum";
    case Aggregation::RawAmplitude: return "no-softmax";
  }
  return "softmax";
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "softmax") return Aggregation::Softmax;
  if (s == "direct-sum") return Aggregation::DirectSum;
  if (s == "no-softmax") return Aggregation::RawAmplitude;
  throw Error("unknown aggregation '" + s + "' (expected softmax, direct-sum or no-softmax)");
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_below(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw Error("uniform_below: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape.numel());
  for (double& x : v) x = (2.0 * uniform01(rng) - 1.0) * bound;
  return Tensor(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------

InceptionBlock::InceptionBlock(std::size_t channels, std::size_t branches, std::mt19937_64& rng,
                               const std::string& prefix)
    : channels_(channels) {
  if (branches == 0) throw Error("InceptionBlock: at least one branch is required");
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t j = 0; j < branches; ++j) {
      const std::size_t ks = 2 * j + 1;
      const std::size_t fan_in = ks * ks * channels;
      const std::string name = prefix + ".layer" + std::to_string(l) + ".branch" + std::to_string(j);
      kernels_[l].push_back({name + ".kernel", fan_in_uniform(Shape{ks, ks, channels, channels}, fan_in, rng)});
      biases_[l].push_back({name + ".bias", fan_in_uniform(Shape{channels}, fan_in, rng)});
    }
  }
}

// The mean of m same-padded convolutions equals one convolution with the mean
// of the kernels zero-embedded at the largest size; one patch matrix serves all branches.
Tensor InceptionBlock::layer(std::size_t index, const Tensor& x, Tape* tape) const {
  const auto& kernels = kernels_[index];
  const auto& biases = biases_[index];
  const std::size_t size = 2 * kernels.size() - 1;
  Tensor kernel = embed_kernel(bind(tape, kernels[0]), size);
  Tensor bias = bind(tape, biases[0]);
  for (std::size_t j = 1; j < kernels.size(); ++j) {
    kernel = add(kernel, embed_kernel(bind(tape, kernels[j]), size));
    bias = add(bias, bind(tape, biases[j]));
  }
  if (kernels.size() > 1) {
    const double inv = 1.0 / static_cast<double>(kernels.size());
    kernel = scale(kernel, inv);
    bias = scale(bias, inv);
  }
  return conv2d_same(x, kernel, bias);
}

Tensor InceptionBlock::forward(const Tensor& x, Tape* tape) const {
  if (x.shape().rank() != 4 || x.shape()[3] != channels_) {
    throw ShapeError("InceptionBlock: expected [B x rows x cols x " + std::to_string(channels_) + "], got " +
                     x.shape().str());
  }
  return layer(1, gelu(layer(0, x, tape)), tape);
}

void InceptionBlock::collect(std::vector<const Parameter*>& out) const {
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 0; j < kernels_[l].size(); ++j) {
      out.push_back(&kernels_[l][j]);
      out.push_back(&biases_[l][j]);
    }
}

void InceptionBlock::collect(std::vector<Parameter*>& out) {
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 0; j < kernels_[l].size(); ++j) {
      out.push_back(&kernels_[l][j]);
      out.push_back(&biases_[l][j]);
    }
}

// ---------------------------------------------------------------------------

TimesBlock::TimesBlock(const TimesBlockOptions& options, std::mt19937_64& rng, const std::string& prefix)
    : options_(options),
      inception_(options.d_model, options.branches, rng, prefix + ".inception"),
      gamma_{prefix + ".norm.gamma", Tensor::full(Shape{options.d_model}, 1.0)},
      beta_{prefix + ".norm.beta", Tensor::zeros(Shape{options.d_model})} {
  if (options.k == 0) throw Error("TimesBlock: k must be >= 1");
}

Tensor TimesBlock::forward(const Tensor& x, Tape* tape, BlockTrace* trace) const {
  const auto& s = x.shape();
  if (s.rank() != 3 || s[2] != options_.d_model) {
    throw ShapeError("TimesBlock: expected [B x T x " + std::to_string(options_.d_model) + "], got " + s.str());
  }
  const std::size_t B = s[0], T = s[1];
  if (T < 2) throw ShapeError("TimesBlock: series length must be >= 2");

  std::vector<Tensor> samples;
  std::vector<PeriodSet> periods;
  for (std::size_t b = 0; b < B; ++b) {
    samples.push_back(select(x, b));
    periods.push_back(discover_periods(samples.back().matrix(), options_.k));
  }

  // Samples sharing a frequency are folded and convolved together; the
  // kernels are the same for every fold so the grouping changes nothing numerically.
  std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> groups;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < periods[b].size(); ++i) groups[periods[b].entries[i].frequency].emplace_back(b, i);

  std::vector<std::vector<Tensor>> branch_out(B);
  for (std::size_t b = 0; b < B; ++b) branch_out[b].resize(periods[b].size());
  for (const auto& [frequency, members] : groups) {
    const FoldPlan plan = FoldPlan::make(T, frequency);
    std::vector<Tensor> parts;
    for (const auto& m : members) parts.push_back(samples[m.first]);
    Tensor y = unfold_truncate(inception_.forward(fold(stack(parts), plan), tape), plan);
    for (std::size_t j = 0; j < members.size(); ++j) {
      branch_out[members[j].first][members[j].second] = select(y, j);
    }
  }

  std::vector<Tensor> fused;
  for (std::size_t b = 0; b < B; ++b) {
    const auto freqs = periods[b].frequencies();
    Tensor weights;
    switch (options_.aggregation) {
      case Aggregation::Softmax: weights = softmax(amplitudes_at(samples[b], freqs), 0); break;
      case Aggregation::RawAmplitude: weights = amplitudes_at(samples[b], freqs); break;
      case Aggregation::DirectSum: weights = Tensor::full(Shape{freqs.size()}, 1.0); break;
    }
    if (trace) trace->weights.emplace_back(weights.values().begin(), weights.values().end());
    fused.push_back(weighted_sum(branch_out[b], weights));
  }
  if (trace) trace->periods = std::move(periods);

  Tensor out = add(stack(fused), x);
  if (!options_.layer_norm) return out;
  return layer_norm(out, bind(tape, gamma_), bind(tape, beta_));
}

std::size_t TimesBlock::parameter_count() const {
  std::vector<const Parameter*> ps;
  collect(ps);
  std::size_t n = 0;
  for (const Parameter* p : ps) n += p->value.numel();
  return n;
}

void TimesBlock::collect(std::vector<const Parameter*>& out) const {
  inception_.collect(out);
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void TimesBlock::collect(std::vector<Parameter*>& out) {
  inception_.collect(out);
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

}  // namespace times2d
