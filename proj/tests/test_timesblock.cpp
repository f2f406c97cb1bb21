#include <doctest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "times2d/spectral.hpp"
#include "times2d/timesblock.hpp"
#include "times2d/transform2d.hpp"

using namespace times2d;

namespace {

constexpr double kPi = std::numbers::pi;

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / kPi) * (x + 0.044715 * x * x * x)));
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<Parameter*> params_of(InceptionBlock& block) {
  std::vector<Parameter*> ps;
  block.collect(ps);
  return ps;
}

std::vector<Parameter*> params_of(TimesBlock& block) {
  std::vector<Parameter*> ps;
  block.collect(ps);
  return ps;
}

void zero_all(const std::vector<Parameter*>& ps) {
  for (Parameter* p : ps) p->value = Tensor::zeros(p->value.shape());
}

// Multi-tone signal of shape [B x T x d]; every channel carries the same tones with its own phase.
Tensor tones(std::size_t B, std::size_t T, std::size_t d, const std::vector<std::pair<double, double>>& freq_amp,
             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  std::vector<double> v(B * T * d, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < d; ++c)
      for (const auto& [f, a] : freq_amp) {
        const double ph = phase(rng);
        for (std::size_t t = 0; t < T; ++t) v[(b * T + t) * d + c] += a * std::sin(2.0 * kPi * f * t / T + ph);
      }
  return Tensor(Shape{B, T, d}, std::move(v));
}

// Composition oracle: per-sample period discovery, fold, shared inception,
// truncate, softmax over amplitudes, residual and layer norm.
Tensor reference_block(const Tensor& x, const InceptionBlock& inception, std::size_t k) {
  const std::size_t B = x.shape()[0], T = x.shape()[1], d = x.shape()[2];
  std::vector<Tensor> outs;
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor xb = select(x, b);
    const auto spectrum = rfft_amplitude(xb);
    const PeriodSet ps = discover_periods(xb, k);
    double mx = -1.0;
    for (const auto& e : ps.entries) mx = std::max(mx, spectrum.amplitudes[e.frequency]);
    std::vector<double> w;
    double z = 0.0;
    for (const auto& e : ps.entries) {
      w.push_back(std::exp(spectrum.amplitudes[e.frequency] - mx));
      z += w.back();
    }
    std::vector<double> acc(T * d, 0.0);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const FoldPlan plan = FoldPlan::make(T, ps.entries[i].frequency);
      const Tensor folded = fold(xb, plan);
      const Tensor y = unfold_truncate(
          reshape(inception.forward(reshape(folded, Shape{1, plan.period, plan.frequency, d})),
                  Shape{plan.period, plan.frequency, d}),
          plan);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w[i] / z * y[j];
    }
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += xb[j];
    outs.push_back(Tensor(Shape{T, d}, std::move(acc)));
  }
  return layer_norm(stack(outs), Tensor::full(Shape{d}, 1.0), Tensor::zeros(Shape{d}));
}

}  // namespace

TEST_CASE("uniform_below and uniform01") {
  std::mt19937_64 rng(40);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[uniform_below(rng, 7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(rng);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK_THROWS_AS(uniform_below(rng, 0), Error);
}

TEST_CASE("inception block examples") {
  std::mt19937_64 rng(41);
  const Tensor x = support::random_tensor(Shape{2, 4, 3, 3}, rng);

  InceptionBlock id(3, 1, rng, "inc");
  const Tensor eye(Shape{1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  for (Parameter* p : params_of(id)) p->value = p->name.ends_with("kernel") ? eye : Tensor::zeros(Shape{3});
  const Tensor g = id.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g[i] == gelu_ref(x[i]));

  InceptionBlock zero(3, 3, rng, "inc");
  zero_all(params_of(zero));
  const Tensor z = zero.forward(x);
  for (double v : z.values()) CHECK(v == 0.0);

  InceptionBlock shape(3, 3, rng, "inc");
  CHECK(shape.forward(x).shape() == x.shape());
  CHECK_THROWS_AS(shape.forward(support::random_tensor(Shape{1, 4, 3, 2}, rng)), ShapeError);
  CHECK_THROWS_AS(InceptionBlock(3, 0, rng, "inc"), Error);
}

TEST_CASE("two-branch inception equals the naive convolution composition") {
  std::mt19937_64 rng(42);
  InceptionBlock block(2, 2, rng, "inc");
  const auto ps = params_of(block);
  REQUIRE(ps.size() == 8);
  CHECK(ps[0]->name == "inc.layer0.branch0.kernel");
  CHECK(ps[2]->value.shape() == Shape{3, 3, 2, 2});
  // non-zero biases exercise the bias averaging
  for (Parameter* p : ps) p->value = support::random_tensor(p->value.shape(), rng, -1.0, 1.0);

  const support::ConvShape s1{1, 4, 3, 2, 2, 1}, s3{1, 4, 3, 2, 2, 3};
  const Tensor x = support::random_tensor(Shape{1, 4, 3, 2}, rng);
  auto layer = [&](const std::vector<double>& in, std::size_t l) {
    const auto a = support::naive_conv(in, flat(ps[4 * l]->value), flat(ps[4 * l + 1]->value), s1);
    const auto b = support::naive_conv(in, flat(ps[4 * l + 2]->value), flat(ps[4 * l + 3]->value), s3);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
    return out;
  };
  auto h = layer(flat(x), 0);
  for (double& v : h) v = gelu_ref(v);
  const auto expect = layer(h, 1);
  const Tensor got = block.forward(x);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(got[i] - expect[i]) < 1e-12);

  const auto r = support::check_parameter_gradients(
      ps, [&](Tape* t) { return support::random_projection(block.forward(x, t), 9); }, rng, 20);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("zero inception reduces the block to layer_norm(x)") {
  std::mt19937_64 rng(43);
  TimesBlock block({.d_model = 4, .k = 3, .branches = 3}, rng, "b");
  zero_all(params_of(block));
  auto ps = params_of(block);
  for (Parameter* p : ps) {
    if (p->name.ends_with("gamma")) p->value = Tensor::full(Shape{4}, 1.0);
  }
  const Tensor x = support::random_tensor(Shape{2, 20, 4}, rng);
  const Tensor expect = layer_norm(x, Tensor::full(Shape{4}, 1.0), Tensor::zeros(Shape{4}));
  const Tensor got = block.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(got[i] == expect[i]);
}

TEST_CASE("block output equals the composition oracle") {
  for (std::size_t k : {1u, 3u}) {
    std::mt19937_64 a(44), b(44), rng(45);
    TimesBlock block({.d_model = 4, .k = k, .branches = 3}, a, "b");
    InceptionBlock inception(4, 3, b, "b.inception");
    const Tensor x = support::random_tensor(Shape{3, 18, 4}, rng);
    BlockTrace trace;
    const Tensor got = block.forward(x, nullptr, &trace);
    const Tensor expect = reference_block(x, inception, k);
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - expect[i]) < 1e-12);
    REQUIRE(trace.weights.size() == 3);
    for (const auto& w : trace.weights) {
      CHECK(w.size() == k);
      double s = 0.0;
      for (double v : w) {
        CHECK(v > 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
      if (k == 1) CHECK(w[0] == 1.0);
    }
  }
}

TEST_CASE("equal amplitudes give equal aggregation weights") {
  std::mt19937_64 rng(46);
  TimesBlock block({.d_model = 4, .k = 2, .branches = 2}, rng, "b");
  const Tensor x = tones(2, 96, 4, {{4.0, 1.0}, {8.0, 1.0}}, rng);
  BlockTrace trace;
  block.forward(x, nullptr, &trace);
  REQUIRE(trace.weights.size() == 2);
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(trace.periods[b].frequencies() == std::vector<std::size_t>{4, 8});
    CHECK(std::abs(trace.weights[b][0] - 0.5) < 1e-12);
    CHECK(std::abs(trace.weights[b][1] - 0.5) < 1e-12);
  }
}

TEST_CASE("aggregation variants") {
  std::mt19937_64 rng(47);
  const Tensor x = tones(1, 48, 2, {{2.0, 1.0}, {6.0, 0.5}}, rng);
  for (auto agg : {Aggregation::DirectSum, Aggregation::RawAmplitude}) {
    std::mt19937_64 init(48);
    TimesBlock block({.d_model = 2, .k = 2, .branches = 2, .aggregation = agg}, init, "b");
    BlockTrace trace;
    block.forward(x, nullptr, &trace);
    const auto spectrum = rfft_amplitude(select(x, 0));
    if (agg == Aggregation::DirectSum) {
      CHECK(trace.weights[0] == std::vector<double>{1.0, 1.0});
    } else {
      CHECK(trace.weights[0][0] == doctest::Approx(spectrum.amplitudes[2]).epsilon(1e-12));
      CHECK(trace.weights[0][1] == doctest::Approx(spectrum.amplitudes[6]).epsilon(1e-12));
    }
  }
  CHECK(aggregation_from_string(to_string(Aggregation::RawAmplitude)) == Aggregation::RawAmplitude);
  CHECK(aggregation_from_string("direct-sum") == Aggregation::DirectSum);
  CHECK_THROWS_AS(aggregation_from_string("max"), Error);
}

TEST_CASE("periods are discovered per sample") {
  std::mt19937_64 rng(49), init(50);
  TimesBlock block({.d_model = 3, .k = 1, .branches = 2}, init, "b");
  const Tensor a = tones(1, 32, 3, {{2.0, 1.0}}, rng), b = tones(1, 32, 3, {{5.0, 1.0}}, rng);
  const Tensor both = stack({select(a, 0), select(b, 0)});
  BlockTrace trace;
  const Tensor y = block.forward(both, nullptr, &trace);
  CHECK(trace.periods[0].frequencies() == std::vector<std::size_t>{2});
  CHECK(trace.periods[1].frequencies() == std::vector<std::size_t>{5});
  const Tensor ya = block.forward(a), yb = block.forward(b);
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    CHECK(y[i] == ya[i]);
    CHECK(y[ya.numel() + i] == yb[i]);
  }
}

TEST_CASE("parameter count does not depend on k") {
  std::size_t reference = 0;
  for (std::size_t k = 1; k <= 8; ++k) {
    std::mt19937_64 rng(51);
    const TimesBlock block({.d_model = 16, .k = k, .branches = 3}, rng, "b");
    if (k == 1) reference = block.parameter_count();
    CHECK(block.parameter_count() == reference);
  }
  // two layers of 1x1, 3x3 and 5x5 kernels with biases, plus the norm affine
  CHECK(reference == 2 * ((1 + 9 + 25) * 16 * 16 + 3 * 16) + 2 * 16);
}

TEST_CASE("two-block stack gradients match finite differences") {
  std::mt19937_64 rng(52), init(53);
  TimesBlock b0({.d_model = 8, .k = 3, .branches = 3}, init, "b0");
  TimesBlock b1({.d_model = 8, .k = 3, .branches = 3}, init, "b1");
  std::vector<Parameter*> ps;
  b0.collect(ps);
  b1.collect(ps);
  // perturb the norm affine so its gradients are not trivially symmetric
  for (Parameter* p : ps)
    if (p->name.find("norm") != std::string::npos) p->value = support::random_tensor(p->value.shape(), rng, 0.5, 1.5);
  const Tensor x = support::random_tensor(Shape{1, 16, 8}, rng);
  const auto rx = support::check_gradients(
      [&](const auto& in) { return support::random_projection(b1.forward(b0.forward(in[0])), 77); }, {x}, rng);
  CHECK(rx.max_rel_error < 1e-4);
  const auto rp = support::check_parameter_gradients(
      ps, [&](Tape* t) { return support::random_projection(b1.forward(b0.forward(x, t), t), 77); }, rng, 12);
  CHECK(rp.coordinates >= 200);
  CHECK(rp.max_rel_error < 1e-4);
}

TEST_CASE("adversarial inputs stay finite") {
  std::mt19937_64 rng(54), init(55);
  TimesBlock block({.d_model = 4, .k = 3, .branches = 3}, init, "b");
  std::vector<Tensor> inputs{Tensor::full(Shape{1, 24, 4}, 3.0), Tensor::zeros(Shape{1, 24, 4}),
                             support::random_tensor(Shape{2, 13, 4}, rng), support::random_tensor(Shape{1, 2, 4}, rng)};
  std::vector<double> spike(24 * 4, 0.0);
  spike[10 * 4 + 1] = 1e3;
  inputs.emplace_back(Shape{1, 24, 4}, spike);
  for (const auto& x : inputs) {
    const Tensor y = block.forward(x);
    CHECK(y.shape() == x.shape());
    for (double v : y.values()) CHECK(std::isfinite(v));
  }
  CHECK_THROWS_AS(block.forward(support::random_tensor(Shape{1, 1, 4}, rng)), ShapeError);
  CHECK_THROWS_AS(block.forward(support::random_tensor(Shape{1, 8, 3}, rng)), ShapeError);
}
