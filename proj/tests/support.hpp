#pragma once

// Shared helpers for the test executables: random tensors, independent
// oracles and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "times2d/tensor.hpp"

namespace support {

using times2d::Shape;
using times2d::Tape;
using times2d::Tensor;

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  const std::size_t n = shape.numel();
  return Tensor(std::move(shape), uniform_values(n, rng, lo, hi));
}

/// O(n^2) DFT straight from the definition, angles reduced mod n.
inline std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x, int sign = -1) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((j * t) % n) / static_cast<double>(n);
      acc += x[t] * std::polar(1.0, angle);
    }
    out[j] = acc;
  }
  return out;
}

/// Channel-averaged |DFT| of a row-major [T x C] array, bins 0..T/2.
inline std::vector<double> naive_amplitudes(const std::vector<double>& x, std::size_t T, std::size_t C) {
  std::vector<double> amp(T / 2 + 1, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::complex<double>> col(T);
    for (std::size_t t = 0; t < T; ++t) col[t] = x[t * C + c];
    const auto X = naive_dft(col);
    for (std::size_t j = 0; j < amp.size(); ++j) amp[j] += std::abs(X[j]) / static_cast<double>(C);
  }
  return amp;
}

struct ConvShape {
  std::size_t B, H, W, Cin, Cout, k;
};

/// Seven nested loops over (b, y, x, co, dy, dx, ci) with explicit bounds checks.
inline std::vector<double> naive_conv(const std::vector<double>& in, const std::vector<double>& ker,
                                      const std::vector<double>& bias, const ConvShape& s) {
  std::vector<double> out(s.B * s.H * s.W * s.Cout);
  const long r = static_cast<long>(s.k / 2);
  for (std::size_t b = 0; b < s.B; ++b)
    for (std::size_t y = 0; y < s.H; ++y)
      for (std::size_t x = 0; x < s.W; ++x)
        for (std::size_t co = 0; co < s.Cout; ++co) {
          double acc = bias[co];
          for (std::size_t dy = 0; dy < s.k; ++dy)
            for (std::size_t dx = 0; dx < s.k; ++dx)
              for (std::size_t ci = 0; ci < s.Cin; ++ci) {
                const long iy = static_cast<long>(y + dy) - r, ix = static_cast<long>(x + dx) - r;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.H) || ix >= static_cast<long>(s.W)) continue;
                acc += in[((b * s.H + static_cast<std::size_t>(iy)) * s.W + static_cast<std::size_t>(ix)) * s.Cin + ci] *
                       ker[((dy * s.k + dx) * s.Cin + ci) * s.Cout + co];
              }
          out[((b * s.H + y) * s.W + x) * s.Cout + co] = acc;
        }
  return out;
}

/// Gradients of sum(out * g) for the naive convolution, by the same loops.
inline void naive_conv_grads(const std::vector<double>& in, const std::vector<double>& ker, const std::vector<double>& g,
                             const ConvShape& s, std::vector<double>& gin, std::vector<double>& gker,
                             std::vector<double>& gbias) {
  gin.assign(in.size(), 0.0);
  gker.assign(ker.size(), 0.0);
  gbias.assign(s.Cout, 0.0);
  const long r = static_cast<long>(s.k / 2);
  for (std::size_t b = 0; b < s.B; ++b)
    for (std::size_t y = 0; y < s.H; ++y)
      for (std::size_t x = 0; x < s.W; ++x)
        for (std::size_t co = 0; co < s.Cout; ++co) {
          const double go = g[((b * s.H + y) * s.W + x) * s.Cout + co];
          gbias[co] += go;
          for (std::size_t dy = 0; dy < s.k; ++dy)
            for (std::size_t dx = 0; dx < s.k; ++dx)
              for (std::size_t ci = 0; ci < s.Cin; ++ci) {
                const long iy = static_cast<long>(y + dy) - r, ix = static_cast<long>(x + dx) - r;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.H) || ix >= static_cast<long>(s.W)) continue;
                const std::size_t ii =
                    ((b * s.H + static_cast<std::size_t>(iy)) * s.W + static_cast<std::size_t>(ix)) * s.Cin + ci;
                const std::size_t ki = ((dy * s.k + dx) * s.Cin + ci) * s.Cout + co;
                gin[ii] += go * ker[ki];
                gker[ki] += go * in[ii];
              }
        }
}

/// Relative error with a floor so near-zero gradients are judged absolutely.
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients of f with central differences (step h) on up to
/// `max_coords` randomly chosen coordinates per input (all when 0).
inline GradCheck check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 const std::vector<Tensor>& inputs, std::mt19937_64& rng, std::size_t max_coords = 0,
                                 double h = 1e-6) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(f(leaves));

  GradCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = tape.gradient(leaves[i]);
    std::vector<std::size_t> coords(inputs[i].numel());
    for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      auto eval = [&](double delta) {
        std::vector<Tensor> shifted = inputs;
        std::vector<double> v(inputs[i].values().begin(), inputs[i].values().end());
        v[c] += delta;
        shifted[i] = Tensor(inputs[i].shape(), std::move(v));
        return f(shifted).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[c], numeric));
      ++result.coordinates;
    }
  }
  return result;
}

/// Central-difference check of parameter gradients; `loss` must build its
/// graph on the given tape when one is passed.
inline GradCheck check_parameter_gradients(const std::vector<times2d::Parameter*>& params,
                                           const std::function<Tensor(Tape*)>& loss, std::mt19937_64& rng,
                                           std::size_t max_coords_per_param, double h = 1e-6) {
  Tape tape;
  tape.backward(loss(&tape));
  GradCheck result;
  for (times2d::Parameter* p : params) {
    const auto analytic = tape.gradient(*p);
    const Tensor original = p->value;
    std::vector<std::size_t> coords(original.numel());
    for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(coords.size(), max_coords_per_param));
    for (std::size_t c : coords) {
      auto eval = [&](double delta) {
        std::vector<double> v(original.values().begin(), original.values().end());
        v[c] += delta;
        p->value = Tensor(original.shape(), std::move(v));
        const double out = loss(nullptr).item();
        p->value = original;
        return out;
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[c], numeric));
      ++result.coordinates;
    }
  }
  return result;
}

/// sum(x * r) for a fixed random r, so every output element gets a distinct weight.
inline Tensor random_projection(const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return times2d::sum(times2d::mul(x, random_tensor(x.shape(), rng, -1.0, 1.0)));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("times2d_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
