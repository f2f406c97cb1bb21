#pragma once

// Complex FFT for arbitrary lengths: iterative radix-2 Cooley-Tukey when the
// length is a power of two, Bluestein's chirp-z reduction otherwise.

#include <complex>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <utility>
#include <stdexcept>
#include <vector>

namespace times2d::fft {

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// exp(sign * 2 pi i k / n) for k < n / 2, evaluated directly and cached per thread.
template <typename Scalar>
const std::vector<std::complex<Scalar>>& roots(std::size_t n, int sign) {
  thread_local std::map<std::pair<std::size_t, int>, std::vector<std::complex<Scalar>>> cache;
  auto [it, fresh] = cache.try_emplace({n, sign});
  if (fresh) {
    it->second.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const Scalar angle = static_cast<Scalar>(sign) * 2 * std::numbers::pi_v<Scalar> * static_cast<Scalar>(k) /
                           static_cast<Scalar>(n);
      it->second[k] = std::polar(Scalar(1), angle);
    }
  }
  return it->second;
}

/// In-place radix-2 transform; sign -1 is the forward transform. Unnormalized.
template <typename Scalar>
void radix2(std::span<std::complex<Scalar>> a, int sign) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw std::invalid_argument("radix2: length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const auto& w = roots<Scalar>(n, sign);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<Scalar> u = a[start + k];
        const std::complex<Scalar> v = a[start + k + half] * w[k * step];
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
}

namespace detail {
/// Chirp exp(sign * pi i k^2 / n) and the transformed conjugate chirp filter of length m.
template <typename Scalar>
struct BluesteinPlan {
  std::size_t m = 0;
  std::vector<std::complex<Scalar>> chirp, filter;
};

template <typename Scalar>
const BluesteinPlan<Scalar>& bluestein_plan(std::size_t n, int sign) {
  thread_local std::map<std::pair<std::size_t, int>, BluesteinPlan<Scalar>> cache;
  auto [it, fresh] = cache.try_emplace({n, sign});
  if (fresh) {
    auto& p = it->second;
    p.m = next_power_of_two(2 * n - 1);
    p.chirp.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      // k^2 mod 2n keeps the angle argument small.
      const std::size_t k2 = (k * k) % (2 * n);
      const Scalar angle = static_cast<Scalar>(sign) * std::numbers::pi_v<Scalar> * static_cast<Scalar>(k2) /
                           static_cast<Scalar>(n);
      p.chirp[k] = std::polar(Scalar(1), angle);
    }
    p.filter.assign(p.m, {});
    p.filter[0] = std::conj(p.chirp[0]);
    for (std::size_t k = 1; k < n; ++k) p.filter[k] = p.filter[p.m - k] = std::conj(p.chirp[k]);
    radix2<Scalar>(p.filter, -1);
  }
  return it->second;
}
}  // namespace detail

/// Unnormalized DFT of any length >= 1: X_j = sum_t x_t exp(sign * 2 pi i j t / n).
template <typename Scalar>
std::vector<std::complex<Scalar>> transform(std::span<const std::complex<Scalar>> x, int sign = -1) {
  const std::size_t n = x.size();
  std::vector<std::complex<Scalar>> out(x.begin(), x.end());
  if (n <= 1) return out;
  if (is_power_of_two(n)) {
    radix2<Scalar>(out, sign);
    return out;
  }
  // Bluestein: jk = (j^2 + k^2 - (j-k)^2) / 2 turns the DFT into a convolution.
  const auto& plan = detail::bluestein_plan<Scalar>(n, sign);
  std::vector<std::complex<Scalar>> a(plan.m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * plan.chirp[k];
  radix2<Scalar>(a, -1);
  for (std::size_t i = 0; i < plan.m; ++i) a[i] *= plan.filter[i];
  radix2<Scalar>(a, +1);
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(plan.m);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * plan.chirp[k];
  return out;
}

/// Bins 0..floor(n/2) of the forward DFT of a real sequence.
template <typename Scalar>
std::vector<std::complex<Scalar>> rfft(std::span<const Scalar> x) {
  std::vector<std::complex<Scalar>> z(x.begin(), x.end());
  auto full = transform<Scalar>(std::span<const std::complex<Scalar>>(z), -1);
  full.resize(x.size() / 2 + 1);
  return full;
}

}  // namespace times2d::fft
