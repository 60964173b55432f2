#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

#include "kws/common.hpp"

namespace kws {

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Twiddle factors e^{-i 2 pi k / N} for k in [0, N/2), cached per size.
template <typename T>
const std::vector<std::complex<T>>& twiddles(std::size_t n) {
  static std::map<std::size_t, std::vector<std::complex<T>>> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<T>> tw(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    tw[k] = std::complex<T>(static_cast<T>(std::cos(a)), static_cast<T>(std::sin(a)));
  }
  return cache.emplace(n, std::move(tw)).first->second;
}

// Iterative in-place Cooley-Tukey radix-2: bit-reversal permutation, then
// log2(N) butterfly stages.
template <typename T>
void fft_radix2_inplace(std::vector<std::complex<T>>& x) {
  const std::size_t n = x.size();
  const auto& tw = twiddles<T>(n);
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t base = 0; base < n; base += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<T> w = tw[k * step];
        const std::complex<T> u = x[base + k];
        const std::complex<T> v = x[base + k + len / 2] * w;
        x[base + k] = u + v;
        x[base + k + len / 2] = u - v;
      }
    }
  }
}

// Direct O(N^2) evaluation of X[k] = sum_n x[n] e^{-i 2 pi n k / N}.
template <typename T>
std::vector<std::complex<T>> dft_direct(const std::vector<T>& frame) {
  const std::size_t n = frame.size();
  std::vector<std::complex<T>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a =
          -2.0 * std::numbers::pi * static_cast<double>(i) * static_cast<double>(k) / static_cast<double>(n);
      re += static_cast<double>(frame[i]) * std::cos(a);
      im += static_cast<double>(frame[i]) * std::sin(a);
    }
    out[k] = std::complex<T>(static_cast<T>(re), static_cast<T>(im));
  }
  return out;
}

}  // namespace detail

// DFT of a real frame. Power-of-two lengths take the radix-2 fast path,
// anything else falls back to direct evaluation.
template <typename T>
std::vector<std::complex<T>> dft(const std::vector<T>& frame) {
  if (frame.empty()) fail("invalid-argument", "empty frame");
  if (!detail::is_power_of_two(frame.size())) return detail::dft_direct(frame);
  std::vector<std::complex<T>> x(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) x[i] = std::complex<T>(frame[i], T(0));
  detail::fft_radix2_inplace(x);
  return x;
}

// One-sided power spectrum |X[k]|^2 for k in [0, N/2].
template <typename T>
std::vector<T> power_spectrum(const std::vector<std::complex<T>>& x) {
  if (x.size() % 2 != 0) fail("invalid-argument", "power_spectrum wants even-length spectra");
  std::vector<T> p(x.size() / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = x[k].real() * x[k].real() + x[k].imag() * x[k].imag();
  }
  return p;
}

}  // namespace kws
