#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kws {

// Clip geometry used throughout the pipeline: mono 16-bit PCM at 44 kHz,
// clips fixed to 1.9 s = 83,600 samples.
inline constexpr int kSampleRate = 44000;
inline constexpr std::size_t kClipSamples = 83600;
inline constexpr float kTargetRms = 0.1f;

// Error with a machine-parsable category (the CLI prints "error: <category>: <message>").
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(category + ": " + message), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

[[noreturn]] inline void fail(const std::string& category, const std::string& message) {
  throw Error(category, message);
}

using Rng = std::mt19937_64;

// Stream RNG derived from (seed, stream ids). std::seed_seq has a fully
// specified algorithm, so streams are stable across platforms.
inline Rng make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

// Hand-rolled uniform mappings: std::uniform_*_distribution output is
// implementation-defined, these are pinned bit-for-bit.
inline double uniform_real(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(rng() % span);
}

// Runs fn(chunk) for chunk in [0, n_chunks) on a small thread team. Callers
// partition work into fixed-size chunks and reduce in chunk order, so results
// do not depend on thread count or scheduling.
template <typename Fn>
void parallel_for_chunks(std::size_t n_chunks, Fn&& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  const std::size_t n_threads = std::min<std::size_t>(hw, n_chunks);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> team;
  team.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    team.emplace_back([&, t] {
      for (std::size_t c = t; c < n_chunks; c += n_threads) fn(c);
    });
  }
  for (auto& th : team) th.join();
}

}  // namespace kws
