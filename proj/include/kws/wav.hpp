#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kws/common.hpp"

namespace kws {

// Mono float waveform, samples in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

enum class PadMode { zero_pad_end, reject };

struct ClipLengthPolicy {
  std::size_t target_samples = kClipSamples;
  PadMode pad_mode = PadMode::zero_pad_end;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace detail

// Reads a RIFF/WAVE file. Accepts PCM (format 1), 16-bit, mono only, and
// requires the pipeline sample rate; anything else is an error, never a
// silent conversion. Decode scale is 1/32768, so -32768 maps to -1.0.
inline Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io-error", "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail("decode-error", path.string() + " is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t chunk_size = detail::read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > bytes.size()) fail("decode-error", "truncated chunk in " + path.string());
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_size < 16) fail("decode-error", "fmt chunk too small in " + path.string());
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = chunk_size;
    }
    pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data == nullptr) fail("decode-error", "missing fmt/data chunk in " + path.string());
  if (format != 1) fail("unsupported-format", "non-PCM wav: " + path.string());
  if (channels != 1) fail("unsupported-format", "expected mono, got " + std::to_string(channels) + " channels: " + path.string());
  if (bits != 16) fail("unsupported-format", "expected 16-bit PCM, got " + std::to_string(bits) + "-bit: " + path.string());
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    fail("rate-mismatch", "expected " + std::to_string(kSampleRate) + " Hz, got " +
                              std::to_string(rate) + " Hz: " + path.string());
  }

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t n = data_size / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int16_t s = static_cast<std::int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
    w.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  return w;
}

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] and quantized on the
// decoder's 1/32768 grid (with +1.0 saturating to 32767), so any waveform
// whose samples already sit on that grid round-trips exactly.
inline void save_wav(const Waveform& w, const std::filesystem::path& path) {
  for (float s : w.samples) {
    if (!std::isfinite(s)) fail("invalid-argument", "non-finite sample in waveform");
  }
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);   // block align
  detail::put_u16(out, 16);  // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_size);
  for (float s : w.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    long q = std::lround(static_cast<double>(c) * 32768.0);
    q = std::clamp<long>(q, -32768, 32767);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("io-error", "cannot open for write: " + path.string());
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) fail("io-error", "write failed: " + path.string());
}

// Forces the clip to policy.target_samples: longer clips lose their tail,
// shorter clips gain trailing zeros (or are rejected).
inline Waveform fit_duration(const Waveform& w, const ClipLengthPolicy& policy = {}) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  if (w.samples.size() >= policy.target_samples) {
    out.samples.assign(w.samples.begin(),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(policy.target_samples));
    return out;
  }
  if (policy.pad_mode == PadMode::reject) {
    fail("too-short", "clip has " + std::to_string(w.samples.size()) + " samples, need " +
                          std::to_string(policy.target_samples));
  }
  out.samples = w.samples;
  out.samples.resize(policy.target_samples, 0.0f);
  return out;
}

inline double rms(const Waveform& w) {
  if (w.samples.empty()) return 0.0;
  double acc = 0.0;
  for (float s : w.samples) acc += static_cast<double>(s) * static_cast<double>(s);
  return std::sqrt(acc / static_cast<double>(w.samples.size()));
}

// Scales the signal to the target RMS, then clamps to [-1, 1]. All-zero
// input passes through unchanged.
inline Waveform rms_normalize(const Waveform& w, float target_rms = kTargetRms) {
  if (target_rms <= 0.0f) fail("invalid-argument", "target_rms must be positive");
  const double r = rms(w);
  if (r == 0.0) return w;
  const double g = static_cast<double>(target_rms) / r;
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    out.samples[i] = std::clamp(static_cast<float>(w.samples[i] * g), -1.0f, 1.0f);
  }
  return out;
}

}  // namespace kws
