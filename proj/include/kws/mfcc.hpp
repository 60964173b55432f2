#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "kws/common.hpp"
#include "kws/fft.hpp"
#include "kws/wav.hpp"

namespace kws {

struct FeatureConfig {
  std::size_t n_fft = 1024;
  std::size_t hop = 512;
  std::size_t n_mels = 40;
  std::size_t n_mfcc = 13;
  double f_min = 0.0;
  double f_max = 22000.0;  // Nyquist at 44 kHz
  double log_floor = 1e-10;

  void validate(int sample_rate) const {
    if (n_mfcc > n_mels) fail("config-error", "n_mfcc must not exceed n_mels");
    if (hop == 0 || hop > n_fft) fail("config-error", "hop must be in (0, n_fft]");
    if (!(f_min < f_max) || f_max > sample_rate / 2.0) {
      fail("config-error", "need f_min < f_max <= sample_rate/2");
    }
  }
};

// n_mfcc x n_frames coefficient matrix, row-major (one row per coefficient).
struct FeatureMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  std::size_t n_fft = 0;
  std::size_t hop = 0;
  int sample_rate = 0;

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// W[n] = 0.5 - 0.5 cos(2 pi n / (N-1)), the periodic-endpoint raised cosine.
inline std::vector<double> hann_window(std::size_t n) {
  if (n < 2) fail("invalid-argument", "hann window needs N >= 2");
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n - 1));
  }
  return w;
}

inline std::size_t frame_count(std::size_t length, const FeatureConfig& cfg) {
  if (length < cfg.n_fft) fail("too-short", "signal shorter than one analysis frame");
  return (length - cfg.n_fft) / cfg.hop + 1;
}

// Frame i covers samples [i*hop, i*hop + n_fft); the trailing partial frame
// is dropped, never padded.
inline std::vector<std::vector<float>> frame_signal(const Waveform& w, const FeatureConfig& cfg) {
  const std::size_t n = frame_count(w.samples.size(), cfg);
  std::vector<std::vector<float>> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t start = i * cfg.hop;
    frames[i].assign(w.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(start + cfg.n_fft));
  }
  return frames;
}

// m = 2595 log10(1 + f/700)
inline double hz_to_mel(double f) {
  if (f < 0.0) fail("invalid-argument", "frequency must be nonnegative");
  return 2595.0 * std::log10(1.0 + f / 700.0);
}

// f = 700 (10^(m/2595) - 1)
inline double mel_to_hz(double m) {
  if (m < 0.0) fail("invalid-argument", "mel value must be nonnegative");
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// Triangular filters with peaks equally spaced on the mel axis between f_min
// and f_max; boundary points sit at f_min and f_max themselves. Row j holds
// the weights of filter j over FFT bins 0..n_fft/2.
struct MelFilterBank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::vector<double> weights;  // n_mels x n_bins, row-major
  std::vector<double> center_hz;

  double at(std::size_t row, std::size_t bin) const { return weights[row * n_bins + bin]; }
};

inline MelFilterBank mel_filterbank(const FeatureConfig& cfg, int sample_rate = kSampleRate) {
  cfg.validate(sample_rate);
  const std::size_t n_bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  const double step = (mel_hi - mel_lo) / static_cast<double>(cfg.n_mels + 1);

  std::vector<double> edges_hz(cfg.n_mels + 2);
  for (std::size_t p = 0; p < edges_hz.size(); ++p) {
    edges_hz[p] = mel_to_hz(mel_lo + step * static_cast<double>(p));
  }

  MelFilterBank bank;
  bank.n_mels = cfg.n_mels;
  bank.n_bins = n_bins;
  bank.weights.assign(cfg.n_mels * n_bins, 0.0);
  bank.center_hz.resize(cfg.n_mels);
  for (std::size_t j = 0; j < cfg.n_mels; ++j) {
    const double left = edges_hz[j];
    const double center = edges_hz[j + 1];
    const double right = edges_hz[j + 2];
    bank.center_hz[j] = center;
    bool any = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(cfg.n_fft);
      double v = 0.0;
      if (f > left && f < center) {
        v = (f - left) / (center - left);
      } else if (f >= center && f < right) {
        v = (right - f) / (right - center);
      }
      if (v > 0.0) {
        bank.weights[j * n_bins + k] = v;
        any = true;
      }
    }
    if (!any) {
      fail("config-error", "mel filter " + std::to_string(j) +
                               " covers no FFT bin; lower n_mels or raise n_fft");
    }
  }
  return bank;
}

// out[j] = ln(max(bank_j . P, log_floor))
inline std::vector<double> log_mel(const std::vector<double>& power, const MelFilterBank& bank,
                                   double log_floor = 1e-10) {
  if (power.size() != bank.n_bins) fail("shape-error", "power spectrum size does not match filterbank");
  std::vector<double> out(bank.n_mels);
  for (std::size_t j = 0; j < bank.n_mels; ++j) {
    double acc = 0.0;
    const double* row = bank.weights.data() + j * bank.n_bins;
    for (std::size_t k = 0; k < bank.n_bins; ++k) acc += row[k] * power[k];
    out[j] = std::log(std::max(acc, log_floor));
  }
  return out;
}

// Orthonormal DCT-II, truncated to the first n_out coefficients.
inline std::vector<double> dct_ii(const std::vector<double>& v, std::size_t n_out) {
  const std::size_t n = v.size();
  if (n_out > n) fail("config-error", "dct output count exceeds input length");
  std::vector<double> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += v[j] * std::cos(std::numbers::pi * static_cast<double>(k) *
                             (2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(n)));
    }
    const double scale = k == 0 ? std::sqrt(1.0 / static_cast<double>(n))
                                : std::sqrt(2.0 / static_cast<double>(n));
    out[k] = scale * acc;
  }
  return out;
}

// Full per-frame chain: Hann window -> DFT -> power -> mel filterbank ->
// log -> DCT. The caller is expected to have fixed the clip length (and
// applied RMS normalization when energy normalization is on).
inline FeatureMap mfcc(const Waveform& w, const FeatureConfig& cfg = {}) {
  cfg.validate(w.sample_rate);
  const MelFilterBank bank = mel_filterbank(cfg, w.sample_rate);
  const std::vector<double> window = hann_window(cfg.n_fft);
  const std::size_t n_frames = frame_count(w.samples.size(), cfg);

  // DCT basis hoisted out of the frame loop; accumulation below mirrors
  // dct_ii exactly (scale applied after the sum), so outputs are bit-identical
  // to composing the stage functions.
  std::vector<double> dct_basis(cfg.n_mfcc * cfg.n_mels);
  std::vector<double> dct_scale(cfg.n_mfcc);
  for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
    dct_scale[k] = k == 0 ? std::sqrt(1.0 / static_cast<double>(cfg.n_mels))
                          : std::sqrt(2.0 / static_cast<double>(cfg.n_mels));
    for (std::size_t j = 0; j < cfg.n_mels; ++j) {
      dct_basis[k * cfg.n_mels + j] =
          std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(j) + 1.0) /
                   (2.0 * static_cast<double>(cfg.n_mels)));
    }
  }

  FeatureMap fm;
  fm.rows = cfg.n_mfcc;
  fm.cols = n_frames;
  fm.data.resize(fm.rows * fm.cols);
  fm.n_fft = cfg.n_fft;
  fm.hop = cfg.hop;
  fm.sample_rate = w.sample_rate;

  std::vector<double> frame(cfg.n_fft);
  for (std::size_t i = 0; i < n_frames; ++i) {
    const float* src = w.samples.data() + i * cfg.hop;
    for (std::size_t nn = 0; nn < cfg.n_fft; ++nn) {
      frame[nn] = static_cast<double>(src[nn]) * window[nn];
    }
    const auto spectrum = dft(frame);
    const auto power = power_spectrum(spectrum);
    const auto logm = log_mel(power, bank, cfg.log_floor);
    for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
      double acc = 0.0;
      const double* row = dct_basis.data() + k * cfg.n_mels;
      for (std::size_t j = 0; j < cfg.n_mels; ++j) acc += logm[j] * row[j];
      fm.at(k, i) = static_cast<float>(dct_scale[k] * acc);
    }
  }
  return fm;
}

// Binary feature dump: 16-byte header (magic "MFCC", u32 version, u32 rows,
// u32 cols), then rows*cols little-endian float32, row-major.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline void write_feature_map(const FeatureMap& fm, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("io-error", "cannot open for write: " + path.string());
  const char magic[4] = {'M', 'F', 'C', 'C'};
  os.write(magic, 4);
  const std::uint32_t header[3] = {kFeatureFileVersion, static_cast<std::uint32_t>(fm.rows),
                                   static_cast<std::uint32_t>(fm.cols)};
  os.write(reinterpret_cast<const char*>(header), sizeof(header));
  os.write(reinterpret_cast<const char*>(fm.data.data()),
           static_cast<std::streamsize>(fm.data.size() * sizeof(float)));
  if (!os) fail("io-error", "write failed: " + path.string());
}

inline FeatureMap read_feature_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io-error", "cannot open " + path.string());
  char magic[4];
  std::uint32_t header[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, "MFCC", 4) != 0) fail("decode-error", "bad feature file " + path.string());
  if (header[0] != kFeatureFileVersion) fail("decode-error", "unsupported feature file version");
  FeatureMap fm;
  fm.rows = header[1];
  fm.cols = header[2];
  fm.data.resize(fm.rows * fm.cols);
  in.read(reinterpret_cast<char*>(fm.data.data()),
          static_cast<std::streamsize>(fm.data.size() * sizeof(float)));
  if (!in) fail("decode-error", "truncated feature file " + path.string());
  return fm;
}

// The training/inference preprocessing contract: fixed 1.9 s length, then
// RMS normalization, then MFCC. Used identically everywhere a clip meets
// the model.
inline FeatureMap extract_features(const Waveform& w, const FeatureConfig& cfg = {}) {
  if (w.sample_rate != kSampleRate) fail("rate-mismatch", "expected 44 kHz input");
  const Waveform fixed = fit_duration(w, ClipLengthPolicy{});
  const Waveform leveled = rms_normalize(fixed, kTargetRms);
  return mfcc(leveled, cfg);
}

}  // namespace kws
