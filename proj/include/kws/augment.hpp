#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kws/common.hpp"
#include "kws/wav.hpp"

namespace kws {

struct AugmentSpec {
  double snr_db_lo = 0.0;
  double snr_db_hi = 20.0;
  std::size_t shift_max = 8800;  // ~0.2 s at 44 kHz
  std::size_t variants_per_clip = 0;
  std::uint64_t seed = 0;
  float target_rms = kTargetRms;

  void validate() const {
    if (snr_db_lo > snr_db_hi) fail("config-error", "snr range is inverted");
    if (shift_max >= kClipSamples) fail("config-error", "shift bound must stay below the clip length");
  }
};

inline double mean_power(const std::vector<float>& x) {
  double acc = 0.0;
  for (float s : x) acc += static_cast<double>(s) * static_cast<double>(s);
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

// clean + g*noise with g chosen so that 10 log10(P_clean / P_scaled_noise)
// equals snr_db, then RMS normalization and clamping.
inline Waveform mix_noise(const Waveform& clean, const Waveform& noise, double snr_db,
                          float target_rms = kTargetRms) {
  if (clean.samples.size() != noise.samples.size()) {
    fail("shape-error", "mix_noise needs equal-length clips");
  }
  const double p_clean = mean_power(clean.samples);
  const double p_noise = mean_power(noise.samples);
  if (p_clean == 0.0) fail("degenerate-input", "all-zero clean signal");
  if (p_noise == 0.0) fail("cannot-attain-snr", "all-zero noise signal");
  const double g = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));

  Waveform mixed;
  mixed.sample_rate = clean.sample_rate;
  mixed.samples.resize(clean.samples.size());
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    mixed.samples[i] = clean.samples[i] + static_cast<float>(g * noise.samples[i]);
  }
  return rms_normalize(mixed, target_rms);
}

// Positive shift delays content (zeros enter at the head, tail truncated);
// negative shift advances it. Length is preserved.
inline Waveform time_shift(const Waveform& w, std::ptrdiff_t shift) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(w.samples.size());
  if (shift >= n || -shift >= n) fail("invalid-shift", "|shift| must be less than the clip length");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.size(), 0.0f);
  if (shift >= 0) {
    for (std::ptrdiff_t i = shift; i < n; ++i) out.samples[i] = w.samples[i - shift];
  } else {
    for (std::ptrdiff_t i = 0; i < n + shift; ++i) out.samples[i] = w.samples[i - shift];
  }
  return out;
}

// Crops long noise at a random offset; tiles short noise before cropping.
inline Waveform fit_noise(const Waveform& noise, std::size_t length, Rng& rng) {
  if (noise.samples.empty()) fail("cannot-attain-snr", "empty noise clip");
  Waveform out;
  out.sample_rate = noise.sample_rate;
  out.samples.resize(length);
  std::size_t avail = noise.samples.size();
  if (avail >= length) {
    const std::size_t offset =
        static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(avail - length)));
    std::copy_n(noise.samples.begin() + static_cast<std::ptrdiff_t>(offset), length,
                out.samples.begin());
  } else {
    const std::size_t reps = (length + avail - 1) / avail;
    std::vector<float> tiled;
    tiled.reserve(reps * avail);
    for (std::size_t r = 0; r < reps; ++r) {
      tiled.insert(tiled.end(), noise.samples.begin(), noise.samples.end());
    }
    const std::size_t offset = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(tiled.size() - length)));
    std::copy_n(tiled.begin() + static_cast<std::ptrdiff_t>(offset), length, out.samples.begin());
  }
  return out;
}

// One drawn variant: time shift, then noise mix at a drawn SNR. The rng must
// be the clip's own stream so clips can be processed in any order.
inline Waveform augment_variant(const Waveform& clean, const std::vector<Waveform>& noise_pool,
                                const AugmentSpec& spec, Rng& rng) {
  if (noise_pool.empty()) fail("config-error", "empty noise pool");
  const std::ptrdiff_t shift =
      static_cast<std::ptrdiff_t>(uniform_int(rng, -static_cast<std::int64_t>(spec.shift_max),
                                              static_cast<std::int64_t>(spec.shift_max)));
  const Waveform shifted = shift == 0 ? clean : time_shift(clean, shift);
  const std::size_t noise_idx = static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(noise_pool.size()) - 1));
  const Waveform noise = fit_noise(noise_pool[noise_idx], clean.samples.size(), rng);
  const double snr_db = uniform_real(rng, spec.snr_db_lo, spec.snr_db_hi);
  return mix_noise(shifted, noise, snr_db, spec.target_rms);
}

struct ManifestRow {
  std::string class_name;
  std::size_t clean_count = 0;
  std::size_t augmented_count = 0;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  std::string to_csv() const {
    std::string out = "class,clean_count,augmented_count\n";
    for (const auto& r : rows) {
      out += r.class_name + "," + std::to_string(r.clean_count) + "," +
             std::to_string(r.augmented_count) + "\n";
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::filesystem::path> sorted_wavs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace detail

// Loads every wav under each noise directory (one directory per noise class;
// a directory with no subdirectories is treated as a single flat pool).
inline std::vector<Waveform> load_noise_pool(const std::filesystem::path& noise_dir) {
  if (!std::filesystem::is_directory(noise_dir)) {
    fail("config-error", "noise directory not found: " + noise_dir.string());
  }
  std::vector<std::filesystem::path> files;
  const auto subdirs = detail::sorted_subdirs(noise_dir);
  if (subdirs.empty()) {
    files = detail::sorted_wavs(noise_dir);
  } else {
    for (const auto& d : subdirs) {
      const auto f = detail::sorted_wavs(d);
      files.insert(files.end(), f.begin(), f.end());
    }
  }
  if (files.empty()) fail("config-error", "no noise clips under " + noise_dir.string());
  std::vector<Waveform> pool;
  pool.reserve(files.size());
  for (const auto& f : files) pool.push_back(load_wav(f));
  return pool;
}

// Walks the directory-per-class layout and writes variants_per_clip augmented
// clips per clean clip. Clip indices run over (class, file) in sorted order,
// and every clip draws from its own (seed, index) RNG stream, so the output
// bytes depend only on the inputs and the seed.
inline Manifest augment_dataset(const std::filesystem::path& in_dir,
                                const std::filesystem::path& noise_dir,
                                const std::filesystem::path& out_dir, const AugmentSpec& spec) {
  spec.validate();
  if (!std::filesystem::is_directory(in_dir)) {
    fail("config-error", "input directory not found: " + in_dir.string());
  }
  const auto class_dirs = detail::sorted_subdirs(in_dir);
  if (class_dirs.empty()) fail("config-error", "no class directories under " + in_dir.string());
  const std::vector<Waveform> noise_pool = load_noise_pool(noise_dir);

  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  std::uint64_t clip_index = 0;
  for (const auto& class_dir : class_dirs) {
    const std::string class_name = class_dir.filename().string();
    const auto files = detail::sorted_wavs(class_dir);
    ManifestRow row{class_name, files.size(), 0};
    const auto out_class_dir = out_dir / class_name;
    if (spec.variants_per_clip > 0) std::filesystem::create_directories(out_class_dir);
    for (const auto& file : files) {
      if (spec.variants_per_clip > 0) {
        const Waveform clean = fit_duration(load_wav(file), ClipLengthPolicy{});
        Rng rng = make_rng(spec.seed, clip_index);
        for (std::size_t v = 0; v < spec.variants_per_clip; ++v) {
          const Waveform augmented = augment_variant(clean, noise_pool, spec, rng);
          const std::string name = file.stem().string() + "_aug" + std::to_string(v) + ".wav";
          save_wav(augmented, out_class_dir / name);
          ++row.augmented_count;
        }
      }
      ++clip_index;
    }
    manifest.rows.push_back(row);
  }
  return manifest;
}

inline void write_manifest_csv(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("io-error", "cannot open for write: " + path.string());
  os << manifest.to_csv();
}

}  // namespace kws
