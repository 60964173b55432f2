#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "kws/common.hpp"
#include "kws/mfcc.hpp"
#include "kws/tensor.hpp"
#include "kws/wav.hpp"

namespace kws {

// One clip on disk: directory name is the class label.
struct LabeledClip {
  std::filesystem::path path;
  int label = 0;
};

struct Dataset {
  std::vector<std::string> labels;  // sorted class names
  std::vector<LabeledClip> clips;   // sorted by (class, filename)
};

inline Dataset scan_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    fail("config-error", "dataset directory not found: " + dir.string());
  }
  Dataset ds;
  std::vector<std::filesystem::path> class_dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) fail("config-error", "no class directories under " + dir.string());
  for (const auto& class_dir : class_dirs) {
    const int label = static_cast<int>(ds.labels.size());
    ds.labels.push_back(class_dir.filename().string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(class_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ds.clips.push_back({f, label});
  }
  if (ds.clips.empty()) fail("config-error", "no wav clips under " + dir.string());
  return ds;
}

// One training example: features as a (1, 1, rows, cols) tensor plus label.
struct Example {
  nn::Tensor<float> x;
  int label = 0;
};

inline nn::Tensor<float> feature_tensor(const FeatureMap& fm) {
  nn::Tensor<float> t({1, 1, fm.rows, fm.cols});
  t.data = fm.data;
  return t;
}

inline Example make_example(const FeatureMap& fm, int label) { return {feature_tensor(fm), label}; }

// Runs every clip through the preprocessing contract (fit, normalize, MFCC).
inline std::vector<Example> load_examples(const Dataset& ds, const FeatureConfig& cfg = {}) {
  std::vector<Example> out(ds.clips.size());
  parallel_for_chunks(ds.clips.size(), [&](std::size_t i) {
    const Waveform w = load_wav(ds.clips[i].path);
    out[i] = make_example(extract_features(w, cfg), ds.clips[i].label);
  });
  return out;
}

// Stacks examples[indices] into a (B, 1, rows, cols) batch.
inline nn::Tensor<float> stack_batch(const std::vector<Example>& examples,
                                     const std::vector<std::size_t>& indices) {
  if (indices.empty()) fail("invalid-argument", "empty batch");
  const auto& first = examples[indices[0]].x;
  const std::size_t rows = first.shape[2], cols = first.shape[3];
  nn::Tensor<float> batch({indices.size(), 1, rows, cols});
  const std::size_t stride = rows * cols;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& x = examples[indices[i]].x;
    if (x.shape[2] != rows || x.shape[3] != cols) fail("shape-error", "inconsistent feature shapes");
    std::copy(x.data.begin(), x.data.end(), batch.data.begin() + i * stride);
  }
  return batch;
}

}  // namespace kws
