#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kws/common.hpp"
#include "kws/layers.hpp"
#include "kws/tensor.hpp"

namespace kws::nn {

enum class LayerKind : std::uint32_t {
  conv = 1,       // a = in channels, b = out channels; 3x3, stride 1, same padding
  batchnorm = 2,  // a = channels
  relu = 3,
  maxpool = 4,    // 2x2, stride 2
  dropout = 5,    // p = rate
  flatten = 6,
  dense = 7,      // a = in features, b = out features
  softmax = 8,
};

struct LayerDesc {
  LayerKind kind;
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  float p = 0.0f;
};

struct ModelSpec {
  std::uint32_t in_ch = 1;
  std::uint32_t in_h = 13;
  std::uint32_t in_w = 162;
  std::vector<LayerDesc> layers;

  std::uint32_t n_classes() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      if (it->kind == LayerKind::dense) return it->b;
    }
    fail("config-error", "model spec has no dense layer");
  }
};

// Checks that shapes chain consistently and returns the flattened feature
// count in front of the first dense layer.
inline void validate_spec(const ModelSpec& spec) {
  std::uint32_t c = spec.in_ch, h = spec.in_h, w = spec.in_w;
  bool flat = false;
  std::uint32_t features = 0;
  for (const LayerDesc& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        if (flat || l.a != c) fail("config-error", "conv input channels do not chain");
        c = l.b;
        break;
      case LayerKind::batchnorm:
        if (flat || l.a != c) fail("config-error", "batchnorm channels do not chain");
        break;
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
        if (flat) fail("config-error", "maxpool after flatten");
        h /= 2;
        w /= 2;
        if (h == 0 || w == 0) fail("config-error", "maxpool collapses a spatial dimension to zero");
        break;
      case LayerKind::dropout:
        if (!(l.p >= 0.0f && l.p < 1.0f)) fail("config-error", "dropout rate must be in [0, 1)");
        break;
      case LayerKind::flatten:
        flat = true;
        features = c * h * w;
        break;
      case LayerKind::dense:
        if (!flat) fail("config-error", "dense before flatten");
        if (l.a != features) {
          fail("config-error", "dense expects " + std::to_string(l.a) + " inputs, got " +
                                   std::to_string(features));
        }
        features = l.b;
        break;
      case LayerKind::softmax:
        break;
    }
  }
}

// The classifier stack: three conv blocks with channel widths rising
// 32 -> 64 -> 128, each Conv-BN-ReLU-MaxPool-Dropout, then a two-layer
// dense head over softmax.
inline ModelSpec default_model_spec(std::uint32_t n_classes = 21, std::uint32_t in_h = 13,
                                    std::uint32_t in_w = 162) {
  ModelSpec spec;
  spec.in_ch = 1;
  spec.in_h = in_h;
  spec.in_w = in_w;
  std::uint32_t c = 1, h = in_h, w = in_w;
  for (std::uint32_t out_c : {32u, 64u, 128u}) {
    spec.layers.push_back({LayerKind::conv, c, out_c, 0.0f});
    spec.layers.push_back({LayerKind::batchnorm, out_c, 0, 0.0f});
    spec.layers.push_back({LayerKind::relu, 0, 0, 0.0f});
    spec.layers.push_back({LayerKind::maxpool, 0, 0, 0.0f});
    spec.layers.push_back({LayerKind::dropout, 0, 0, 0.25f});
    c = out_c;
    h /= 2;
    w /= 2;
  }
  spec.layers.push_back({LayerKind::flatten, 0, 0, 0.0f});
  spec.layers.push_back({LayerKind::dense, c * h * w, 128, 0.0f});
  spec.layers.push_back({LayerKind::relu, 0, 0, 0.0f});
  spec.layers.push_back({LayerKind::dropout, 0, 0, 0.5f});
  spec.layers.push_back({LayerKind::dense, 128, n_classes, 0.0f});
  spec.layers.push_back({LayerKind::softmax, 0, 0, 0.0f});
  validate_spec(spec);
  return spec;
}

inline constexpr float kBatchNormMomentum = 0.9f;
inline constexpr float kBatchNormEps = 1e-5f;

// Parameter slot layout per layer: conv -> [w, b]; batchnorm ->
// [gamma, beta, running_mean, running_var]; dense -> [w, b]; others none.
template <typename T>
struct Model {
  ModelSpec spec;
  std::vector<std::string> labels;
  std::vector<Tensor<T>> tensors;
  std::vector<std::size_t> layer_slot;   // first tensor slot of each layer
  std::vector<bool> slot_trainable;

  std::vector<Tensor<T>*> trainable_params() {
    std::vector<Tensor<T>*> out;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (slot_trainable[i]) out.push_back(&tensors[i]);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (slot_trainable[i]) n += tensors[i].numel();
    }
    return n;
  }
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::vector<std::string> labels) {
  validate_spec(spec);
  if (!labels.empty() && labels.size() != spec.n_classes()) {
    fail("config-error", "label count does not match the classifier width");
  }
  Model<T> m;
  m.spec = spec;
  m.labels = std::move(labels);
  m.layer_slot.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    m.layer_slot[i] = m.tensors.size();
    switch (l.kind) {
      case LayerKind::conv:
        m.tensors.emplace_back(std::vector<std::size_t>{l.b, l.a, 3, 3});
        m.slot_trainable.push_back(true);
        m.tensors.emplace_back(std::vector<std::size_t>{l.b});
        m.slot_trainable.push_back(true);
        break;
      case LayerKind::batchnorm: {
        m.tensors.emplace_back(std::vector<std::size_t>{l.a});  // gamma
        m.slot_trainable.push_back(true);
        m.tensors.emplace_back(std::vector<std::size_t>{l.a});  // beta
        m.slot_trainable.push_back(true);
        m.tensors.emplace_back(std::vector<std::size_t>{l.a});  // running mean
        m.slot_trainable.push_back(false);
        m.tensors.emplace_back(std::vector<std::size_t>{l.a});  // running var
        m.slot_trainable.push_back(false);
        Tensor<T>& gamma = m.tensors[m.tensors.size() - 4];
        for (auto& v : gamma.data) v = T(1);
        Tensor<T>& run_var = m.tensors.back();
        for (auto& v : run_var.data) v = T(1);
        break;
      }
      case LayerKind::dense:
        m.tensors.emplace_back(std::vector<std::size_t>{l.b, l.a});
        m.slot_trainable.push_back(true);
        m.tensors.emplace_back(std::vector<std::size_t>{l.b});
        m.slot_trainable.push_back(true);
        break;
      default:
        break;
    }
  }
  return m;
}

// Kaiming-uniform fan-in init for conv and dense weights; biases zero,
// batchnorm left at gamma=1, beta=0.
template <typename T>
void init_parameters(Model<T>& m, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xC0FFEE);
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerDesc& l = m.spec.layers[i];
    if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) {
      Tensor<T>& w = m.tensors[m.layer_slot[i]];
      const std::size_t fan_in = l.kind == LayerKind::conv ? l.a * 9 : l.a;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : w.data) v = static_cast<T>(uniform_real(rng, -bound, bound));
      Tensor<T>& b = m.tensors[m.layer_slot[i] + 1];
      for (auto& v : b.data) v = T(0);
    }
  }
}

enum class Mode { train, infer };

template <typename T>
struct ForwardCtx {
  // activations[i] is the input of layer i; back() is the final output.
  std::vector<Tensor<T>> activations;
  std::vector<Tensor<T>> dropout_masks;
  std::vector<std::vector<std::size_t>> pool_argmax;
  std::vector<BatchNormCache<T>> bn_caches;
  Tensor<T> logits;
};

// Train-mode forward: updates batchnorm running statistics, draws dropout
// masks from rng, and records everything backward needs.
template <typename T>
Tensor<T> model_forward(Model<T>& m, const Tensor<T>& x, Mode mode, Rng* rng, ForwardCtx<T>* ctx) {
  const auto& layers = m.spec.layers;
  if (mode == Mode::train && (rng == nullptr || ctx == nullptr)) {
    fail("invalid-argument", "train-mode forward needs an rng and a context");
  }
  if (x.shape.size() != 4 || x.shape[1] != m.spec.in_ch || x.shape[2] != m.spec.in_h ||
      x.shape[3] != m.spec.in_w) {
    fail("shape-error", "model input has shape " + x.shape_str());
  }
  if (ctx != nullptr) {
    ctx->activations.clear();
    ctx->dropout_masks.assign(layers.size(), Tensor<T>());
    ctx->pool_argmax.assign(layers.size(), {});
    ctx->bn_caches.assign(layers.size(), BatchNormCache<T>());
  }

  Tensor<T> cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (ctx != nullptr) ctx->activations.push_back(cur);
    const LayerDesc& l = layers[i];
    const std::size_t slot = m.layer_slot[i];
    Tensor<T> next;
    switch (l.kind) {
      case LayerKind::conv:
        conv2d_forward(cur, m.tensors[slot], m.tensors[slot + 1], next);
        break;
      case LayerKind::batchnorm:
        if (mode == Mode::train) {
          batchnorm_forward_train(cur, m.tensors[slot], m.tensors[slot + 1], m.tensors[slot + 2],
                                  m.tensors[slot + 3], static_cast<T>(kBatchNormMomentum),
                                  static_cast<T>(kBatchNormEps), ctx->bn_caches[i], next);
        } else {
          batchnorm_forward_infer(cur, m.tensors[slot], m.tensors[slot + 1], m.tensors[slot + 2],
                                  m.tensors[slot + 3], static_cast<T>(kBatchNormEps), next);
        }
        break;
      case LayerKind::relu:
        relu_forward(cur, next);
        break;
      case LayerKind::maxpool: {
        std::vector<std::size_t> argmax;
        maxpool2d_forward(cur, next, argmax);
        if (ctx != nullptr) ctx->pool_argmax[i] = std::move(argmax);
        break;
      }
      case LayerKind::dropout:
        if (mode == Mode::train && l.p > 0.0f) {
          dropout_forward_train(cur, static_cast<T>(l.p), *rng, ctx->dropout_masks[i], next);
        } else {
          next = cur;
        }
        break;
      case LayerKind::flatten:
        next = cur;
        next.shape = {cur.shape[0], cur.numel() / cur.shape[0]};
        break;
      case LayerKind::dense:
        dense_forward(cur, m.tensors[slot], m.tensors[slot + 1], next);
        break;
      case LayerKind::softmax:
        if (ctx != nullptr) ctx->logits = cur;
        next = softmax(cur);
        break;
    }
    cur = std::move(next);
  }
  if (ctx != nullptr) ctx->activations.push_back(cur);
  return cur;
}

// Inference is pure: running statistics, no dropout, no state writes.
template <typename T>
Tensor<T> model_infer(const Model<T>& m, const Tensor<T>& x) {
  if (x.shape.size() != 4 || x.shape[1] != m.spec.in_ch || x.shape[2] != m.spec.in_h ||
      x.shape[3] != m.spec.in_w) {
    fail("shape-error", "model input has shape " + x.shape_str());
  }
  const auto& layers = m.spec.layers;
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& l = layers[i];
    const std::size_t slot = m.layer_slot[i];
    Tensor<T> next;
    switch (l.kind) {
      case LayerKind::conv:
        conv2d_forward(cur, m.tensors[slot], m.tensors[slot + 1], next);
        break;
      case LayerKind::batchnorm:
        batchnorm_forward_infer(cur, m.tensors[slot], m.tensors[slot + 1], m.tensors[slot + 2],
                                m.tensors[slot + 3], static_cast<T>(kBatchNormEps), next);
        break;
      case LayerKind::relu:
        relu_forward(cur, next);
        break;
      case LayerKind::maxpool: {
        std::vector<std::size_t> argmax;
        maxpool2d_forward(cur, next, argmax);
        break;
      }
      case LayerKind::dropout:
        next = cur;
        break;
      case LayerKind::flatten:
        next = cur;
        next.shape = {cur.shape[0], cur.numel() / cur.shape[0]};
        break;
      case LayerKind::dense:
        dense_forward(cur, m.tensors[slot], m.tensors[slot + 1], next);
        break;
      case LayerKind::softmax:
        next = softmax(cur);
        break;
    }
    cur = std::move(next);
  }
  return cur;
}

// Backward from the fused softmax+cross-entropy gradient (w.r.t. logits).
// Returns gradients aligned with model.tensors; non-trainable slots stay
// zero-sized.
template <typename T>
std::vector<Tensor<T>> model_backward(const Model<T>& m, const ForwardCtx<T>& ctx,
                                      const Tensor<T>& grad_logits) {
  const auto& layers = m.spec.layers;
  std::vector<Tensor<T>> grads(m.tensors.size());
  if (layers.empty() || layers.back().kind != LayerKind::softmax) {
    fail("config-error", "model_backward expects a softmax-terminated spec");
  }
  Tensor<T> g = grad_logits;
  // softmax itself is fused into grad_logits; walk the remaining layers.
  for (std::size_t idx = layers.size() - 1; idx-- > 0;) {
    const LayerDesc& l = layers[idx];
    const std::size_t slot = m.layer_slot[idx];
    const Tensor<T>& input = ctx.activations[idx];
    Tensor<T> gx;
    switch (l.kind) {
      case LayerKind::conv: {
        Tensor<T> gw, gb;
        conv2d_backward(input, m.tensors[slot], g, gx, gw, gb);
        grads[slot] = std::move(gw);
        grads[slot + 1] = std::move(gb);
        break;
      }
      case LayerKind::batchnorm: {
        Tensor<T> ggamma, gbeta;
        batchnorm_backward(ctx.bn_caches[idx], m.tensors[slot], g, gx, ggamma, gbeta);
        grads[slot] = std::move(ggamma);
        grads[slot + 1] = std::move(gbeta);
        break;
      }
      case LayerKind::relu:
        relu_backward(input, g, gx);
        break;
      case LayerKind::maxpool:
        maxpool2d_backward(ctx.pool_argmax[idx], g, input.shape, gx);
        break;
      case LayerKind::dropout:
        if (ctx.dropout_masks[idx].numel() > 0) {
          dropout_backward(ctx.dropout_masks[idx], g, gx);
        } else {
          gx = std::move(g);
        }
        break;
      case LayerKind::flatten:
        gx = std::move(g);
        gx.shape = input.shape;
        break;
      case LayerKind::dense: {
        Tensor<T> gw, gb;
        dense_backward(input, m.tensors[slot], g, gx, gw, gb);
        grads[slot] = std::move(gw);
        grads[slot + 1] = std::move(gb);
        break;
      }
      case LayerKind::softmax:
        fail("config-error", "softmax must be the final layer");
    }
    g = std::move(gx);
  }
  // ensure every trainable slot has a gradient tensor
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (m.slot_trainable[i] && grads[i].numel() == 0) {
      grads[i] = Tensor<T>(m.tensors[i].shape);
    }
  }
  return grads;
}

template <typename T>
std::vector<Tensor<T>> trainable_grads(const Model<T>& m, std::vector<Tensor<T>>& all_grads) {
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < all_grads.size(); ++i) {
    if (m.slot_trainable[i]) out.push_back(std::move(all_grads[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "KWSM", u32 version, input shape, label table,
// layer list, then per-tensor dims + little-endian float32 blobs (weights,
// biases, batchnorm gamma/beta and running statistics, in slot order).
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

inline void write_f32(std::ostream& os, float v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline float read_f32(std::istream& is) {
  float v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Model<float>& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("io-error", "cannot open for write: " + path.string());
  os.write("KWSM", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, m.spec.in_ch);
  detail::write_u32(os, m.spec.in_h);
  detail::write_u32(os, m.spec.in_w);
  detail::write_u32(os, static_cast<std::uint32_t>(m.labels.size()));
  for (const std::string& label : m.labels) {
    detail::write_u32(os, static_cast<std::uint32_t>(label.size()));
    os.write(label.data(), static_cast<std::streamsize>(label.size()));
  }
  detail::write_u32(os, static_cast<std::uint32_t>(m.spec.layers.size()));
  for (const LayerDesc& l : m.spec.layers) {
    detail::write_u32(os, static_cast<std::uint32_t>(l.kind));
    detail::write_u32(os, l.a);
    detail::write_u32(os, l.b);
    detail::write_f32(os, l.p);
  }
  detail::write_u32(os, static_cast<std::uint32_t>(m.tensors.size()));
  for (const Tensor<float>& t : m.tensors) {
    detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!os) fail("io-error", "write failed: " + path.string());
}

inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("io-error", "cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "KWSM", 4) != 0) fail("decode-error", "not a checkpoint: " + path.string());
  if (detail::read_u32(is) != kCheckpointVersion) fail("decode-error", "unsupported checkpoint version");
  ModelSpec spec;
  spec.in_ch = detail::read_u32(is);
  spec.in_h = detail::read_u32(is);
  spec.in_w = detail::read_u32(is);
  const std::uint32_t n_labels = detail::read_u32(is);
  std::vector<std::string> labels(n_labels);
  for (auto& label : labels) {
    const std::uint32_t len = detail::read_u32(is);
    label.resize(len);
    is.read(label.data(), len);
  }
  const std::uint32_t n_layers = detail::read_u32(is);
  spec.layers.resize(n_layers);
  for (auto& l : spec.layers) {
    l.kind = static_cast<LayerKind>(detail::read_u32(is));
    l.a = detail::read_u32(is);
    l.b = detail::read_u32(is);
    l.p = detail::read_f32(is);
  }
  if (!is) fail("decode-error", "truncated checkpoint: " + path.string());

  Model<float> m = build_model<float>(spec, std::move(labels));
  const std::uint32_t n_tensors = detail::read_u32(is);
  if (n_tensors != m.tensors.size()) {
    fail("checkpoint-mismatch", "tensor count does not match the architecture");
  }
  for (Tensor<float>& t : m.tensors) {
    const std::uint32_t ndims = detail::read_u32(is);
    std::vector<std::size_t> dims(ndims);
    for (auto& d : dims) d = detail::read_u32(is);
    if (dims != t.shape) fail("checkpoint-mismatch", "tensor shape does not match the architecture");
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!is) fail("decode-error", "truncated checkpoint: " + path.string());
  return m;
}

}  // namespace kws::nn
