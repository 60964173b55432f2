#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "kws/common.hpp"
#include "kws/tensor.hpp"

namespace kws::nn {

// Batch work is split into fixed-size chunks; outputs are per-sample disjoint
// and weight-gradient reductions run in chunk order, so results do not depend
// on the thread count.
inline constexpr std::size_t kBatchChunk = 8;

// ---------------------------------------------------------------------------
// Convolution, stride 1, odd kernel, same padding.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Tensor<T>& y) {
  if (x.shape.size() != 4 || w.shape.size() != 4) fail("shape-error", "conv2d wants 4-d tensors");
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t F = w.shape[0], K = w.shape[2];
  if (w.shape[1] != C || w.shape[3] != K || K % 2 == 0) {
    fail("shape-error", "conv2d weights " + w.shape_str() + " do not match input " + x.shape_str());
  }
  require_shape(bias, {F}, "conv2d bias");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);

  y = Tensor<T>({B, F, H, W});
  const std::size_t n_chunks = (B + kBatchChunk - 1) / kBatchChunk;
  parallel_for_chunks(n_chunks, [&](std::size_t chunk) {
    const std::size_t b_end = std::min(B, (chunk + 1) * kBatchChunk);
    for (std::size_t b = chunk * kBatchChunk; b < b_end; ++b) {
      const T* xb = x.data.data() + b * C * H * W;
      T* yb = y.data.data() + b * F * H * W;
      for (std::size_t f = 0; f < F; ++f) {
        T* plane = yb + f * H * W;
        std::fill(plane, plane + H * W, bias.data[f]);
        for (std::size_t c = 0; c < C; ++c) {
          const T* xplane = xb + c * H * W;
          for (std::size_t ky = 0; ky < K; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const T wv = w.data[((f * C + c) * K + ky) * K + kx];
              const std::size_t oh_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
              const std::size_t oh_hi = static_cast<std::size_t>(
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(H) - dy));
              const std::size_t ow_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
              const std::size_t ow_hi = static_cast<std::size_t>(
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) - dx));
              for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                T* out_row = plane + oh * W;
                const T* in_row = xplane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oh) + dy) * W;
                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                  out_row[ow] += wv * in_row[static_cast<std::ptrdiff_t>(ow) + dx];
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>& gx,
                     Tensor<T>& gw, Tensor<T>& gb) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t F = w.shape[0], K = w.shape[2];
  require_shape(gy, {B, F, H, W}, "conv2d grad_out");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);

  gx = Tensor<T>({B, C, H, W});
  gw = Tensor<T>(w.shape);
  gb = Tensor<T>({F});

  const std::size_t n_chunks = (B + kBatchChunk - 1) / kBatchChunk;
  std::vector<Tensor<T>> gw_chunks(n_chunks, Tensor<T>(w.shape));
  std::vector<Tensor<T>> gb_chunks(n_chunks, Tensor<T>({F}));

  parallel_for_chunks(n_chunks, [&](std::size_t chunk) {
    Tensor<T>& gw_local = gw_chunks[chunk];
    Tensor<T>& gb_local = gb_chunks[chunk];
    const std::size_t b_end = std::min(B, (chunk + 1) * kBatchChunk);
    for (std::size_t b = chunk * kBatchChunk; b < b_end; ++b) {
      const T* xb = x.data.data() + b * C * H * W;
      const T* gyb = gy.data.data() + b * F * H * W;
      T* gxb = gx.data.data() + b * C * H * W;

      for (std::size_t f = 0; f < F; ++f) {
        const T* gplane = gyb + f * H * W;
        T acc = T(0);
        for (std::size_t i = 0; i < H * W; ++i) acc += gplane[i];
        gb_local.data[f] += acc;
      }

      // grad wrt input: correlate grad_out with the flipped kernel
      for (std::size_t c = 0; c < C; ++c) {
        T* gxplane = gxb + c * H * W;
        for (std::size_t f = 0; f < F; ++f) {
          const T* gplane = gyb + f * H * W;
          for (std::size_t ky = 0; ky < K; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const T wv = w.data[((f * C + c) * K + ky) * K + kx];
              const std::size_t ih_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, dy));
              const std::size_t ih_hi = static_cast<std::size_t>(
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(H) + dy));
              const std::size_t iw_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, dx));
              const std::size_t iw_hi = static_cast<std::size_t>(
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) + dx));
              for (std::size_t ih = ih_lo; ih < ih_hi; ++ih) {
                T* gx_row = gxplane + ih * W;
                const T* g_row =
                    gplane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ih) - dy) * W;
                for (std::size_t iw = iw_lo; iw < iw_hi; ++iw) {
                  gx_row[iw] += wv * g_row[static_cast<std::ptrdiff_t>(iw) - dx];
                }
              }
            }
          }
        }
      }

      // grad wrt weights: correlate input with grad_out
      for (std::size_t f = 0; f < F; ++f) {
        const T* gplane = gyb + f * H * W;
        for (std::size_t c = 0; c < C; ++c) {
          const T* xplane = xb + c * H * W;
          for (std::size_t ky = 0; ky < K; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const std::size_t oh_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
              const std::size_t oh_hi = static_cast<std::size_t>(
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(H) - dy));
              const std::size_t ow_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
              const std::size_t ow_hi = static_cast<std::size_t>(
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) - dx));
              T acc = T(0);
              for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                const T* g_row = gplane + oh * W;
                const T* x_row =
                    xplane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oh) + dy) * W;
                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                  acc += g_row[ow] * x_row[static_cast<std::ptrdiff_t>(ow) + dx];
                }
              }
              gw_local.data[((f * C + c) * K + ky) * K + kx] += acc;
            }
          }
        }
      }
    }
  });

  for (std::size_t chunk = 0; chunk < n_chunks; ++chunk) {
    for (std::size_t i = 0; i < gw.data.size(); ++i) gw.data[i] += gw_chunks[chunk].data[i];
    for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gb_chunks[chunk].data[i];
  }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  y = Tensor<T>(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

// Gradient passes where the input was strictly positive; the tie at zero
// gets zero gradient.
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
  gx = Tensor<T>(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) gx.data[i] = x.data[i] > T(0) ? gy.data[i] : T(0);
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped. The
// argmax (first maximal element in scan order) is remembered for backward.
// ---------------------------------------------------------------------------

template <typename T>
void maxpool2d_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<std::size_t>& argmax) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t OH = H / 2, OW = W / 2;
  if (OH == 0 || OW == 0) fail("shape-error", "maxpool input too small: " + x.shape_str());
  y = Tensor<T>({B, C, OH, OW});
  argmax.assign(y.numel(), 0);
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = x.data.data() + (b * C + c) * H * W;
      const std::size_t plane_base = (b * C + c) * H * W;
      for (std::size_t oh = 0; oh < OH; ++oh) {
        for (std::size_t ow = 0; ow < OW; ++ow) {
          std::size_t best = 2 * oh * W + 2 * ow;
          T best_v = plane[best];
          const std::size_t cand[3] = {2 * oh * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                       (2 * oh + 1) * W + 2 * ow + 1};
          for (std::size_t k = 0; k < 3; ++k) {
            if (plane[cand[k]] > best_v) {
              best_v = plane[cand[k]];
              best = cand[k];
            }
          }
          y.data[o] = best_v;
          argmax[o] = plane_base + best;
          ++o;
        }
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(const std::vector<std::size_t>& argmax, const Tensor<T>& gy,
                        const std::vector<std::size_t>& x_shape, Tensor<T>& gx) {
  gx = Tensor<T>(x_shape);
  for (std::size_t o = 0; o < gy.data.size(); ++o) gx.data[argmax[o]] += gy.data[o];
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors are scaled by 1/(1-p) so inference is identity.
// The mask holds the applied factors (0 or 1/(1-p)).
// ---------------------------------------------------------------------------

template <typename T>
void dropout_forward_train(const Tensor<T>& x, T rate, Rng& rng, Tensor<T>& mask, Tensor<T>& y) {
  if (!(rate >= T(0) && rate < T(1))) fail("config-error", "dropout rate must be in [0, 1)");
  mask = Tensor<T>(x.shape);
  y = Tensor<T>(x.shape);
  const T keep_scale = T(1) / (T(1) - rate);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double u = uniform_real(rng, 0.0, 1.0);
    const T m = u < static_cast<double>(rate) ? T(0) : keep_scale;
    mask.data[i] = m;
    y.data[i] = x.data[i] * m;
  }
}

template <typename T>
void dropout_backward(const Tensor<T>& mask, const Tensor<T>& gy, Tensor<T>& gx) {
  gx = Tensor<T>(gy.shape);
  for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] = gy.data[i] * mask.data[i];
}

// ---------------------------------------------------------------------------
// Dense: y = W x + b with W of shape [out, in].
// ---------------------------------------------------------------------------

template <typename T>
void dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Tensor<T>& y) {
  const std::size_t B = x.shape[0], I = x.shape[1];
  const std::size_t O = w.shape[0];
  if (w.shape.size() != 2 || w.shape[1] != I) {
    fail("shape-error", "dense weights " + w.shape_str() + " do not match input " + x.shape_str());
  }
  require_shape(bias, {O}, "dense bias");
  y = Tensor<T>({B, O});
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = x.data.data() + b * I;
    T* yb = y.data.data() + b * O;
    for (std::size_t o = 0; o < O; ++o) {
      const T* wrow = w.data.data() + o * I;
      T acc = bias.data[o];
      for (std::size_t i = 0; i < I; ++i) acc += wrow[i] * xb[i];
      yb[o] = acc;
    }
  }
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>& gx,
                    Tensor<T>& gw, Tensor<T>& gb) {
  const std::size_t B = x.shape[0], I = x.shape[1], O = w.shape[0];
  require_shape(gy, {B, O}, "dense grad_out");
  gx = Tensor<T>({B, I});
  gw = Tensor<T>(w.shape);
  gb = Tensor<T>({O});
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = x.data.data() + b * I;
    const T* gyb = gy.data.data() + b * O;
    T* gxb = gx.data.data() + b * I;
    for (std::size_t o = 0; o < O; ++o) {
      const T g = gyb[o];
      gb.data[o] += g;
      const T* wrow = w.data.data() + o * I;
      T* gwrow = gw.data.data() + o * I;
      for (std::size_t i = 0; i < I; ++i) {
        gxb[i] += g * wrow[i];
        gwrow[i] += g * xb[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) per channel.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <typename T>
void batchnorm_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             Tensor<T>& run_mean, Tensor<T>& run_var, T momentum, T eps,
                             BatchNormCache<T>& cache, Tensor<T>& y) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t m = B * H * W;
  y = Tensor<T>(x.shape);
  cache.xhat = Tensor<T>(x.shape);
  cache.inv_std.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    T sum = T(0);
    for (std::size_t b = 0; b < B; ++b) {
      const T* plane = x.data.data() + (b * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) sum += plane[i];
    }
    const T mean = sum / static_cast<T>(m);
    T var_sum = T(0);
    for (std::size_t b = 0; b < B; ++b) {
      const T* plane = x.data.data() + (b * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        const T d = plane[i] - mean;
        var_sum += d * d;
      }
    }
    const T var = var_sum / static_cast<T>(m);
    const T inv_std = T(1) / std::sqrt(var + eps);
    cache.inv_std[c] = inv_std;
    run_mean.data[c] = momentum * run_mean.data[c] + (T(1) - momentum) * mean;
    run_var.data[c] = momentum * run_var.data[c] + (T(1) - momentum) * var;
    const T g = gamma.data[c], bta = beta.data[c];
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        const T xh = (x.data[base + i] - mean) * inv_std;
        cache.xhat.data[base + i] = xh;
        y.data[base + i] = g * xh + bta;
      }
    }
  }
}

template <typename T>
void batchnorm_forward_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             const Tensor<T>& run_mean, const Tensor<T>& run_var, T eps,
                             Tensor<T>& y) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  y = Tensor<T>(x.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const T inv_std = T(1) / std::sqrt(run_var.data[c] + eps);
    const T g = gamma.data[c], bta = beta.data[c], mean = run_mean.data[c];
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        y.data[base + i] = g * (x.data[base + i] - mean) * inv_std + bta;
      }
    }
  }
}

template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& gy,
                        Tensor<T>& gx, Tensor<T>& ggamma, Tensor<T>& gbeta) {
  const std::size_t B = gy.shape[0], C = gy.shape[1], H = gy.shape[2], W = gy.shape[3];
  const T m = static_cast<T>(B * H * W);
  gx = Tensor<T>(gy.shape);
  ggamma = Tensor<T>({C});
  gbeta = Tensor<T>({C});
  for (std::size_t c = 0; c < C; ++c) {
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        sum_g += gy.data[base + i];
        sum_gx += gy.data[base + i] * cache.xhat.data[base + i];
      }
    }
    ggamma.data[c] = sum_gx;
    gbeta.data[c] = sum_g;
    const T scale = gamma.data[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        gx.data[base + i] =
            scale * (gy.data[base + i] - sum_g / m - cache.xhat.data[base + i] * sum_gx / m);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Softmax + cross-entropy
// ---------------------------------------------------------------------------

// Row-wise softmax with max subtraction for overflow safety.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t B = logits.shape[0], N = logits.shape[1];
  Tensor<T> probs({B, N});
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.data.data() + b * N;
    T* out = probs.data.data() + b * N;
    T mx = row[0];
    for (std::size_t i = 1; i < N; ++i) mx = std::max(mx, row[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < N; ++i) {
      out[i] = std::exp(row[i] - mx);
      sum += out[i];
    }
    for (std::size_t i = 0; i < N; ++i) out[i] /= sum;
  }
  return probs;
}

template <typename T>
struct CrossEntropyResult {
  T loss = T(0);
  Tensor<T> grad_logits;  // (p - onehot) / B, the fused softmax+CE gradient
};

template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels) {
  const std::size_t B = probs.shape[0], N = probs.shape[1];
  if (labels.size() != B) fail("shape-error", "label count does not match batch size");
  CrossEntropyResult<T> res;
  res.grad_logits = Tensor<T>({B, N});
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= N) {
      fail("invalid-argument", "label out of range: " + std::to_string(label));
    }
    const T* row = probs.data.data() + b * N;
    loss -= std::log(std::max(static_cast<double>(row[label]), 1e-12));
    T* grow = res.grad_logits.data.data() + b * N;
    for (std::size_t i = 0; i < N; ++i) {
      grow[i] = row[i] / static_cast<T>(B);
    }
    grow[label] -= T(1) / static_cast<T>(B);
  }
  res.loss = static_cast<T>(loss / static_cast<double>(B));
  return res;
}

}  // namespace kws::nn
