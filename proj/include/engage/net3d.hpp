#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "engage/errors.hpp"
#include "engage/heatmap.hpp"
#include "engage/rng.hpp"
#include "engage/tensor.hpp"

namespace engage::net3d {

// ---------------------------------------------------------------------------
// configuration

struct ModelConfig {
  int in_channels = 11;
  int num_classes = 13;
  int stem_channels = 32;
  std::array<int, 3> stage_channels{32, 64, 128};
  int kernel = 3;        // cubic kernel edge, 1 or 3
  int freeze_prefix = 0; // parameter layers excluded from updates, 0..5
};

// Downsampling lives in the conv strides: the stem and stage 1 halve the
// spatial dims, stages 2-3 halve space and time. Parameter layer order is
// stem, stage1, stage2, stage3, head.
inline constexpr int kParamLayers = 5;
inline constexpr std::array<std::array<int, 2>, 4> kConvStrides{{
    {1, 2},  // stem: {temporal, spatial}
    {1, 2},  // stage 1
    {2, 2},  // stage 2
    {2, 2},  // stage 3
}};

struct TrainConfig {
  int epochs = 140;
  int batch_size = 16;
  double learning_rate = 0.0025;
  double momentum = 0.9;
  std::uint64_t seed = 7;
  int threads = 0;          // 0: use all hardware threads
  bool calibrate_init = true;  // data-driven init scaling (see calibrate_init)
};

/// Per-class loss multipliers, all positive.
struct ClassWeights {
  std::vector<double> w;
};

ClassWeights uniform_weights(int classes);
/// w_k = N / (classes * n_k); classes absent from `labels` get weight 1.
ClassWeights inverse_frequency_weights(const std::vector<int>& labels, int classes);

// ---------------------------------------------------------------------------
// layers

template <class T>
struct Conv3d {
  int in_channels = 0;
  int out_channels = 0;
  int ksize = 3;
  int stride_t = 1;
  int stride_s = 1;           // applied to both spatial dims
  Tensor<T> weight;           // [oc][ic][k][k][k]
  Tensor<T> bias;             // [oc]
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [out][in]
  Tensor<T> bias;    // [out]
};

template <class T>
struct Model {
  ModelConfig config;
  Conv3d<T> stem;
  std::array<Conv3d<T>, 3> stage;
  Linear<T> head;
};

/// Scratch buffers reused across forward/backward calls on one thread.
template <class T>
struct Workspace {
  std::vector<T> col;
  std::vector<T> dcol;
  std::array<Tensor<T>, 4> act;  // post-activation output of stem + stages
  Tensor<T> pooled;
  Tensor<T> grad_a;
  Tensor<T> grad_b;
};

/// Gradient buffers mirroring the model parameters.
template <class T>
struct Gradients {
  Tensor<T> stem_w, stem_b;
  std::array<Tensor<T>, 3> stage_w, stage_b;
  Tensor<T> head_w, head_b;
};

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases, drawn in a fixed
/// order from the seed.
template <class T>
Model<T> make_model(const ModelConfig& config, std::uint64_t seed);

template <class T>
Gradients<T> make_gradients(const Model<T>& model);

/// Visits parameter tensors in checkpoint order. fn(name, layer_index, tensor).
template <class T, class Fn>
void for_each_param(Model<T>& model, Fn&& fn) {
  fn("stem.weight", 0, model.stem.weight);
  fn("stem.bias", 0, model.stem.bias);
  for (int s = 0; s < 3; ++s) {
    const std::string base = "stage" + std::to_string(s + 1);
    fn(base + ".weight", s + 1, model.stage[s].weight);
    fn(base + ".bias", s + 1, model.stage[s].bias);
  }
  fn("head.weight", 4, model.head.weight);
  fn("head.bias", 4, model.head.bias);
}

template <class T, class Fn>
void for_each_grad(Gradients<T>& grads, Fn&& fn) {
  fn("stem.weight", 0, grads.stem_w);
  fn("stem.bias", 0, grads.stem_b);
  for (int s = 0; s < 3; ++s) {
    const std::string base = "stage" + std::to_string(s + 1);
    fn(base + ".weight", s + 1, grads.stage_w[s]);
    fn(base + ".bias", s + 1, grads.stage_b[s]);
  }
  fn("head.weight", 4, grads.head_w);
  fn("head.bias", 4, grads.head_b);
}

// ---------------------------------------------------------------------------
// layer ops (defined here so both precisions instantiate)

namespace detail {

inline int conv_out_dim(int in, int k, int stride) { return (in + 2 * (k / 2) - k) / stride + 1; }

/// Unfolds x [ic][ti][hi][wi] into col [ic*k^3][to*ho*wo] for a cubic kernel
/// with pad k/2 and the given strides.
template <class T>
void im2col(const T* x, int ic, int ti, int hi, int wi, int k, int st, int ss, int to, int ho,
            int wo, T* col) {
  const int pad = k / 2;
  const std::size_t n = static_cast<std::size_t>(to) * ho * wo;
  const std::size_t in_plane = static_cast<std::size_t>(ti) * hi * wi;
  std::size_t r = 0;
  for (int c = 0; c < ic; ++c) {
    const T* src = x + c * in_plane;
    for (int dt = 0; dt < k; ++dt)
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx, ++r) {
          T* dst = col + r * n;
          // valid output column range along x for this tap
          int xx_lo = 0;
          while (xx_lo < wo && xx_lo * ss - pad + dx < 0) ++xx_lo;
          int xx_hi = wo;
          while (xx_hi > xx_lo && (xx_hi - 1) * ss - pad + dx >= wi) --xx_hi;
          std::size_t p = 0;
          for (int tt = 0; tt < to; ++tt) {
            const int it = tt * st - pad + dt;
            if (it < 0 || it >= ti) {
              std::fill(dst + p, dst + p + static_cast<std::size_t>(ho) * wo, T(0));
              p += static_cast<std::size_t>(ho) * wo;
              continue;
            }
            for (int yy = 0; yy < ho; ++yy) {
              const int iy = yy * ss - pad + dy;
              if (iy < 0 || iy >= hi) {
                std::fill(dst + p, dst + p + wo, T(0));
                p += wo;
                continue;
              }
              const T* srow = src + (static_cast<std::size_t>(it) * hi + iy) * wi;
              std::fill(dst + p, dst + p + xx_lo, T(0));
              for (int xx = xx_lo; xx < xx_hi; ++xx)
                dst[p + xx] = srow[xx * ss - pad + dx];
              std::fill(dst + p + xx_hi, dst + p + wo, T(0));
              p += wo;
            }
          }
        }
  }
}

/// Scatter-adds col gradients back onto dx (which must be zeroed first).
template <class T>
void col2im(const T* col, int ic, int ti, int hi, int wi, int k, int st, int ss, int to, int ho,
            int wo, T* dx) {
  const int pad = k / 2;
  const std::size_t n = static_cast<std::size_t>(to) * ho * wo;
  const std::size_t in_plane = static_cast<std::size_t>(ti) * hi * wi;
  std::size_t r = 0;
  for (int c = 0; c < ic; ++c) {
    T* dst_base = dx + c * in_plane;
    for (int dt = 0; dt < k; ++dt)
      for (int dy = 0; dy < k; ++dy)
        for (int dx_tap = 0; dx_tap < k; ++dx_tap, ++r) {
          const T* src = col + r * n;
          int xx_lo = 0;
          while (xx_lo < wo && xx_lo * ss - pad + dx_tap < 0) ++xx_lo;
          int xx_hi = wo;
          while (xx_hi > xx_lo && (xx_hi - 1) * ss - pad + dx_tap >= wi) --xx_hi;
          std::size_t p = 0;
          for (int tt = 0; tt < to; ++tt) {
            const int it = tt * st - pad + dt;
            if (it < 0 || it >= ti) {
              p += static_cast<std::size_t>(ho) * wo;
              continue;
            }
            for (int yy = 0; yy < ho; ++yy) {
              const int iy = yy * ss - pad + dy;
              if (iy < 0 || iy >= hi) {
                p += wo;
                continue;
              }
              T* drow = dst_base + (static_cast<std::size_t>(it) * hi + iy) * wi;
              for (int xx = xx_lo; xx < xx_hi; ++xx)
                drow[xx * ss - pad + dx_tap] += src[p + xx];
              p += wo;
            }
          }
        }
  }
}

}  // namespace detail

template <class T>
std::array<int, 3> conv_output_dims(const Conv3d<T>& conv, int t, int h, int w) {
  return {detail::conv_out_dim(t, conv.ksize, conv.stride_t),
          detail::conv_out_dim(h, conv.ksize, conv.stride_s),
          detail::conv_out_dim(w, conv.ksize, conv.stride_s)};
}

/// y = conv(x) + bias. x is [ic][t][h][w]; y is resized to [oc][to][ho][wo].
template <class T>
void conv3d_forward(const Conv3d<T>& conv, const Tensor<T>& x, Tensor<T>& y,
                    std::vector<T>& col) {
  if (x.shape.size() != 4 || static_cast<int>(x.shape[0]) != conv.in_channels)
    throw Error(Errc::shape_mismatch, "conv3d input channels mismatch");
  const int ti = static_cast<int>(x.shape[1]);
  const int hi = static_cast<int>(x.shape[2]);
  const int wi = static_cast<int>(x.shape[3]);
  const auto [to, ho, wo] = conv_output_dims(conv, ti, hi, wi);
  const int kdim = conv.in_channels * conv.ksize * conv.ksize * conv.ksize;
  const std::size_t n = static_cast<std::size_t>(to) * ho * wo;

  col.resize(static_cast<std::size_t>(kdim) * n);
  detail::im2col(x.ptr(), conv.in_channels, ti, hi, wi, conv.ksize, conv.stride_t, conv.stride_s,
                 to, ho, wo, col.data());

  y.shape = {static_cast<std::size_t>(conv.out_channels), static_cast<std::size_t>(to),
             static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)};
  y.data.resize(static_cast<std::size_t>(conv.out_channels) * n);
  detail::gemm(false, false, conv.out_channels, static_cast<int>(n), kdim, T(1),
               conv.weight.ptr(), kdim, col.data(), static_cast<int>(n), T(0), y.ptr(),
               static_cast<int>(n));
  for (int oc = 0; oc < conv.out_channels; ++oc) {
    T* row = y.ptr() + oc * n;
    const T b = conv.bias.data[oc];
    for (std::size_t p = 0; p < n; ++p) row[p] += b;
  }
}

/// Accumulates nothing: dweight/dbias are overwritten, dx (if given) is
/// overwritten. col/dcol are scratch.
template <class T>
void conv3d_backward(const Conv3d<T>& conv, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweight, Tensor<T>& dbias, std::vector<T>& col,
                     std::vector<T>& dcol) {
  const int ti = static_cast<int>(x.shape[1]);
  const int hi = static_cast<int>(x.shape[2]);
  const int wi = static_cast<int>(x.shape[3]);
  const auto [to, ho, wo] = conv_output_dims(conv, ti, hi, wi);
  const int kdim = conv.in_channels * conv.ksize * conv.ksize * conv.ksize;
  const std::size_t n = static_cast<std::size_t>(to) * ho * wo;

  dbias.shape = {static_cast<std::size_t>(conv.out_channels)};
  dbias.data.assign(conv.out_channels, T(0));
  for (int oc = 0; oc < conv.out_channels; ++oc) {
    const T* row = dy.ptr() + oc * n;
    T sum = T(0);
    for (std::size_t p = 0; p < n; ++p) sum += row[p];
    dbias.data[oc] = sum;
  }

  col.resize(static_cast<std::size_t>(kdim) * n);
  detail::im2col(x.ptr(), conv.in_channels, ti, hi, wi, conv.ksize, conv.stride_t, conv.stride_s,
                 to, ho, wo, col.data());
  dweight.shape = conv.weight.shape;
  dweight.data.resize(conv.weight.size());
  detail::gemm(false, true, conv.out_channels, kdim, static_cast<int>(n), T(1), dy.ptr(),
               static_cast<int>(n), col.data(), static_cast<int>(n), T(0), dweight.ptr(), kdim);

  if (dx != nullptr) {
    dcol.resize(static_cast<std::size_t>(kdim) * n);
    detail::gemm(true, false, kdim, static_cast<int>(n), conv.out_channels, T(1),
                 conv.weight.ptr(), kdim, dy.ptr(), static_cast<int>(n), T(0), dcol.data(),
                 static_cast<int>(n));
    dx->shape = x.shape;
    dx->data.assign(x.size(), T(0));
    detail::col2im(dcol.data(), conv.in_channels, ti, hi, wi, conv.ksize, conv.stride_t,
                   conv.stride_s, to, ho, wo, dx->ptr());
  }
}

template <class T>
void relu_forward(Tensor<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

/// dy *= 1[y > 0], where y is the post-activation output.
template <class T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

template <class T>
void global_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y) {
  const std::size_t channels = x.shape[0];
  const std::size_t plane = x.size() / channels;
  y.shape = {channels};
  y.data.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    T sum = T(0);
    const T* src = x.ptr() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) sum += src[p];
    y.data[c] = sum / static_cast<T>(plane);
  }
}

template <class T>
void global_avg_pool_backward(const std::vector<std::size_t>& x_shape, const Tensor<T>& dy,
                              Tensor<T>& dx) {
  const std::size_t channels = x_shape[0];
  const std::size_t plane = Tensor<T>::element_count(x_shape) / channels;
  dx.shape = x_shape;
  dx.data.resize(Tensor<T>::element_count(x_shape));
  for (std::size_t c = 0; c < channels; ++c) {
    const T g = dy.data[c] / static_cast<T>(plane);
    T* dst = dx.ptr() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = g;
  }
}

template <class T>
void linear_forward(const Linear<T>& layer, const Tensor<T>& x, Tensor<T>& y) {
  const std::size_t out = layer.weight.shape[0];
  const std::size_t in = layer.weight.shape[1];
  if (x.size() != in) throw Error(Errc::shape_mismatch, "linear input size mismatch");
  y.shape = {out};
  y.data.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    T sum = layer.bias.data[o];
    const T* row = layer.weight.ptr() + o * in;
    for (std::size_t i = 0; i < in; ++i) sum += row[i] * x.data[i];
    y.data[o] = sum;
  }
}

template <class T>
void linear_backward(const Linear<T>& layer, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweight, Tensor<T>& dbias) {
  const std::size_t out = layer.weight.shape[0];
  const std::size_t in = layer.weight.shape[1];
  dweight.shape = layer.weight.shape;
  dweight.data.resize(out * in);
  dbias.shape = {out};
  dbias.data.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    dbias.data[o] = dy.data[o];
    T* row = dweight.ptr() + o * in;
    const T g = dy.data[o];
    for (std::size_t i = 0; i < in; ++i) row[i] = g * x.data[i];
  }
  if (dx != nullptr) {
    dx->shape = {in};
    dx->data.assign(in, T(0));
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy.data[o];
      const T* row = layer.weight.ptr() + o * in;
      for (std::size_t i = 0; i < in; ++i) dx->data[i] += g * row[i];
    }
  }
}

// ---------------------------------------------------------------------------
// model-level ops

/// Logits for one volume. Activations land in ws.act for backward use.
template <class T>
std::vector<T> forward(const Model<T>& model, const Tensor<T>& volume, Workspace<T>& ws);

/// Loss and parameter gradients for one sample; gradient buffers are
/// overwritten. Frozen layers keep zero gradients and backpropagation stops
/// below the lowest unfrozen layer.
template <class T>
double backward(const Model<T>& model, const Tensor<T>& volume, int label,
                const ClassWeights& weights, Workspace<T>& ws, Gradients<T>& grads);

// loss helpers (64-bit)
std::vector<double> softmax(std::span<const double> logits);
double weighted_cross_entropy(std::span<const double> logits, int label,
                              const ClassWeights& weights);
std::vector<double> weighted_cross_entropy_grad(std::span<const double> logits, int label,
                                                const ClassWeights& weights);

struct Prediction {
  int label = 0;
  std::vector<double> probs;
};

Tensor<float> to_tensor(const heatmap::HeatmapVolume& volume);
std::vector<float> forward(const Model<float>& model, const heatmap::HeatmapVolume& volume);
/// Argmax of softmax; ties resolve to the lowest class index.
Prediction predict(const Model<float>& model, const heatmap::HeatmapVolume& volume);

// ---------------------------------------------------------------------------
// training

/// Training data source; volumes may be materialized lazily.
class VolumeDataset {
 public:
  virtual ~VolumeDataset() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;
  virtual Tensor<float> volume(std::size_t i) const = 0;
};

class InMemoryDataset final : public VolumeDataset {
 public:
  void add(Tensor<float> volume, int label) {
    volumes_.push_back(std::move(volume));
    labels_.push_back(label);
  }
  std::size_t size() const override { return volumes_.size(); }
  int label(std::size_t i) const override { return labels_[i]; }
  Tensor<float> volume(std::size_t i) const override { return volumes_[i]; }

 private:
  std::vector<Tensor<float>> volumes_;
  std::vector<int> labels_;
};

struct TrainResult {
  Model<float> model;
  std::vector<double> epoch_loss;  // mean weighted CE per epoch, in order
};

/// Rescales each freshly initialized layer so its pre-activation std over a
/// few training volumes is 1. Heatmap volumes are nearly all zeros, which
/// starves plain fan-in-scaled initializations of signal; one deterministic
/// pass over the first `sample_count` volumes restores a trainable scale
/// without any runtime normalization. Biases are zero at this point, so the
/// rescale is exact.
void calibrate_init(Model<float>& model, const VolumeDataset& data,
                    std::size_t sample_count = 8);

/// Seeded SGD with momentum (v <- mu v - lr g, p <- p + v). Deterministic for
/// a fixed seed regardless of thread count: per-sample gradients are reduced
/// in sample order into 64-bit accumulators.
TrainResult train(const VolumeDataset& data, const ModelConfig& model_config,
                  const TrainConfig& train_config, const ClassWeights& weights);

// ---------------------------------------------------------------------------
// checkpoints: magic "EGKM", version u16, tensor count u16, then per tensor
// name (u16 length + UTF-8), rank u8, dims u32[], float32 payload; all
// little-endian.

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace engage::net3d
