#include "engage/net3d.hpp"

#include <bit>
#include <cblas.h>
#include <cstring>
#include <fstream>
#include <omp.h>

extern "C" void openblas_set_num_threads(int);

namespace engage::net3d {

namespace detail {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace {

// The library parallelizes over batch samples; BLAS must stay sequential so
// results do not depend on its internal partitioning.
struct BlasSingleThread {
  BlasSingleThread() { openblas_set_num_threads(1); }
};
const BlasSingleThread blas_single_thread;

}  // namespace

}  // namespace detail

// ---------------------------------------------------------------------------
// construction

ClassWeights uniform_weights(int classes) {
  return ClassWeights{std::vector<double>(static_cast<std::size_t>(classes), 1.0)};
}

ClassWeights inverse_frequency_weights(const std::vector<int>& labels, int classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (int label : labels) {
    if (label < 0 || label >= classes)
      throw Error(Errc::label_out_of_range, "label " + std::to_string(label));
    ++counts[static_cast<std::size_t>(label)];
  }
  ClassWeights weights{std::vector<double>(static_cast<std::size_t>(classes), 1.0)};
  const double n = static_cast<double>(labels.size());
  for (int k = 0; k < classes; ++k)
    if (counts[static_cast<std::size_t>(k)] > 0)
      weights.w[static_cast<std::size_t>(k)] =
          n / (static_cast<double>(classes) * static_cast<double>(counts[k]));
  return weights;
}

namespace {

template <class T>
Conv3d<T> make_conv(int in_ch, int out_ch, int ksize, int stride_t, int stride_s, Rng& rng) {
  Conv3d<T> conv;
  conv.in_channels = in_ch;
  conv.out_channels = out_ch;
  conv.ksize = ksize;
  conv.stride_t = stride_t;
  conv.stride_s = stride_s;
  conv.weight = Tensor<T>({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                           static_cast<std::size_t>(ksize), static_cast<std::size_t>(ksize),
                           static_cast<std::size_t>(ksize)});
  conv.bias = Tensor<T>({static_cast<std::size_t>(out_ch)});
  const double limit = std::sqrt(6.0 / (in_ch * ksize * ksize * ksize));
  for (T& v : conv.weight.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return conv;
}

}  // namespace

template <class T>
Model<T> make_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.freeze_prefix < 0 || config.freeze_prefix > kParamLayers)
    throw Error(Errc::bad_config, "freeze_prefix outside [0,5]");
  Rng rng(seed);
  Model<T> model;
  model.config = config;
  model.stem = make_conv<T>(config.in_channels, config.stem_channels, config.kernel,
                            kConvStrides[0][0], kConvStrides[0][1], rng);
  int in = config.stem_channels;
  for (int s = 0; s < 3; ++s) {
    model.stage[static_cast<std::size_t>(s)] =
        make_conv<T>(in, config.stage_channels[static_cast<std::size_t>(s)], config.kernel,
                     kConvStrides[static_cast<std::size_t>(s) + 1][0],
                     kConvStrides[static_cast<std::size_t>(s) + 1][1], rng);
    in = config.stage_channels[static_cast<std::size_t>(s)];
  }
  model.head.weight =
      Tensor<T>({static_cast<std::size_t>(config.num_classes), static_cast<std::size_t>(in)});
  model.head.bias = Tensor<T>({static_cast<std::size_t>(config.num_classes)});
  const double limit = std::sqrt(6.0 / in);
  for (T& v : model.head.weight.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return model;
}

template <class T>
Gradients<T> make_gradients(const Model<T>& model) {
  Gradients<T> g;
  g.stem_w = Tensor<T>(model.stem.weight.shape);
  g.stem_b = Tensor<T>(model.stem.bias.shape);
  for (std::size_t s = 0; s < 3; ++s) {
    g.stage_w[s] = Tensor<T>(model.stage[s].weight.shape);
    g.stage_b[s] = Tensor<T>(model.stage[s].bias.shape);
  }
  g.head_w = Tensor<T>(model.head.weight.shape);
  g.head_b = Tensor<T>(model.head.bias.shape);
  return g;
}

// ---------------------------------------------------------------------------
// forward / backward

template <class T>
std::vector<T> forward(const Model<T>& model, const Tensor<T>& volume, Workspace<T>& ws) {
  if (volume.shape.size() != 4 ||
      volume.shape[0] != static_cast<std::size_t>(model.config.in_channels))
    throw Error(Errc::shape_mismatch, "volume shape does not match model input");

  conv3d_forward(model.stem, volume, ws.act[0], ws.col);
  relu_forward(ws.act[0]);
  for (std::size_t s = 0; s < 3; ++s) {
    conv3d_forward(model.stage[s], ws.act[s], ws.act[s + 1], ws.col);
    relu_forward(ws.act[s + 1]);
  }
  global_avg_pool_forward(ws.act[3], ws.pooled);
  Tensor<T> logits;
  linear_forward(model.head, ws.pooled, logits);
  return logits.data;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double weighted_cross_entropy(std::span<const double> logits, int label,
                              const ClassWeights& weights) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw Error(Errc::label_out_of_range, "label " + std::to_string(label));
  // -w_y * log softmax_y with log-sum-exp stabilization
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  const double log_prob = logits[static_cast<std::size_t>(label)] - peak - std::log(total);
  return -weights.w[static_cast<std::size_t>(label)] * log_prob;
}

std::vector<double> weighted_cross_entropy_grad(std::span<const double> logits, int label,
                                                const ClassWeights& weights) {
  std::vector<double> grad = softmax(logits);
  grad[static_cast<std::size_t>(label)] -= 1.0;
  const double w = weights.w[static_cast<std::size_t>(label)];
  for (double& v : grad) v *= w;
  return grad;
}

template <class T>
double backward(const Model<T>& model, const Tensor<T>& volume, int label,
                const ClassWeights& weights, Workspace<T>& ws, Gradients<T>& grads) {
  const std::vector<T> logits_t = forward(model, volume, ws);
  std::vector<double> logits(logits_t.begin(), logits_t.end());
  const double loss = weighted_cross_entropy(logits, label, weights);
  const std::vector<double> dlogits = weighted_cross_entropy_grad(logits, label, weights);

  for_each_grad(grads, [](const std::string&, int, Tensor<T>& g) { g.fill(T(0)); });
  const int freeze = model.config.freeze_prefix;
  if (freeze >= kParamLayers) return loss;  // everything frozen

  Tensor<T> dlogits_t;
  dlogits_t.shape = {dlogits.size()};
  dlogits_t.data.assign(dlogits.begin(), dlogits.end());

  // head
  Tensor<T>& d_pooled = ws.grad_a;
  linear_backward(model.head, ws.pooled, dlogits_t, freeze <= 3 ? &d_pooled : nullptr,
                  grads.head_w, grads.head_b);
  if (freeze > 3) return loss;

  global_avg_pool_backward(ws.act[3].shape, d_pooled, ws.grad_b);

  // stages, top down; ws.grad_b holds d(post-activation) of stage s output
  for (int s = 2; s >= -1; --s) {
    const Conv3d<T>& conv = s >= 0 ? model.stage[static_cast<std::size_t>(s)] : model.stem;
    const int layer_index = s + 1;  // stem is parameter layer 0
    if (layer_index < freeze) break;
    Tensor<T>& output = ws.act[static_cast<std::size_t>(s + 1)];
    const Tensor<T>& input = s >= 0 ? ws.act[static_cast<std::size_t>(s)] : volume;
    relu_backward(output, ws.grad_b);
    Tensor<T>& dw = s >= 0 ? grads.stage_w[static_cast<std::size_t>(s)] : grads.stem_w;
    Tensor<T>& db = s >= 0 ? grads.stage_b[static_cast<std::size_t>(s)] : grads.stem_b;
    const bool need_dx = layer_index > freeze && layer_index > 0;
    conv3d_backward(conv, input, ws.grad_b, need_dx ? &ws.grad_a : nullptr, dw, db, ws.col,
                    ws.dcol);
    if (!need_dx) break;
    std::swap(ws.grad_a, ws.grad_b);
  }
  return loss;
}

Tensor<float> to_tensor(const heatmap::HeatmapVolume& volume) {
  Tensor<float> t({static_cast<std::size_t>(volume.channels), static_cast<std::size_t>(volume.frames),
                   static_cast<std::size_t>(volume.rows), static_cast<std::size_t>(volume.cols)});
  t.data = volume.values;
  return t;
}

std::vector<float> forward(const Model<float>& model, const heatmap::HeatmapVolume& volume) {
  Workspace<float> ws;
  return forward(model, to_tensor(volume), ws);
}

Prediction predict(const Model<float>& model, const heatmap::HeatmapVolume& volume) {
  const std::vector<float> logits_f = forward(model, volume);
  const std::vector<double> logits(logits_f.begin(), logits_f.end());
  Prediction p;
  p.probs = softmax(logits);
  p.label = 0;
  for (std::size_t k = 1; k < p.probs.size(); ++k)
    if (p.probs[k] > p.probs[static_cast<std::size_t>(p.label)]) p.label = static_cast<int>(k);
  return p;
}

// ---------------------------------------------------------------------------
// training

namespace {

/// 64-bit mirror of the parameter set, used for momentum and accumulation.
struct FlatBuffers {
  std::vector<std::vector<double>> tensors;

  explicit FlatBuffers(Model<float>& model) {
    for_each_param(model, [&](const std::string&, int, Tensor<float>& p) {
      tensors.emplace_back(p.size(), 0.0);
    });
  }
  void zero() {
    for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
  }
};

}  // namespace

void calibrate_init(Model<float>& model, const VolumeDataset& data, std::size_t sample_count) {
  const std::size_t count = std::min(sample_count, data.size());
  if (count == 0) return;

  std::vector<Tensor<float>> acts;
  acts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) acts.push_back(data.volume(i));

  const auto rescale = [](Tensor<float>& weights, std::vector<Tensor<float>>& outputs) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& out : outputs)
      for (float v : out.data) {
        sum += v;
        sum_sq += static_cast<double>(v) * v;
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    const double variance = std::max(sum_sq / static_cast<double>(n) - mean * mean, 0.0);
    const double std_dev = std::sqrt(variance);
    if (std_dev < 1e-8) return;
    const float scale = static_cast<float>(1.0 / std_dev);
    for (float& w : weights.data) w *= scale;
    // biases are zero, so scaling the outputs in place matches a recompute
    for (auto& out : outputs)
      for (float& v : out.data) v *= scale;
  };

  std::vector<float> col;
  for (int layer = 0; layer < 4; ++layer) {
    Conv3d<float>& conv = layer == 0 ? model.stem : model.stage[static_cast<std::size_t>(layer - 1)];
    std::vector<Tensor<float>> outs(count);
    for (std::size_t i = 0; i < count; ++i) conv3d_forward(conv, acts[i], outs[i], col);
    rescale(conv.weight, outs);
    for (auto& out : outs) relu_forward(out);
    acts = std::move(outs);
  }

  std::vector<Tensor<float>> logits(count);
  Tensor<float> pooled;
  for (std::size_t i = 0; i < count; ++i) {
    global_avg_pool_forward(acts[i], pooled);
    linear_forward(model.head, pooled, logits[i]);
  }
  rescale(model.head.weight, logits);
}

TrainResult train(const VolumeDataset& data, const ModelConfig& model_config,
                  const TrainConfig& train_config, const ClassWeights& weights) {
  if (data.size() == 0) throw Error(Errc::empty_dataset, "training dataset is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data.label(i);
    if (label < 0 || label >= model_config.num_classes)
      throw Error(Errc::label_out_of_range,
                  "label " + std::to_string(label) + " at sample " + std::to_string(i));
  }

  TrainResult result;
  result.model = make_model<float>(model_config, train_config.seed);
  if (train_config.calibrate_init) calibrate_init(result.model, data);
  Model<float>& model = result.model;

  const int batch = std::max(1, train_config.batch_size);
  const int threads = train_config.threads > 0 ? train_config.threads : omp_get_max_threads();

  FlatBuffers velocity(model);
  FlatBuffers accum(model);
  std::vector<Gradients<float>> slot_grads(static_cast<std::size_t>(batch));
  for (auto& g : slot_grads) g = make_gradients(model);
  std::vector<double> slot_loss(static_cast<std::size_t>(batch), 0.0);
  std::vector<Workspace<float>> workspaces(static_cast<std::size_t>(threads));

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(splitmix64(train_config.seed ^ 0x7261696e21ULL));

  result.epoch_loss.reserve(static_cast<std::size_t>(train_config.epochs));
  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch)) {
      const std::size_t count = std::min(static_cast<std::size_t>(batch), order.size() - begin);

#pragma omp parallel for num_threads(threads) schedule(dynamic, 1)
      for (std::size_t slot = 0; slot < count; ++slot) {
        Workspace<float>& ws = workspaces[static_cast<std::size_t>(omp_get_thread_num())];
        const std::size_t sample = order[begin + slot];
        const Tensor<float> volume = data.volume(sample);
        slot_loss[slot] =
            backward(model, volume, data.label(sample), weights, ws, slot_grads[slot]);
      }

      // fixed-order 64-bit reduction keeps results thread-count independent
      accum.zero();
      for (std::size_t slot = 0; slot < count; ++slot) {
        std::size_t idx = 0;
        for_each_grad(slot_grads[slot], [&](const std::string&, int, Tensor<float>& g) {
          auto& acc = accum.tensors[idx++];
          for (std::size_t j = 0; j < g.size(); ++j) acc[j] += static_cast<double>(g.data[j]);
        });
        epoch_loss += slot_loss[slot];
      }

      const double inv_count = 1.0 / static_cast<double>(count);
      std::size_t idx = 0;
      for_each_param(model, [&](const std::string&, int layer, Tensor<float>& p) {
        auto& vel = velocity.tensors[idx];
        auto& acc = accum.tensors[idx];
        ++idx;
        if (layer < model.config.freeze_prefix) return;
        for (std::size_t j = 0; j < p.size(); ++j) {
          vel[j] = train_config.momentum * vel[j] - train_config.learning_rate * acc[j] * inv_count;
          p.data[j] = static_cast<float>(static_cast<double>(p.data[j]) + vel[j]);
        }
      });
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'G', 'K', 'M'};
constexpr std::uint16_t kVersion = 1;

template <class T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_checked(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw Error(Errc::truncated_file, "checkpoint truncated");
}

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

std::vector<NamedTensor> read_tensors(std::istream& in) {
  char magic[4];
  in.read(magic, sizeof(magic));
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(Errc::bad_magic, "not an EGKM checkpoint");
  std::uint16_t version = 0;
  read_checked(in, version);
  if (version != kVersion)
    throw Error(Errc::version_mismatch, "checkpoint version " + std::to_string(version));
  std::uint16_t count = 0;
  read_checked(in, count);
  std::vector<NamedTensor> tensors(count);
  for (auto& entry : tensors) {
    std::uint16_t name_len = 0;
    read_checked(in, name_len);
    entry.name.resize(name_len);
    in.read(entry.name.data(), name_len);
    if (in.gcount() != static_cast<std::streamsize>(name_len))
      throw Error(Errc::truncated_file, "checkpoint truncated");
    std::uint8_t rank = 0;
    read_checked(in, rank);
    entry.tensor.shape.resize(rank);
    for (auto& dim : entry.tensor.shape) {
      std::uint32_t d = 0;
      read_checked(in, d);
      dim = d;
    }
    const std::size_t n = Tensor<float>::element_count(entry.tensor.shape);
    entry.tensor.data.resize(n);
    in.read(reinterpret_cast<char*>(entry.tensor.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
      throw Error(Errc::truncated_file, "checkpoint truncated");
  }
  return tensors;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);
  std::uint16_t count = 0;
  auto& mutable_model = const_cast<Model<float>&>(model);
  for_each_param(mutable_model, [&](const std::string&, int, Tensor<float>&) { ++count; });
  write_raw(out, count);
  for_each_param(mutable_model, [&](const std::string& name, int, Tensor<float>& p) {
    write_raw(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(out, static_cast<std::uint8_t>(p.shape.size()));
    for (std::size_t dim : p.shape) write_raw(out, static_cast<std::uint32_t>(dim));
    out.write(reinterpret_cast<const char*>(p.data.data()),
              static_cast<std::streamsize>(p.size() * sizeof(float)));
  });
  if (!out) throw Error(Errc::io_failure, "write failed for " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  auto tensors = read_tensors(in);

  auto find = [&](const std::string& name) -> Tensor<float>& {
    for (auto& entry : tensors)
      if (entry.name == name) return entry.tensor;
    throw Error(Errc::truncated_file, "checkpoint is missing tensor " + name);
  };

  const Tensor<float>& stem_w = find("stem.weight");
  if (stem_w.shape.size() != 5) throw Error(Errc::shape_mismatch, "stem.weight must be rank 5");
  ModelConfig config;
  config.stem_channels = static_cast<int>(stem_w.shape[0]);
  config.in_channels = static_cast<int>(stem_w.shape[1]);
  config.kernel = static_cast<int>(stem_w.shape[2]);
  for (int s = 0; s < 3; ++s)
    config.stage_channels[static_cast<std::size_t>(s)] = static_cast<int>(
        find("stage" + std::to_string(s + 1) + ".weight").shape[0]);
  config.num_classes = static_cast<int>(find("head.weight").shape[0]);

  Model<float> model = make_model<float>(config, 0);
  for_each_param(model, [&](const std::string& name, int, Tensor<float>& p) {
    Tensor<float>& stored = find(name);
    if (stored.shape != p.shape)
      throw Error(Errc::shape_mismatch, "checkpoint tensor " + name + " has unexpected shape");
    p = stored;
  });
  return model;
}

// explicit instantiations: production runs float32, gradient checks float64
template Model<float> make_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> make_model<double>(const ModelConfig&, std::uint64_t);
template Gradients<float> make_gradients<float>(const Model<float>&);
template Gradients<double> make_gradients<double>(const Model<double>&);
template std::vector<float> forward<float>(const Model<float>&, const Tensor<float>&,
                                           Workspace<float>&);
template std::vector<double> forward<double>(const Model<double>&, const Tensor<double>&,
                                             Workspace<double>&);
template double backward<float>(const Model<float>&, const Tensor<float>&, int,
                                const ClassWeights&, Workspace<float>&, Gradients<float>&);
template double backward<double>(const Model<double>&, const Tensor<double>&, int,
                                 const ClassWeights&, Workspace<double>&, Gradients<double>&);

}  // namespace engage::net3d
