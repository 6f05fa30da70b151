#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "engage/errors.hpp"
#include "engage/net3d.hpp"
#include "engage/rng.hpp"
#include "oracles.hpp"

using namespace engage;
using net3d::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Relative error with a floor against division blowups.
double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences of `loss` against one tensor's entries.
template <class LossFn>
double max_grad_error(Tensor<double>& params, const Tensor<double>& analytic, LossFn&& loss,
                      std::size_t probe_count, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t idx : oracles::spread_probes(params.size(), probe_count)) {
    const double saved = params.data[idx];
    params.data[idx] = saved + step;
    const double up = loss();
    params.data[idx] = saved - step;
    const double down = loss();
    params.data[idx] = saved;
    worst = std::max(worst, rel_error(analytic.data[idx], (up - down) / (2.0 * step)));
  }
  return worst;
}

/// Weighted sum of the output entries makes a scalar loss whose output
/// gradient is exactly the projection tensor.
Tensor<double> random_projection(const std::vector<std::size_t>& shape, Rng& rng) {
  Tensor<double> p(shape);
  for (auto& v : p.data) v = rng.uniform(-1.0, 1.0);
  return p;
}

double project(const Tensor<double>& value, const Tensor<double>& projection) {
  double sum = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) sum += value.data[i] * projection.data[i];
  return sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// layer-level gradients vs central finite differences (64-bit)

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(101);
  for (const auto& [stride_t, stride_s, ksize] :
       {std::tuple{1, 2, 3}, std::tuple{2, 2, 3}, std::tuple{1, 1, 3}, std::tuple{1, 2, 1}}) {
    net3d::Conv3d<double> conv;
    conv.in_channels = 2;
    conv.out_channels = 3;
    conv.ksize = ksize;
    conv.stride_t = stride_t;
    conv.stride_s = stride_s;
    conv.weight = random_tensor({3, 2, static_cast<std::size_t>(ksize),
                                 static_cast<std::size_t>(ksize), static_cast<std::size_t>(ksize)},
                                rng);
    conv.bias = random_tensor({3}, rng);
    Tensor<double> x = random_tensor({2, 4, 6, 5}, rng);

    std::vector<double> col, dcol;
    Tensor<double> y;
    net3d::conv3d_forward(conv, x, y, col);
    const Tensor<double> projection = random_projection(y.shape, rng);

    Tensor<double> dx, dw, db;
    net3d::conv3d_backward(conv, x, projection, &dx, dw, db, col, dcol);

    const auto loss = [&] {
      Tensor<double> out;
      std::vector<double> scratch;
      net3d::conv3d_forward(conv, x, out, scratch);
      return project(out, projection);
    };
    CHECK(max_grad_error(conv.weight, dw, loss, 40) < 1e-4);
    CHECK(max_grad_error(conv.bias, db, loss, 3) < 1e-4);
    CHECK(max_grad_error(x, dx, loss, 40) < 1e-4);
  }
}

TEST_CASE("relu backward masks by the post-activation sign") {
  Rng rng(103);
  Tensor<double> x = random_tensor({3, 2, 4, 4}, rng);
  for (auto& v : x.data)
    if (std::abs(v) < 0.01) v = 0.05;  // keep probes away from the kink
  const Tensor<double> projection = random_projection(x.shape, rng);

  Tensor<double> y = x;
  net3d::relu_forward(y);
  Tensor<double> dy = projection;
  net3d::relu_backward(y, dy);

  const auto loss = [&] {
    Tensor<double> out = x;
    net3d::relu_forward(out);
    return project(out, projection);
  };
  CHECK(max_grad_error(x, dy, loss, 60) < 1e-4);
}

TEST_CASE("global average pool gradients match finite differences") {
  Rng rng(105);
  Tensor<double> x = random_tensor({4, 2, 3, 3}, rng);
  Tensor<double> pooled;
  net3d::global_avg_pool_forward(x, pooled);
  const Tensor<double> projection = random_projection(pooled.shape, rng);

  Tensor<double> dx;
  net3d::global_avg_pool_backward(x.shape, projection, dx);
  const auto loss = [&] {
    Tensor<double> out;
    net3d::global_avg_pool_forward(x, out);
    return project(out, projection);
  };
  CHECK(max_grad_error(x, dx, loss, 50) < 1e-4);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(107);
  net3d::Linear<double> layer;
  layer.weight = random_tensor({5, 7}, rng);
  layer.bias = random_tensor({5}, rng);
  Tensor<double> x = random_tensor({7}, rng);
  Tensor<double> y;
  net3d::linear_forward(layer, x, y);
  const Tensor<double> projection = random_projection(y.shape, rng);

  Tensor<double> dx, dw, db;
  net3d::linear_backward(layer, x, projection, &dx, dw, db);
  const auto loss = [&] {
    Tensor<double> out;
    net3d::linear_forward(layer, x, out);
    return project(out, projection);
  };
  CHECK(max_grad_error(layer.weight, dw, loss, 35) < 1e-4);
  CHECK(max_grad_error(layer.bias, db, loss, 5) < 1e-4);
  CHECK(max_grad_error(x, dx, loss, 7) < 1e-4);
}

// ---------------------------------------------------------------------------
// weighted cross-entropy

TEST_CASE("uniform weights reduce the loss to plain cross-entropy") {
  Rng rng(109);
  const auto weights = net3d::uniform_weights(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(13);
    for (auto& v : logits) v = rng.uniform(-5.0, 5.0);
    const int label = rng.uniform_int(0, 12);
    const auto probs = net3d::softmax(logits);
    const double plain = -std::log(probs[static_cast<std::size_t>(label)]);
    CHECK(net3d::weighted_cross_entropy(logits, label, weights) ==
          doctest::Approx(plain).epsilon(1e-12));
  }
}

TEST_CASE("equal logits cost w_y * ln 13") {
  std::vector<double> logits(13, 0.7);
  const auto uniform = net3d::uniform_weights(13);
  CHECK(std::abs(net3d::weighted_cross_entropy(logits, 4, uniform) - std::log(13.0)) < 1e-9);
  net3d::ClassWeights weights = uniform;
  weights.w[4] = 2.5;
  CHECK(std::abs(net3d::weighted_cross_entropy(logits, 4, weights) - 2.5 * std::log(13.0)) < 1e-9);
  CHECK(std::log(13.0) == doctest::Approx(2.564949).epsilon(1e-6));
}

TEST_CASE("loss gradient is w_y (softmax - onehot) and matches finite differences") {
  Rng rng(111);
  for (int trial = 0; trial < 50; ++trial) {
    // logits in [-2, 2] keep every softmax component >= e^-4 / 13, so the
    // 1e-6 relative bound is meaningful against float64 differencing noise
    std::vector<double> logits(13);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
    const int label = rng.uniform_int(0, 12);
    net3d::ClassWeights weights = net3d::uniform_weights(13);
    for (auto& w : weights.w) w = rng.uniform(0.5, 2.0);

    const auto grad = net3d::weighted_cross_entropy_grad(logits, label, weights);
    const auto probs = net3d::softmax(logits);
    for (std::size_t k = 0; k < 13; ++k) {
      const double expected =
          weights.w[static_cast<std::size_t>(label)] * (probs[k] - (static_cast<int>(k) == label));
      CHECK(grad[k] == doctest::Approx(expected).epsilon(1e-12));
    }

    const double step = 2e-5;
    for (std::size_t k = 0; k < 13; ++k) {
      const double saved = logits[k];
      logits[k] = saved + step;
      const double up = net3d::weighted_cross_entropy(logits, label, weights);
      logits[k] = saved - step;
      const double down = net3d::weighted_cross_entropy(logits, label, weights);
      logits[k] = saved;
      CHECK(rel_error(grad[k], (up - down) / (2.0 * step)) < 1e-6);
    }
  }
}

TEST_CASE("inverse-frequency weights are identity on balanced labels") {
  std::vector<int> labels;
  for (int k = 0; k < 13; ++k)
    for (int i = 0; i < 4; ++i) labels.push_back(k);
  const auto weights = net3d::inverse_frequency_weights(labels, 13);
  for (double w : weights.w) CHECK(w == 1.0);
}

TEST_CASE("softmax argmax is shift invariant and probabilities sum to one") {
  Rng rng(113);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(13);
    for (auto& v : logits) v = rng.uniform(-8.0, 8.0);
    const auto base = net3d::softmax(logits);
    double sum = 0.0;
    for (double p : base) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    std::vector<double> shifted = logits;
    const double c = rng.uniform(-50.0, 50.0);
    for (auto& v : shifted) v += c;
    const auto moved = net3d::softmax(shifted);
    const auto argmax = [](const std::vector<double>& v) {
      return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    CHECK(argmax(base) == argmax(moved));
  }
}

// ---------------------------------------------------------------------------
// full-model gradients (downscaled, 64-bit)

namespace {

net3d::ModelConfig downscaled_config() {
  net3d::ModelConfig config;
  config.in_channels = 2;
  config.num_classes = 2;
  config.stem_channels = 4;
  config.stage_channels = {4, 6, 8};
  return config;
}

}  // namespace

TEST_CASE("full downscaled model gradients match finite differences") {
  auto model = net3d::make_model<double>(downscaled_config(), 21);
  Rng rng(115);
  Tensor<double> volume = random_tensor({2, 4, 8, 8}, rng, 0.0, 1.0);
  const int label = 1;
  net3d::ClassWeights weights{{1.3, 0.8}};

  net3d::Workspace<double> ws;
  auto grads = net3d::make_gradients(model);
  net3d::backward(model, volume, label, weights, ws, grads);

  const auto loss = [&] {
    net3d::Workspace<double> fresh;
    const auto logits = net3d::forward(model, volume, fresh);
    return net3d::weighted_cross_entropy(std::vector<double>(logits.begin(), logits.end()), label,
                                         weights);
  };

  std::size_t total_probes = 0;
  double worst = 0.0;
  // params and grads share the same visit order by construction
  std::vector<Tensor<double>*> params, grad_tensors;
  net3d::for_each_param(model, [&](const std::string&, int, Tensor<double>& p) {
    params.push_back(&p);
  });
  net3d::for_each_grad(grads, [&](const std::string&, int, Tensor<double>& g) {
    grad_tensors.push_back(&g);
  });
  REQUIRE(params.size() == grad_tensors.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double err = max_grad_error(*params[i], *grad_tensors[i], loss, 16);
    worst = std::max(worst, err);
    total_probes += std::min<std::size_t>(16, params[i]->size());
  }
  CHECK(total_probes >= 100);
  CHECK(worst < 1e-4);
}

// ---------------------------------------------------------------------------
// forward fixtures

TEST_CASE("zero volume through a zeroed head yields the bias vector") {
  auto model = net3d::make_model<double>(downscaled_config(), 5);
  model.head.weight.fill(0.0);
  model.head.bias.data = {0.3, -0.2};
  net3d::Workspace<double> ws;
  Tensor<double> zero({2, 4, 8, 8});
  const auto logits = net3d::forward(model, zero, ws);
  CHECK(logits[0] == doctest::Approx(0.3));
  CHECK(logits[1] == doctest::Approx(-0.2));
}

TEST_CASE("identical volumes give bit-identical logits") {
  auto model = net3d::make_model<float>(downscaled_config(), 5);
  Rng rng(117);
  Tensor<float> volume({2, 4, 8, 8});
  for (auto& v : volume.data) v = static_cast<float>(rng.uniform());
  net3d::Workspace<float> ws1, ws2;
  const auto a = net3d::forward(model, volume, ws1);
  const auto b = net3d::forward(model, volume, ws2);
  CHECK(a == b);
}

TEST_CASE("1x1x1-kernel model on a 1x1x2x2 input reproduces hand arithmetic") {
  net3d::ModelConfig config;
  config.in_channels = 1;
  config.num_classes = 2;
  config.stem_channels = 1;
  config.stage_channels = {1, 1, 1};
  config.kernel = 1;
  auto model = net3d::make_model<double>(config, 0);

  // stride pattern samples the top-left input value; convs scale it by
  // 0.5, 2, 3, 0.5 in turn, so GAP sees 2 * 0.5 * 2 * 3 * 0.5 = 3
  model.stem.weight.data = {0.5};
  model.stem.bias.data = {0.0};
  model.stage[0].weight.data = {2.0};
  model.stage[1].weight.data = {3.0};
  model.stage[2].weight.data = {0.5};
  for (auto& stage : model.stage) stage.bias.fill(0.0);
  model.head.weight.data = {1.0, -2.0};
  model.head.bias.data = {0.5, 1.0};

  Tensor<double> input({1, 1, 2, 2});
  input.data = {2.0, 7.0, 8.0, 9.0};

  net3d::Workspace<double> ws;
  const auto logits = net3d::forward(model, input, ws);
  CHECK(logits[0] == doctest::Approx(1.0 * 3.0 + 0.5));
  CHECK(logits[1] == doctest::Approx(-2.0 * 3.0 + 1.0));
}

TEST_CASE("forward rejects mismatched volume shapes") {
  auto model = net3d::make_model<double>(downscaled_config(), 5);
  net3d::Workspace<double> ws;
  Tensor<double> wrong({3, 4, 8, 8});
  try {
    net3d::forward(model, wrong, ws);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::shape_mismatch);
  }
}

TEST_CASE("predict breaks exact ties toward the lower class index") {
  net3d::ModelConfig config;
  config.in_channels = 11;
  config.num_classes = 13;
  config.stem_channels = 2;
  config.stage_channels = {2, 2, 2};
  auto model = net3d::make_model<float>(config, 3);
  model.head.weight.fill(0.0f);
  model.head.bias.fill(0.0f);
  model.head.bias.data[2] = 1.5f;
  model.head.bias.data[9] = 1.5f;

  heatmap::HeatmapVolume volume;
  volume.channels = 11;
  volume.frames = 4;
  volume.rows = 8;
  volume.cols = 8;
  volume.values.assign(11 * 4 * 8 * 8, 0.25f);
  const auto prediction = net3d::predict(model, volume);
  CHECK(prediction.label == 2);
  double sum = 0.0;
  for (double p : prediction.probs) sum += p;
  CHECK(std::abs(sum - 1.0) <= 1e-9);
}

// ---------------------------------------------------------------------------
// training

namespace {

net3d::InMemoryDataset tiny_dataset(int samples, int classes, Rng& rng) {
  net3d::InMemoryDataset data;
  for (int i = 0; i < samples; ++i) {
    Tensor<float> volume({2, 4, 8, 8});
    for (auto& v : volume.data) v = static_cast<float>(rng.uniform());
    data.add(std::move(volume), i % classes);
  }
  return data;
}

std::vector<float> flatten_params(net3d::Model<float>& model) {
  std::vector<float> out;
  net3d::for_each_param(model, [&](const std::string&, int, Tensor<float>& p) {
    out.insert(out.end(), p.data.begin(), p.data.end());
  });
  return out;
}

}  // namespace

TEST_CASE("a single sample is memorized within 200 steps") {
  Rng rng(119);
  auto data = tiny_dataset(1, 2, rng);
  net3d::TrainConfig train;
  train.epochs = 200;
  train.batch_size = 1;
  train.learning_rate = 0.01;
  train.seed = 1;
  train.threads = 1;
  const auto result =
      net3d::train(data, downscaled_config(), train, net3d::uniform_weights(2));
  CHECK(result.epoch_loss.back() < 0.01);
  CHECK(result.epoch_loss.size() == 200);
}

TEST_CASE("four samples are memorized below 0.05 within 500 steps at lr 0.01") {
  Rng rng(121);
  auto data = tiny_dataset(4, 2, rng);
  net3d::TrainConfig train;
  train.epochs = 500;
  train.batch_size = 4;
  train.learning_rate = 0.01;
  train.seed = 2;
  train.threads = 1;
  const auto result =
      net3d::train(data, downscaled_config(), train, net3d::uniform_weights(2));
  CHECK(result.epoch_loss.back() < 0.05);
}

TEST_CASE("the same seed trains to bit-identical parameters") {
  Rng rng(123);
  auto data = tiny_dataset(6, 2, rng);
  net3d::TrainConfig train;
  train.epochs = 3;
  train.batch_size = 2;
  train.seed = 77;
  train.threads = 2;
  auto a = net3d::train(data, downscaled_config(), train, net3d::uniform_weights(2));
  auto b = net3d::train(data, downscaled_config(), train, net3d::uniform_weights(2));
  CHECK(flatten_params(a.model) == flatten_params(b.model));
  CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("thread count does not change the result") {
  Rng rng(125);
  auto data = tiny_dataset(8, 2, rng);
  net3d::TrainConfig train;
  train.epochs = 2;
  train.batch_size = 4;
  train.seed = 9;
  train.threads = 1;
  auto serial = net3d::train(data, downscaled_config(), train, net3d::uniform_weights(2));
  train.threads = 4;
  auto parallel = net3d::train(data, downscaled_config(), train, net3d::uniform_weights(2));
  CHECK(flatten_params(serial.model) == flatten_params(parallel.model));
}

TEST_CASE("a duplicated sample in a batch of two steps like the single sample") {
  Rng rng(127);
  Tensor<float> volume({2, 4, 8, 8});
  for (auto& v : volume.data) v = static_cast<float>(rng.uniform());

  net3d::InMemoryDataset one;
  one.add(volume, 1);
  net3d::InMemoryDataset two;
  two.add(volume, 1);
  two.add(volume, 1);

  net3d::TrainConfig train;
  train.epochs = 1;
  train.batch_size = 2;
  train.seed = 4;
  train.threads = 1;
  auto a = net3d::train(one, downscaled_config(), train, net3d::uniform_weights(2));
  auto b = net3d::train(two, downscaled_config(), train, net3d::uniform_weights(2));
  CHECK(flatten_params(a.model) == flatten_params(b.model));
}

TEST_CASE("freezing the first two layers pins stem and stage 1") {
  Rng rng(129);
  auto data = tiny_dataset(4, 2, rng);
  net3d::ModelConfig config = downscaled_config();
  config.freeze_prefix = 2;
  net3d::TrainConfig train;
  train.epochs = 3;
  train.batch_size = 2;
  train.seed = 11;
  train.threads = 1;

  auto initial = net3d::make_model<float>(config, train.seed);
  net3d::calibrate_init(initial, data);  // train() applies the same init pass
  const auto result = net3d::train(data, config, train, net3d::uniform_weights(2));
  CHECK(result.model.stem.weight.data == initial.stem.weight.data);
  CHECK(result.model.stem.bias.data == initial.stem.bias.data);
  CHECK(result.model.stage[0].weight.data == initial.stage[0].weight.data);
  CHECK(result.model.stage[1].weight.data != initial.stage[1].weight.data);
  CHECK(result.model.head.weight.data != initial.head.weight.data);
}

TEST_CASE("freezing every layer leaves all parameters and the loss unchanged") {
  Rng rng(131);
  auto data = tiny_dataset(4, 2, rng);
  net3d::ModelConfig config = downscaled_config();
  config.freeze_prefix = 5;
  net3d::TrainConfig train;
  train.epochs = 3;
  train.batch_size = 2;
  train.seed = 13;
  train.threads = 1;
  auto initial = net3d::make_model<float>(config, train.seed);
  net3d::calibrate_init(initial, data);
  auto result = net3d::train(data, config, train, net3d::uniform_weights(2));
  CHECK(flatten_params(result.model) == flatten_params(initial));
  CHECK(result.epoch_loss.front() == doctest::Approx(result.epoch_loss.back()));

  // and the gradient buffers really are zero
  net3d::Workspace<float> ws;
  auto grads = net3d::make_gradients(initial);
  net3d::backward(initial, data.volume(0), data.label(0), net3d::uniform_weights(2), ws, grads);
  net3d::for_each_grad(grads, [&](const std::string&, int, Tensor<float>& g) {
    for (float v : g.data) CHECK(v == 0.0f);
  });
}

TEST_CASE("training rejects empty datasets and out-of-range labels") {
  net3d::InMemoryDataset empty;
  net3d::TrainConfig train;
  CHECK_THROWS_AS(net3d::train(empty, downscaled_config(), train, net3d::uniform_weights(2)),
                  Error);

  net3d::InMemoryDataset bad;
  bad.add(Tensor<float>({2, 4, 8, 8}), 7);  // only 2 classes
  try {
    net3d::train(bad, downscaled_config(), train, net3d::uniform_weights(2));
    FAIL("expected LabelOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::label_out_of_range);
  }
}

// ---------------------------------------------------------------------------
// checkpoints

TEST_CASE("checkpoints round-trip bit-exactly and reject damage") {
  const auto dir = std::filesystem::temp_directory_path() / "engage_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.egkm";

  auto model = net3d::make_model<float>(downscaled_config(), 42);
  net3d::save_checkpoint(model, path);
  auto loaded = net3d::load_checkpoint(path);
  CHECK(flatten_params(model) == flatten_params(loaded));
  CHECK(loaded.config.in_channels == 2);
  CHECK(loaded.config.num_classes == 2);
  CHECK(loaded.config.stage_channels == std::array<int, 3>{4, 6, 8});

  // corrupt the magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  try {
    net3d::load_checkpoint(path);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_magic);
  }

  // rewrite, then truncate the payload
  net3d::save_checkpoint(model, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 64);
  try {
    net3d::load_checkpoint(path);
    FAIL("expected TruncatedFile");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::truncated_file);
  }

  // version bump
  net3d::save_checkpoint(model, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint16_t v = 9;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  try {
    net3d::load_checkpoint(path);
    FAIL("expected VersionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::version_mismatch);
  }
  std::filesystem::remove_all(dir);
}
