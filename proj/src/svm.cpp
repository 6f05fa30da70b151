#include "engage/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "engage/errors.hpp"

namespace engage::svm {

namespace {

double kernel_value(const KernelSpec& spec, std::span<const double> a, std::span<const double> b) {
  if (spec.type == KernelType::linear) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
  }
  double dist2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    dist2 += d * d;
  }
  return std::exp(-spec.gamma * dist2);
}

}  // namespace

SvmModel train_svm(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                   const SvmConfig& config, TrainDiagnostics* diagnostics) {
  const std::size_t n = x.size();
  if (n == 0 || y.size() != n)
    throw Error(Errc::length_mismatch, "feature and label counts differ");
  const std::size_t dim = x[0].size();
  for (const auto& row : x)
    if (row.size() != dim) throw Error(Errc::dimension_mismatch, "ragged feature matrix");

  std::size_t n_pos = 0, n_neg = 0;
  for (int label : y) {
    if (label == 1)
      ++n_pos;
    else if (label == -1)
      ++n_neg;
    else
      throw Error(Errc::label_out_of_range, "labels must be +1 or -1");
  }
  if (n_pos == 0 || n_neg == 0)
    throw Error(Errc::single_class_data, "training data carries a single class");

  double c_pos = config.c, c_neg = config.c;
  if (config.class_weighting) {
    c_pos = config.c * static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
    c_neg = config.c * static_cast<double>(n) / (2.0 * static_cast<double>(n_neg));
  }

  // Dense kernel cache; the feature sets here are a few hundred windows.
  std::vector<double> kernel(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      kernel[i * n + j] = kernel[j * n + i] = kernel_value(config.kernel, x[i], x[j]);

  // Solve: max sum(alpha) - 1/2 alpha' Q alpha, 0 <= alpha_i <= C_i,
  // sum alpha_i y_i = 0. g_i is the dual gradient 1 - y_i sum_j alpha_j y_j K_ij.
  // upper(y)/lower(y) bound y_i * alpha_i from above/below.
  std::vector<double> alpha(n, 0.0);
  std::vector<double> g(n, 1.0);
  const auto upper = [&](int label) { return label == 1 ? c_pos : 0.0; };
  const auto lower = [&](int label) { return label == 1 ? 0.0 : -c_neg; };

  std::uint64_t iterations = 0;
  double gap = std::numeric_limits<double>::infinity();
  while (true) {
    // maximal violating pair
    std::ptrdiff_t i = -1, j = -1;
    double i_max = -std::numeric_limits<double>::infinity();
    double j_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const double yg = y[k] * g[k];
      const double ya = y[k] * alpha[k];
      if (ya < upper(y[k]) && yg > i_max) {
        i = static_cast<std::ptrdiff_t>(k);
        i_max = yg;
      }
      if (ya > lower(y[k]) && yg < j_min) {
        j = static_cast<std::ptrdiff_t>(k);
        j_min = yg;
      }
    }
    gap = i_max - j_min;
    if (i < 0 || j < 0 || gap <= config.tol) break;
    if (++iterations > config.max_iter)
      throw Error(Errc::no_convergence,
                  "SMO did not converge within " + std::to_string(config.max_iter) + " updates");

    const std::size_t ii = static_cast<std::size_t>(i);
    const std::size_t jj = static_cast<std::size_t>(j);
    const double quad =
        std::max(kernel[ii * n + ii] + kernel[jj * n + jj] - 2.0 * kernel[ii * n + jj], 1e-12);
    double step = gap / quad;
    step = std::min(step, upper(y[ii]) - y[ii] * alpha[ii]);
    step = std::min(step, y[jj] * alpha[jj] - lower(y[jj]));

    alpha[ii] += y[ii] * step;
    alpha[jj] -= y[jj] * step;
    for (std::size_t k = 0; k < n; ++k)
      g[k] -= step * y[k] * (kernel[ii * n + k] - kernel[jj * n + k]);
  }

  // bias from free vectors, else the midpoint of the final violating pair
  double bias = 0.0;
  std::size_t free_count = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double cap = y[k] == 1 ? c_pos : c_neg;
    if (alpha[k] > 0.0 && alpha[k] < cap) {
      bias += y[k] * g[k];
      ++free_count;
    }
  }
  if (free_count > 0) {
    bias /= static_cast<double>(free_count);
  } else {
    double i_max = -std::numeric_limits<double>::infinity();
    double j_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const double yg = y[k] * g[k];
      const double ya = y[k] * alpha[k];
      if (ya < upper(y[k])) i_max = std::max(i_max, yg);
      if (ya > lower(y[k])) j_min = std::min(j_min, yg);
    }
    bias = (i_max + j_min) / 2.0;
  }

  SvmModel model;
  model.kernel = config.kernel;
  model.dim = dim;
  model.bias = bias;
  model.c_positive = c_pos;
  model.c_negative = c_neg;
  if (config.kernel.type == KernelType::linear) {
    model.weights.assign(dim, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      if (alpha[k] == 0.0) continue;
      const double coef = alpha[k] * y[k];
      for (std::size_t d = 0; d < dim; ++d) model.weights[d] += coef * x[k][d];
    }
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      if (alpha[k] == 0.0) continue;
      model.support_vectors.push_back(x[k]);
      model.dual_coef.push_back(alpha[k] * y[k]);
    }
  }

  if (diagnostics != nullptr) {
    diagnostics->alpha = std::move(alpha);
    diagnostics->kkt_gap = gap;
    diagnostics->iterations = iterations;
  }
  return model;
}

double decision_value(const SvmModel& model, std::span<const double> feature) {
  if (feature.size() != model.dim)
    throw Error(Errc::dimension_mismatch, "feature dimension " + std::to_string(feature.size()) +
                                              " does not match model dimension " +
                                              std::to_string(model.dim));
  if (model.kernel.type == KernelType::linear) {
    double dot = model.bias;
    for (std::size_t d = 0; d < model.dim; ++d) dot += model.weights[d] * feature[d];
    return dot;
  }
  double value = model.bias;
  for (std::size_t s = 0; s < model.support_vectors.size(); ++s)
    value += model.dual_coef[s] * kernel_value(model.kernel, model.support_vectors[s], feature);
  return value;
}

int predict(const SvmModel& model, std::span<const double> feature) {
  return decision_value(model, feature) >= 0.0 ? 1 : -1;
}

double max_kkt_residual(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                        const SvmModel& model, const TrainDiagnostics& diagnostics) {
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double margin = y[k] * decision_value(model, x[k]);
    const double cap = y[k] == 1 ? model.c_positive : model.c_negative;
    const double a = diagnostics.alpha[k];
    double residual = 0.0;
    if (a <= 0.0)
      residual = std::max(0.0, 1.0 - margin);
    else if (a >= cap)
      residual = std::max(0.0, margin - 1.0);
    else
      residual = std::abs(margin - 1.0);
    worst = std::max(worst, residual);
  }
  return worst;
}

void save_svm(const SvmModel& model, const std::filesystem::path& path) {
  nlohmann::json obj;
  obj["kernel"] = model.kernel.type == KernelType::linear ? "linear" : "rbf";
  obj["dim"] = model.dim;
  obj["bias"] = model.bias;
  obj["c_positive"] = model.c_positive;
  obj["c_negative"] = model.c_negative;
  if (model.kernel.type == KernelType::linear) {
    obj["weights"] = model.weights;
  } else {
    obj["gamma"] = model.kernel.gamma;
    obj["support_vectors"] = model.support_vectors;
    obj["dual_coef"] = model.dual_coef;
  }
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << obj.dump(2) << '\n';
}

SvmModel load_svm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  nlohmann::json obj = nlohmann::json::parse(in, nullptr, false);
  if (obj.is_discarded()) throw Error(Errc::malformed_line, "invalid SVM model JSON");
  SvmModel model;
  const std::string kernel = obj.at("kernel").get<std::string>();
  model.kernel.type = kernel == "linear" ? KernelType::linear : KernelType::rbf;
  model.dim = obj.at("dim").get<std::size_t>();
  model.bias = obj.at("bias").get<double>();
  model.c_positive = obj.value("c_positive", 1.0);
  model.c_negative = obj.value("c_negative", 1.0);
  if (model.kernel.type == KernelType::linear) {
    model.weights = obj.at("weights").get<std::vector<double>>();
  } else {
    model.kernel.gamma = obj.at("gamma").get<double>();
    model.support_vectors = obj.at("support_vectors").get<std::vector<std::vector<double>>>();
    model.dual_coef = obj.at("dual_coef").get<std::vector<double>>();
  }
  return model;
}

}  // namespace engage::svm
