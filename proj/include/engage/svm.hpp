#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace engage::svm {

enum class KernelType { linear, rbf };

struct KernelSpec {
  KernelType type = KernelType::linear;
  double gamma = 0.5;  // rbf only
};

struct SvmConfig {
  double c = 1.0;
  KernelSpec kernel;
  bool class_weighting = true;  // per-class penalties C_k proportional to N / (2 n_k)
  double tol = 1e-3;
  std::uint64_t max_iter = 10'000'000;
  std::uint64_t seed = 0;  // reserved; pair selection is deterministic (ties by index)
};

/// Binary classifier; labels are +1 / -1. Linear models carry collapsed
/// primal weights; rbf models carry support vectors and dual coefficients.
struct SvmModel {
  KernelSpec kernel;
  std::size_t dim = 0;
  double bias = 0.0;
  std::vector<double> weights;                       // linear
  std::vector<std::vector<double>> support_vectors;  // rbf
  std::vector<double> dual_coef;                     // rbf: alpha_i * y_i
  double c_positive = 1.0;
  double c_negative = 1.0;
};

/// Dual-solver internals exposed for verification.
struct TrainDiagnostics {
  std::vector<double> alpha;
  double kkt_gap = 0.0;       // final max-violating-pair gap
  std::uint64_t iterations = 0;
};

/// Sequential minimal optimization on the dual: repeatedly picks the maximal
/// violating pair (ties broken by lower index), solves the two-variable
/// subproblem analytically, and stops once every KKT condition holds within
/// tol. Throws single_class_data and no_convergence.
SvmModel train_svm(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                   const SvmConfig& config, TrainDiagnostics* diagnostics = nullptr);

double decision_value(const SvmModel& model, std::span<const double> feature);

/// Sign of the decision value; exact zero resolves to +1.
int predict(const SvmModel& model, std::span<const double> feature);

/// Max per-sample KKT residual of (alpha, bias) on the training set, using
/// the trained model's per-class penalties.
double max_kkt_residual(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                        const SvmModel& model, const TrainDiagnostics& diagnostics);

void save_svm(const SvmModel& model, const std::filesystem::path& path);
SvmModel load_svm(const std::filesystem::path& path);

}  // namespace engage::svm
