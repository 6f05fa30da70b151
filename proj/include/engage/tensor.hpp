#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace engage::net3d {

/// Dense row-major tensor. Shape is dynamic; data is contiguous.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims)
      : shape(std::move(dims)), data(element_count(shape), T(0)) {}

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
  }

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  void fill(T value) { std::fill(data.begin(), data.end(), value); }

  bool operator==(const Tensor&) const = default;
};

namespace detail {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, dispatched to BLAS.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

}  // namespace detail

}  // namespace engage::net3d
