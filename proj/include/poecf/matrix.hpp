#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poecf/rng.hpp"

namespace poecf {

using Vec = std::vector<double>;

// Row-major dense matrix of 64-bit reals. Biases are stored as 1 x n so that
// every trainable tensor has the same shape bookkeeping.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), data(check_size(r, c), 0.0) {}

  double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  std::size_t size() const { return data.size(); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Symmetric uniform init with a = sqrt(6 / (fan_in + fan_out)).
  void init_uniform_glorot(int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
    for (double& v : data) v = (2.0 * rng.next_unit() - 1.0) * a;
  }

 private:
  static std::size_t check_size(int r, int c) {
    if (r < 0 || c < 0) throw std::invalid_argument("DenseMatrix: negative dimension");
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
  }
};

inline void check_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
}

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace poecf
