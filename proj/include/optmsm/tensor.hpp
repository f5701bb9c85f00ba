// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "optmsm/errors.hpp"
#include "optmsm/rng.hpp"

namespace optmsm {

/// Dense rank-2 tensor of 64-bit floats, row-major. Every quantity in the
/// library is a matrix: row vectors are 1 x n, column vectors n x 1, scalars
/// 1 x 1. Batched activations are (batch x width).
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), v(std::move(values)) {
    if (v.size() != static_cast<std::size_t>(r) * c) {
      throw ShapeError("tensor value count " + std::to_string(v.size()) +
                       " does not match shape " + shape_str(r, c));
    }
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, double x) {
    Tensor t(r, c);
    for (double& e : t.v) e = x;
    return t;
  }

  static Tensor scalar(double x) { return Tensor(1, 1, {x}); }

  /// 1 x n row vector.
  static Tensor row(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor(1, n, std::move(values));
  }

  static Tensor identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  int numel() const { return rows * cols; }

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  const double* row_ptr(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
  double* row_ptr(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double e : v)
      if (!std::isfinite(e)) return false;
    return true;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
    return v[0];
  }

  std::string shape_str() const { return shape_str(rows, cols); }

  static std::string shape_str(int r, int c) {
    std::ostringstream os;
    os << "[" << r << " x " << c << "]";
    return os.str();
  }
};

inline Tensor random_uniform(int r, int c, double lo, double hi, Rng& rng) {
  Tensor t(r, c);
  for (double& e : t.v) e = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_gaussian(int r, int c, Rng& rng) {
  Tensor t(r, c);
  for (double& e : t.v) e = rng.gaussian();
  return t;
}

/// Glorot/Xavier uniform range for a (fan_in x fan_out) weight.
inline Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return random_uniform(fan_in, fan_out, -bound, bound, rng);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

}  // namespace optmsm
