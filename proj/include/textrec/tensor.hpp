// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "textrec/common.hpp"
#include "textrec/rng.hpp"

namespace textrec::num {

// Dense row-major matrix of doubles. Scalars are 1x1, vectors are nx1 or 1xn.
struct Tensor {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}
  Tensor(int64_t r, int64_t c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {}

  static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }
  static Tensor full(int64_t r, int64_t c, double x) {
    Tensor t(r, c);
    for (auto& e : t.v) e = x;
    return t;
  }
  static Tensor scalar(double x) { return full(1, 1, x); }
  static Tensor randn(int64_t r, int64_t c, double stddev, Rng& rng) {
    Tensor t(r, c);
    for (auto& e : t.v) e = stddev * rng.gaussian();
    return t;
  }

  int64_t numel() const { return rows * cols; }
  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
  double* row(int64_t r) { return v.data() + r * cols; }
  const double* row(int64_t r) const { return v.data() + r * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }

  bool all_finite() const {
    for (double e : v)
      if (!std::isfinite(e)) return false;
    return true;
  }

  double l2_norm() const {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
  }
};

}  // namespace textrec::num
