#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "common/error.hpp"

namespace ply::nn {

// Dense row-major float tensor. Shapes are small (at most rank 3 in this
// codebase) and all math routines below are written for clarity first; the
// model's hot loops live in model.cpp.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::initializer_list<int64_t> s) : shape(s) { data.assign(numel(), 0.0f); }
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) { data.assign(numel(), 0.0f); }

  int64_t numel() const {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  float& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  float at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  float& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * dim(1) + j)]; }
  float at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * dim(1) + j)]; }

  const float* row(int64_t i) const { return data.data() + i * dim(1); }
  float* row(int64_t i) { return data.data() + i * dim(1); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void expect_shape(std::initializer_list<int64_t> s, const std::string& name) const {
    if (!std::equal(shape.begin(), shape.end(), s.begin(), s.end()))
      fail(ErrorKind::Shape, "tensor '" + name + "' has unexpected shape");
  }
};

// out[j] += in · w[:, j] for w of shape [n_in, n_out]; bias optional.
inline void matvec_accum(const float* in, const Tensor& w, const float* bias, float* out) {
  const int64_t n_in = w.dim(0), n_out = w.dim(1);
  if (bias)
    for (int64_t j = 0; j < n_out; ++j) out[j] = bias[j];
  else
    for (int64_t j = 0; j < n_out; ++j) out[j] = 0.0f;
  for (int64_t i = 0; i < n_in; ++i) {
    const float x = in[i];
    if (x == 0.0f) continue;
    const float* wr = w.row(i);
    for (int64_t j = 0; j < n_out; ++j) out[j] += x * wr[j];
  }
}

inline float dot(const float* a, const float* b, int64_t n) {
  float s = 0.0f;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace ply::nn
