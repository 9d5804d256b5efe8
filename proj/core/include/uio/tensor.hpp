#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uio {

// Dense row-major tensor of doubles. All training math runs in 64-bit; there
// is no device or dtype dispatch at desk scale.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

// C = A B with A [m,k], B [k,n]. Accumulates into C when beta is 1.
void matmul_accum(const double* a, const double* b, double* c, int m, int k, int n,
                  bool accumulate);

// C = A B^T with A [m,k], B [n,k].
void matmul_nt_accum(const double* a, const double* b, double* c, int m, int k, int n,
                     bool accumulate);

// In-place stable softmax over a contiguous row.
void softmax_row(double* row, int n);

}  // namespace uio
