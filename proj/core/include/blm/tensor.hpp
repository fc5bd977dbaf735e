#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace blm {

// Dense row-major 2D matrix of doubles. Vectors are 1xC or Lx1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return v[static_cast<size_t>(r) * cols + c];
  }
  double at(int r, int c) const {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return v[static_cast<size_t>(r) * cols + c];
  }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor full(int r, int c, double x) {
    Tensor t(r, c);
    t.fill(x);
    return t;
  }
};

// c = alpha * op(a) * op(b) + beta * c, via BLAS.
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c,
          double alpha = 1.0, double beta = 0.0);

Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false);

double dot(const double* a, const double* b, int n);
double l2_norm(const double* a, int n);
void axpy(int n, double alpha, const double* x, double* y);

}  // namespace blm
