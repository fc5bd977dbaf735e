#include "blm/tensor.hpp"

#include <cblas.h>

#include <cmath>

namespace blm {

void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c,
          double alpha, double beta) {
  const int m = ta ? a.cols : a.rows;
  const int k = ta ? a.rows : a.cols;
  const int kb = tb ? b.cols : b.rows;
  const int n = tb ? b.rows : b.cols;
  assert(k == kb);
  (void)kb;
  assert(c.rows == m && c.cols == n);
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a.v.data(),
              a.cols, b.v.data(), b.cols, beta, c.v.data(), c.cols);
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const int m = ta ? a.cols : a.rows;
  const int n = tb ? b.rows : b.cols;
  Tensor c(m, n);
  gemm(a, ta, b, tb, c);
  return c;
}

double dot(const double* a, const double* b, int n) {
  return cblas_ddot(n, a, 1, b, 1);
}

double l2_norm(const double* a, int n) { return cblas_dnrm2(n, a, 1); }

void axpy(int n, double alpha, const double* x, double* y) {
  cblas_daxpy(n, alpha, x, 1, y, 1);
}

}  // namespace blm
