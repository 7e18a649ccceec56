#pragma once

#include <cstddef>
#include <vector>

#include "sentinel/numerics.hpp"

namespace sentinel {

/// Row-major dense matrix, just big enough for the toy pipeline stages.
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
  double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix matmul(const Matrix& a, const Matrix& b);            // a(r,k) * b(k,c)
Matrix matmul_bt(const Matrix& a, const Matrix& b);         // a(r,k) * b(c,k)^T
Matrix matmul_at(const Matrix& a, const Matrix& b);         // a(k,r)^T * b(k,c)
Vec col_sums(const Matrix& m);
/// Mean over the batch (row) axis; the feature vector the verifier sees.
Vec batch_mean(const Matrix& m);
bool all_finite(const Matrix& m);

}  // namespace sentinel
