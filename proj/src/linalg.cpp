#include "sentinel/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace sentinel {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::runtime_error("shape-mismatch");
  Matrix out(a.rows, b.cols);
  for (size_t i = 0; i < a.rows; ++i) {
    for (size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::runtime_error("shape-mismatch");
  Matrix out(a.rows, b.rows);
  for (size_t i = 0; i < a.rows; ++i) {
    for (size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::runtime_error("shape-mismatch");
  Matrix out(a.cols, b.cols);
  for (size_t k = 0; k < a.rows; ++k) {
    for (size_t i = 0; i < a.cols; ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (size_t j = 0; j < b.cols; ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

Vec col_sums(const Matrix& m) {
  Vec out(m.cols, 0.0);
  for (size_t i = 0; i < m.rows; ++i) {
    for (size_t j = 0; j < m.cols; ++j) out[j] += m(i, j);
  }
  return out;
}

Vec batch_mean(const Matrix& m) {
  Vec out(m.cols, 0.0);
  if (m.rows == 0) return out;
  for (size_t i = 0; i < m.rows; ++i) {
    for (size_t j = 0; j < m.cols; ++j) out[j] += m(i, j);
  }
  for (double& x : out) x /= static_cast<double>(m.rows);
  return out;
}

bool all_finite(const Matrix& m) {
  for (double x : m.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace sentinel
