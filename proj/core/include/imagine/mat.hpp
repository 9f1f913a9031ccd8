#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "imagine/errors.hpp"
#include "imagine/rng.hpp"

namespace imagine {

/// Dense row-major double matrix. Training and gradient paths run in double
/// precision; bulk retrieval uses float32 buffers instead (see imagination).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return a.size(); }

  void fill(double v) { std::fill(a.begin(), a.end(), v); }

  static Mat randn(int r, int c, Rng& rng, double stddev) {
    Mat m(r, c);
    for (auto& x : m.a) x = rng.normal(0.0, stddev);
    return m;
  }
};

inline void check_shape(const Mat& m, int rows, int cols, const char* what) {
  if (m.rows != rows || m.cols != cols) {
    throw DataError(std::string(what) + ": shape mismatch, expected " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                    std::to_string(m.cols));
  }
}

/// out = A * B. Shapes (r x k) * (k x c) -> (r x c).
inline void matmul(const Mat& A, const Mat& B, Mat& out) {
  out = Mat(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = B.row(k);
      for (int j = 0; j < B.cols; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out = A * B^T. Shapes (r x k) * (c x k) -> (r x c).
inline void matmul_bt(const Mat& A, const Mat& B, Mat& out) {
  out = Mat(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* brow = B.row(j);
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
}

/// out += A^T * B. Shapes (k x r) * (k x c) -> (r x c). Accumulating form used
/// by gradient code.
inline void matmul_at_acc(const Mat& A, const Mat& B, Mat& out) {
  for (int k = 0; k < A.rows; ++k) {
    const double* arow = A.row(k);
    const double* brow = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.row(i);
      for (int j = 0; j < B.cols; ++j) orow[j] += av * brow[j];
    }
  }
}

inline void axpy(Mat& y, double alpha, const Mat& x) {
  for (size_t i = 0; i < y.a.size(); ++i) y.a[i] += alpha * x.a[i];
}

}  // namespace imagine
