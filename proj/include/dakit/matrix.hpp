#pragma once

#include <span>
#include <vector>

#include "dakit/errors.hpp"

namespace da::numerics {

// Small dense matrix of doubles, row-major. Only the kernels the filter
// needs; this is not a general linear-algebra layer.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols)
      : rows_(rows), cols_(cols),
        entries_(static_cast<std::size_t>(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) throw ConfigError("Matrix: negative dimension");
  }

  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int r, int c) {
    return entries_[static_cast<std::size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    return entries_[static_cast<std::size_t>(r) * cols_ + c];
  }

  std::span<double> data() { return entries_; }
  std::span<const double> data() const { return entries_; }

  // Column c as a copy.
  std::vector<double> column(int c) const;
  void set_column(int c, std::span<const double> values);

  bool operator==(const Matrix&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> entries_;
};

Matrix multiply(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Mean over columns (one value per row).
std::vector<double> column_mean(const Matrix& s);

// S' = [s(1) - sbar, ..., s(N) - sbar]. Requires N >= 2.
Matrix ensemble_anomalies(const Matrix& s);

// C(S) = S' (S')^T / (N - 1). Symmetric positive semi-definite.
Matrix covariance(const Matrix& s);

// Solves A X = B for symmetric positive definite A by Cholesky.
// If factorization fails, 1e-10 * trace(A)/m is added to the diagonal
// (with an absolute floor of 1e-10 when the trace vanishes) and the
// factorization is retried, up to 3 times; after that a NumericalError
// ("singular innovation covariance") is thrown.
Matrix spd_solve(Matrix a, const Matrix& b);

double max_abs(const Matrix& a);

}  // namespace da::numerics
