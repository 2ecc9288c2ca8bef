#include "dakit/matrix.hpp"

#include <cmath>
#include <cstdlib>

namespace da::numerics {

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<double> Matrix::column(int c) const {
  std::vector<double> out(rows_);
  for (int r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(int c, std::span<const double> values) {
  if (static_cast<int>(values.size()) != rows_) {
    throw ConfigError("Matrix::set_column: length mismatch");
  }
  for (int r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ConfigError("multiply: shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

std::vector<double> column_mean(const Matrix& s) {
  std::vector<double> mean(s.rows(), 0.0);
  for (int i = 0; i < s.rows(); ++i) {
    double acc = 0.0;
    for (int n = 0; n < s.cols(); ++n) acc += s(i, n);
    mean[i] = acc / s.cols();
  }
  return mean;
}

Matrix ensemble_anomalies(const Matrix& s) {
  if (s.cols() < 2) {
    throw NumericalError("ensemble_anomalies: degenerate ensemble (N < 2)");
  }
  const std::vector<double> mean = column_mean(s);
  Matrix out(s.rows(), s.cols());
  for (int i = 0; i < s.rows(); ++i)
    for (int n = 0; n < s.cols(); ++n) out(i, n) = s(i, n) - mean[i];
  return out;
}

Matrix covariance(const Matrix& s) {
  if (s.cols() < 2) {
    throw NumericalError("covariance: degenerate ensemble (N < 2)");
  }
  const Matrix anomalies = ensemble_anomalies(s);
  const int d = s.rows();
  const int n = s.cols();
  Matrix cov(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += anomalies(i, k) * anomalies(j, k);
      acc /= (n - 1);
      cov(i, j) = acc;
      cov(j, i) = acc;
    }
  }
  return cov;
}

namespace {

// In-place lower Cholesky; false on a non-positive pivot.
bool cholesky_lower(Matrix& a) {
  const int n = a.rows();
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace

Matrix spd_solve(Matrix a, const Matrix& b) {
  const int n = a.rows();
  if (a.cols() != n) throw ConfigError("spd_solve: matrix not square");
  if (b.rows() != n) throw ConfigError("spd_solve: rhs shape mismatch");

  double trace = 0.0;
  for (int i = 0; i < n; ++i) trace += a(i, i);
  double jitter = 1e-10 * trace / n;
  if (jitter <= 0.0) jitter = 1e-10;

  Matrix chol = a;
  int attempt = 0;
  while (!cholesky_lower(chol)) {
    if (++attempt > 3) {
      throw NumericalError("spd_solve: singular innovation covariance");
    }
    for (int i = 0; i < n; ++i) a(i, i) += jitter;
    chol = a;
  }

  // Forward/backward substitution per rhs column.
  Matrix x(n, b.cols());
  std::vector<double> y(n);
  for (int c = 0; c < b.cols(); ++c) {
    for (int i = 0; i < n; ++i) {
      double s = b(i, c);
      for (int k = 0; k < i; ++k) s -= chol(i, k) * y[k];
      y[i] = s / chol(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
      double s = y[i];
      for (int k = i + 1; k < n; ++k) s -= chol(k, i) * x(k, c);
      x(i, c) = s / chol(i, i);
    }
  }
  return x;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace da::numerics
