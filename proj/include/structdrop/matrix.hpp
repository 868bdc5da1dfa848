#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "structdrop/errors.hpp"

namespace structdrop {

/// Dense row-major matrix of doubles.
///
/// Values are immutable once constructed: every operation in the library
/// takes matrices by const reference and returns a fresh value. All entries
/// are checked to be finite at construction.
class Matrix {
 public:
  Matrix() = default;

  /// Zero matrix.
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    require_shape(rows, cols);
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require_shape(rows, cols);
    if (data_.size() != rows * cols) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) + " != " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw NonFiniteError("matrix entry is not finite");
    }
  }

  static Matrix identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Matrix(n, n, std::move(d));
  }

  static Matrix diagonal(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = values[i];
    return Matrix(n, n, std::move(d));
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged row list");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(d));
  }

  /// Builds entry (i, j) from f(i, j).
  template <class F>
  static Matrix generate(std::size_t rows, std::size_t cols, F&& f) {
    std::vector<double> d(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) d[i * cols + j] = f(i, j);
    return Matrix(rows, cols, std::move(d));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = data_[i * cols_ + j];
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  static void require_shape(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be positive");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a) + " times " + shape_string(b));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bd.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return Matrix(n, m, std::move(out));
}

inline Matrix transpose(const Matrix& a) {
  return Matrix::generate(a.cols(), a.rows(), [&](std::size_t i, std::size_t j) { return a(j, i); });
}

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <class F>
Matrix zip(const Matrix& a, const Matrix& b, const char* op, F&& f) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
  return Matrix(a.rows(), a.cols(), std::move(out));
}

}  // namespace detail

inline Matrix add(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

inline Matrix scale(const Matrix& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return Matrix(a.rows(), a.cols(), std::move(out));
}

/// a - s * b
inline Matrix axpy(const Matrix& a, double s, const Matrix& b) {
  return detail::zip(a, b, "axpy", [s](double x, double y) { return x - s * y; });
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

inline double frobenius_sq(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return acc;
}

inline double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_sq(a)); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Columns [first, first + count).
inline Matrix column_block(const Matrix& a, std::size_t first, std::size_t count) {
  if (first + count > a.cols() || count == 0) throw DimensionError("column_block out of range");
  return Matrix::generate(a.rows(), count, [&](std::size_t i, std::size_t j) { return a(i, first + j); });
}

/// [a b]
inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("hconcat: row counts differ");
  return Matrix::generate(a.rows(), a.cols() + b.cols(), [&](std::size_t i, std::size_t j) {
    return j < a.cols() ? a(i, j) : b(i, j - a.cols());
  });
}

/// Column Gram matrix a^T a.
inline Matrix gram(const Matrix& a) {
  const std::size_t n = a.cols();
  std::vector<double> g(n * n, 0.0);
  const auto d = a.data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* row = d.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double ri = row[i];
      if (ri == 0.0) continue;
      for (std::size_t j = i; j < n; ++j) g[i * n + j] += ri * row[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g[i * n + j] = g[j * n + i];
  return Matrix(n, n, std::move(g));
}

/// a * diag(s), scaling column j by s[j].
inline Matrix scale_columns(const Matrix& a, std::span<const double> s) {
  if (s.size() != a.cols()) throw DimensionError("scale_columns: length mismatch");
  return Matrix::generate(a.rows(), a.cols(), [&](std::size_t i, std::size_t j) { return a(i, j) * s[j]; });
}

}  // namespace structdrop
