#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "structdrop/errors.hpp"
#include "structdrop/matrix.hpp"

namespace structdrop {

/// A factorization (U, V) of width d whose columns are grouped into
/// k = d / r consecutive blocks of r columns.
class FactorPair {
 public:
  FactorPair(Matrix u, Matrix v, std::size_t block_size)
      : u_(std::move(u)), v_(std::move(v)), block_size_(block_size) {
    if (u_.cols() != v_.cols()) {
      throw DimensionError("factor pair: U has " + std::to_string(u_.cols()) + " columns, V has " +
                           std::to_string(v_.cols()));
    }
    if (block_size_ == 0 || u_.cols() % block_size_ != 0) {
      throw BlockPartitionError("block size " + std::to_string(block_size_) + " does not divide width " +
                                std::to_string(u_.cols()));
    }
  }

  const Matrix& u() const noexcept { return u_; }
  const Matrix& v() const noexcept { return v_; }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t width() const noexcept { return u_.cols(); }
  std::size_t block_count() const noexcept { return width() / block_size_; }

  Matrix u_block(std::size_t i) const { return column_block(u_, i * block_size_, block_size_); }
  Matrix v_block(std::size_t i) const { return column_block(v_, i * block_size_, block_size_); }

 private:
  Matrix u_;
  Matrix v_;
  std::size_t block_size_;
};

/// U V^T X
inline Matrix product(const FactorPair& fp, const Matrix& x) {
  if (fp.v().rows() != x.rows()) {
    throw DimensionError("product: V is " + shape_string(fp.v()) + ", X is " + shape_string(x));
  }
  return matmul(fp.u(), matmul(transpose(fp.v()), x));
}

/// Squared block norms ||U_i V_i^T X||_F^2 for each of the k blocks.
///
/// Evaluated through the r x r column Grams of each block,
/// ||U_i W_i^T||_F^2 = <U_i^T U_i, W_i^T W_i> with W = X^T V, so the cost is
/// linear in the width.
inline std::vector<double> block_norms_sq(const FactorPair& fp, const Matrix& x) {
  if (fp.v().rows() != x.rows()) {
    throw DimensionError("block norms: V is " + shape_string(fp.v()) + ", X is " + shape_string(x));
  }
  const Matrix ut = transpose(fp.u());
  const Matrix wt = transpose(matmul(transpose(x), fp.v()));
  const std::size_t r = fp.block_size();
  std::vector<double> out(fp.block_count(), 0.0);
  for (std::size_t b = 0; b < out.size(); ++b) {
    double acc = 0.0;
    for (std::size_t p = b * r; p < (b + 1) * r; ++p)
      for (std::size_t q = b * r; q < (b + 1) * r; ++q) acc += dot(ut.row(p), ut.row(q)) * dot(wt.row(p), wt.row(q));
    out[b] = std::max(acc, 0.0);
  }
  return out;
}

inline std::vector<double> block_norms(const FactorPair& fp, const Matrix& x) {
  std::vector<double> out = block_norms_sq(fp, x);
  for (double& v : out) v = std::sqrt(v);
  return out;
}

}  // namespace structdrop
