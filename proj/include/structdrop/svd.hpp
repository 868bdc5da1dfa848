#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "structdrop/errors.hpp"
#include "structdrop/matrix.hpp"

namespace structdrop {

/// Thin SVD: input = left * diag(singular_values) * right^T with
/// left m x p, right n x p, p = min(m, n), values sorted descending.
struct SvdResult {
  Matrix left;
  std::vector<double> singular_values;
  Matrix right;
};

struct SvdOptions {
  /// Sweeps stop once every column pair satisfies |g_ij| <= tolerance * sqrt(g_ii g_jj).
  double tolerance = 1e-12;
  int max_sweeps = 60;
};

namespace detail {

// Column-major working copy so the Jacobi rotations touch contiguous memory.
struct ColumnStore {
  std::size_t rows = 0;
  std::vector<std::vector<double>> cols;
};

inline ColumnStore to_columns(const Matrix& a) {
  ColumnStore s;
  s.rows = a.rows();
  s.cols.resize(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) s.cols[j] = a.column(j);
  return s;
}

inline void rotate(std::vector<double>& x, std::vector<double>& y, double c, double s) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xk = x[k];
    const double yk = y[k];
    x[k] = c * xk - s * yk;
    y[k] = s * xk + c * yk;
  }
}

// Extends the orthonormal columns in `basis` (flagged in `valid`) to a full
// orthonormal set by Gram-Schmidt against the standard basis.
inline void complete_orthonormal(std::vector<std::vector<double>>& basis, const std::vector<bool>& valid,
                                 std::size_t dim) {
  std::vector<std::size_t> accepted;
  for (std::size_t j = 0; j < basis.size(); ++j)
    if (valid[j]) accepted.push_back(j);
  std::size_t next_unit = 0;
  for (std::size_t j = 0; j < basis.size(); ++j) {
    if (valid[j]) continue;
    while (true) {
      if (next_unit >= dim) throw ConvergenceError("svd: cannot complete orthonormal basis", 0.0);
      std::vector<double> v(dim, 0.0);
      v[next_unit++] = 1.0;
      // Two passes of classical Gram-Schmidt keep the result orthogonal to rounding.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t q : accepted) {
          const double proj = dot(v, basis[q]);
          for (std::size_t k = 0; k < dim; ++k) v[k] -= proj * basis[q][k];
        }
      }
      const double norm = std::sqrt(dot(v, v));
      if (norm > 0.5) {
        for (double& x : v) x /= norm;
        basis[j] = std::move(v);
        accepted.push_back(j);
        break;
      }
    }
  }
}

// One-sided Jacobi on a matrix with rows >= cols.
inline SvdResult svd_tall(const Matrix& a, const SvdOptions& opt) {
  ColumnStore w = to_columns(a);
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

  // Columns whose squared norm falls below this floor hold only rounding
  // residue of the others; their correlations are noise and are not rotated.
  const double eps = std::numeric_limits<double>::epsilon();
  const double frob = frobenius_norm(a);
  const double null_floor = static_cast<double>(m) * (eps * frob) * (eps * frob);

  double off_mass = 0.0;
  bool converged = false;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    off_mass = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double alpha = dot(w.cols[i], w.cols[i]);
        const double beta = dot(w.cols[j], w.cols[j]);
        const double gamma = dot(w.cols[i], w.cols[j]);
        if (alpha <= null_floor || beta <= null_floor || gamma == 0.0) continue;
        const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
        off_mass = std::max(off_mass, rel);
        if (rel <= eps) continue;
        // Rotation angle that zeroes the (i, j) Gram entry.
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(w.cols[i], w.cols[j], c, s);
        rotate(v[i], v[j], c, s);
      }
    }
    if (off_mass <= opt.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("svd: Jacobi sweeps exhausted, relative off-diagonal mass " + std::to_string(off_mass),
                           off_mass);
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(w.cols[j], w.cols[j]));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double sigma_max = n == 0 ? 0.0 : sigma[order[0]];
  const double null_cut = sigma_max * static_cast<double>(std::max(m, n)) * eps;

  std::vector<std::vector<double>> left(n);
  std::vector<bool> valid(n, false);
  std::vector<double> values(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    values[k] = sigma[j];
    if (sigma[j] > null_cut && sigma[j] > 0.0) {
      left[k] = w.cols[j];
      for (double& x : left[k]) x /= sigma[j];
      valid[k] = true;
    }
  }
  complete_orthonormal(left, valid, m);

  Matrix left_m = Matrix::generate(m, n, [&](std::size_t i, std::size_t k) { return left[k][i]; });
  Matrix right_m = Matrix::generate(n, n, [&](std::size_t i, std::size_t k) { return v[order[k]][i]; });
  return SvdResult{std::move(left_m), std::move(values), std::move(right_m)};
}

}  // namespace detail

/// Thin singular value decomposition by cyclic one-sided Jacobi.
///
/// Wide inputs are handled through the transpose. The result is a pure
/// function of the input: sweep order is fixed and ties among singular
/// values keep sweep order.
inline SvdResult svd(const Matrix& a, const SvdOptions& opt = {}) {
  if (a.rows() >= a.cols()) return detail::svd_tall(a, opt);
  SvdResult t = detail::svd_tall(transpose(a), opt);
  return SvdResult{std::move(t.right), std::move(t.singular_values), std::move(t.left)};
}

inline std::vector<double> singular_values(const Matrix& a) { return svd(a).singular_values; }

/// left * diag(values) * right^T
inline Matrix reconstruct(const Matrix& left, std::span<const double> values, const Matrix& right) {
  return matmul(scale_columns(left, values), transpose(right));
}

inline Matrix reconstruct(const SvdResult& s) { return reconstruct(s.left, s.singular_values, s.right); }

/// Largest singular value.
inline double spectral_norm(const Matrix& a) { return singular_values(a).front(); }

}  // namespace structdrop
