#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "structdrop/errors.hpp"
#include "structdrop/factor_pair.hpp"
#include "structdrop/matrix.hpp"
#include "structdrop/rng.hpp"

namespace structdrop {

/// Independent Ber(theta) per hidden unit.
struct Bernoulli {
  double theta;
};

/// One Ber(theta) draw shared by each block of r consecutive units.
struct DropBlockPartitioned {
  double theta;
  std::size_t block_size;
};

/// Blocks at arbitrary positions on a ring of units. Every unit is an
/// anchor independently with probability theta, and a unit is dropped iff
/// no anchor lies in the window of `window` positions centred on it, so
/// P(drop) = (1 - theta)^window.
struct DropBlockOriginal {
  double theta;
  std::size_t window;
};

/// Independent Ber(theta) per entry of the b x d input weight matrix.
struct DropConnect {
  double theta;
};

/// (1 - theta) / theta, the scale of every Bernoulli-type regularizer.
inline double dropout_beta(double theta) {
  if (!(theta > 0.0)) throw DegenerateSchemeError("retain probability must be positive");
  if (theta > 1.0) throw InvalidArgumentError("retain probability exceeds 1");
  return (1.0 - theta) / theta;
}

class DropoutScheme {
 public:
  using Variant = std::variant<Bernoulli, DropBlockPartitioned, DropBlockOriginal, DropConnect>;

  static DropoutScheme bernoulli(double theta) { return DropoutScheme(Bernoulli{theta}); }
  static DropoutScheme dropblock(double theta, std::size_t block_size) {
    return DropoutScheme(DropBlockPartitioned{theta, block_size});
  }
  static DropoutScheme dropblock_original(double theta, std::size_t window) {
    return DropoutScheme(DropBlockOriginal{theta, window});
  }
  static DropoutScheme dropconnect(double theta) { return DropoutScheme(DropConnect{theta}); }

  explicit DropoutScheme(Variant v) : v_(v) {
    const double t = theta();
    if (!(t > 0.0)) throw DegenerateSchemeError("retain probability must be in (0, 1], got " + std::to_string(t));
    if (t > 1.0) throw InvalidArgumentError("retain probability must be in (0, 1], got " + std::to_string(t));
    if (const auto* p = std::get_if<DropBlockPartitioned>(&v_); p && p->block_size == 0) {
      throw BlockPartitionError("block size must be positive");
    }
    if (const auto* p = std::get_if<DropBlockOriginal>(&v_); p && (p->window == 0 || p->window % 2 == 0)) {
      throw InvalidArgumentError("window must be a positive odd count");
    }
  }

  const Variant& variant() const noexcept { return v_; }

  double theta() const noexcept {
    return std::visit([](const auto& s) { return s.theta; }, v_);
  }

  /// Block size for the partitioned scheme, 1 otherwise.
  std::size_t block_size() const noexcept {
    if (const auto* p = std::get_if<DropBlockPartitioned>(&v_)) return p->block_size;
    return 1;
  }

  bool is_dropconnect() const noexcept { return std::holds_alternative<DropConnect>(v_); }

  std::string name() const {
    return std::visit(
        [](const auto& s) -> std::string {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Bernoulli>) return "bernoulli";
          if constexpr (std::is_same_v<T, DropBlockPartitioned>) return "dropblock";
          if constexpr (std::is_same_v<T, DropBlockOriginal>) return "dropblock_original";
          if constexpr (std::is_same_v<T, DropConnect>) return "dropconnect";
        },
        v_);
  }

 private:
  Variant v_;
};

/// Binary mask: a 1 x d unit mask, or a b x d weight mask for DropConnect.
struct MaskSample {
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t operator()(std::size_t i, std::size_t j) const noexcept { return values[i * cols + j]; }
  std::uint8_t operator[](std::size_t j) const noexcept { return values[j]; }
  bool is_unit_mask() const noexcept { return rows == 1; }
};

/// Mean vector and characteristic matrix diag(mu)^-1 Cov(z) diag(mu)^-1 of a
/// unit mask distribution.
struct CharacteristicMatrix {
  std::vector<double> mean;
  Matrix cbar;

  std::size_t width() const noexcept { return mean.size(); }
};

namespace detail {

inline std::size_t ring_distance(std::size_t i, std::size_t j, std::size_t d) {
  const std::size_t diff = i > j ? i - j : j - i;
  return std::min(diff, d - diff);
}

inline void require_divides(std::size_t r, std::size_t d) {
  if (r == 0 || d % r != 0) {
    throw BlockPartitionError("block size " + std::to_string(r) + " does not divide width " + std::to_string(d));
  }
}

inline void require_window(std::size_t window, std::size_t d) {
  if (window > d) {
    throw InvalidArgumentError("window " + std::to_string(window) + " exceeds width " + std::to_string(d));
  }
}

/// Unit mask from a vector of anchor indicators on a ring of d units.
inline std::vector<std::uint8_t> anchors_to_mask(const std::vector<std::uint8_t>& anchors, std::size_t window) {
  const std::size_t d = anchors.size();
  const std::size_t half = window / 2;
  std::vector<std::uint8_t> z(d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (anchors[j] && ring_distance(i, j, d) <= half) {
        z[i] = 1;
        break;
      }
    }
  }
  return z;
}

}  // namespace detail

/// Draws one mask of the scheme for a hidden layer of `width` units.
/// `input_rows` is the row count b of V and is used only by DropConnect.
inline MaskSample sample_mask(const DropoutScheme& scheme, std::size_t width, SeededRng& rng,
                              std::size_t input_rows = 1) {
  if (width == 0) throw DimensionError("mask width must be positive");
  const double theta = scheme.theta();
  return std::visit(
      [&](const auto& s) -> MaskSample {
        using T = std::decay_t<decltype(s)>;
        MaskSample m;
        m.cols = width;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          m.values.resize(width);
          for (auto& z : m.values) z = rng.bernoulli(theta) ? 1 : 0;
        } else if constexpr (std::is_same_v<T, DropBlockPartitioned>) {
          detail::require_divides(s.block_size, width);
          m.values.resize(width);
          for (std::size_t blk = 0; blk < width / s.block_size; ++blk) {
            const std::uint8_t w = rng.bernoulli(theta) ? 1 : 0;
            for (std::size_t j = 0; j < s.block_size; ++j) m.values[blk * s.block_size + j] = w;
          }
        } else if constexpr (std::is_same_v<T, DropBlockOriginal>) {
          detail::require_window(s.window, width);
          std::vector<std::uint8_t> anchors(width);
          for (auto& a : anchors) a = rng.bernoulli(theta) ? 1 : 0;
          m.values = detail::anchors_to_mask(anchors, s.window);
        } else {
          if (input_rows == 0) throw DimensionError("DropConnect mask needs the input dimension");
          m.rows = input_rows;
          m.values.resize(input_rows * width);
          for (auto& z : m.values) z = rng.bernoulli(theta) ? 1 : 0;
        }
        return m;
      },
      scheme.variant());
}

/// Closed-form mean and characteristic matrix of the unit mask.
///
/// DropConnect has no unit mask; it returns the Bernoulli characteristic
/// matrix, which induces the same deterministic regularizer.
inline CharacteristicMatrix characteristic_matrix(const DropoutScheme& scheme, std::size_t width) {
  if (width == 0) throw DimensionError("width must be positive");
  const double theta = scheme.theta();
  const double beta = dropout_beta(theta);
  return std::visit(
      [&](const auto& s) -> CharacteristicMatrix {
        using T = std::decay_t<decltype(s)>;
        CharacteristicMatrix cm;
        if constexpr (std::is_same_v<T, DropBlockPartitioned>) {
          detail::require_divides(s.block_size, width);
          cm.mean.assign(width, theta);
          const std::size_t r = s.block_size;
          cm.cbar = Matrix::generate(width, width,
                                     [&](std::size_t i, std::size_t j) { return i / r == j / r ? beta : 0.0; });
        } else if constexpr (std::is_same_v<T, DropBlockOriginal>) {
          detail::require_window(s.window, width);
          const std::size_t half = s.window / 2;
          const double miss = 1.0 - theta;  // P(a position is not an anchor)
          const double p_drop = std::pow(miss, static_cast<double>(s.window));
          const double mu = 1.0 - p_drop;
          cm.mean.assign(width, mu);
          cm.cbar = Matrix::generate(width, width, [&](std::size_t i, std::size_t j) {
            std::size_t shared = 0;
            for (std::size_t p = 0; p < width; ++p) {
              if (detail::ring_distance(p, i, width) <= half && detail::ring_distance(p, j, width) <= half) ++shared;
            }
            const std::size_t in_union = 2 * s.window - shared;
            // P(z_i = 1, z_j = 1) by inclusion-exclusion over "no anchor" events.
            const double both = 1.0 - 2.0 * p_drop + std::pow(miss, static_cast<double>(in_union));
            return (both - mu * mu) / (mu * mu);
          });
        } else {
          cm.mean.assign(width, theta);
          cm.cbar = Matrix::generate(width, width, [&](std::size_t i, std::size_t j) { return i == j ? beta : 0.0; });
        }
        return cm;
      },
      scheme.variant());
}

/// sum_{i,j} cbar_ij (u_i . u_j)(v_i . v_j) = <cbar, U^T U (.) V^T V>.
///
/// Pass X^T V (or a feature matrix) as `v` to obtain the regularizer of the
/// network U V^T X.
inline double regularizer_generalized(const CharacteristicMatrix& cm, const Matrix& u, const Matrix& v) {
  const std::size_t d = cm.width();
  if (u.cols() != d || v.cols() != d) {
    throw DimensionError("generalized regularizer: widths " + std::to_string(u.cols()) + ", " +
                         std::to_string(v.cols()) + " vs characteristic matrix " + std::to_string(d));
  }
  const Matrix gu = gram(u);
  const Matrix gv = gram(v);
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) acc += cm.cbar(i, j) * gu(i, j) * gv(i, j);
  return acc;
}

/// ((1 - theta) / theta) * sum_i ||U_i V_i^T X||_F^2 over the blocks of fp.
inline double regularizer_dropblock(const FactorPair& fp, const Matrix& x, double theta) {
  const double beta = dropout_beta(theta);
  double acc = 0.0;
  for (double a2 : block_norms_sq(fp, x)) acc += a2;
  return beta * acc;
}

/// ((1 - theta) / theta) * sum_i ||u_i||^2 ||M^T v_i||^2, the deterministic
/// equivalent of DropConnect on V with features M.
inline double regularizer_dropconnect(const Matrix& u, const Matrix& v, const Matrix& m, double theta) {
  const double beta = dropout_beta(theta);
  if (u.cols() != v.cols()) throw DimensionError("dropconnect regularizer: U and V widths differ");
  if (v.rows() != m.rows()) {
    throw DimensionError("dropconnect regularizer: V is " + shape_string(v) + ", M is " + shape_string(m));
  }
  const Matrix gu = gram(u);
  const Matrix gw = gram(matmul(transpose(m), v));
  double acc = 0.0;
  for (std::size_t i = 0; i < u.cols(); ++i) acc += gu(i, i) * gw(i, i);
  return beta * acc;
}

/// Exact expectation of the DropConnect penalty,
///
///   ((1 - theta) / theta) * sum_i ||u_i||^2 * sum_j V_ji^2 ||m_j||^2,
///
/// with m_j the j-th row of M. It coincides with regularizer_dropconnect
/// exactly when M M^T is diagonal; otherwise the two differ by the
/// off-diagonal part of M M^T.
inline double regularizer_dropconnect_exact(const Matrix& u, const Matrix& v, const Matrix& m, double theta) {
  const double beta = dropout_beta(theta);
  if (u.cols() != v.cols()) throw DimensionError("dropconnect regularizer: U and V widths differ");
  if (v.rows() != m.rows()) {
    throw DimensionError("dropconnect regularizer: V is " + shape_string(v) + ", M is " + shape_string(m));
  }
  std::vector<double> row_sq(m.rows());
  for (std::size_t j = 0; j < m.rows(); ++j) row_sq[j] = dot(m.row(j), m.row(j));
  const Matrix gu = gram(u);
  double acc = 0.0;
  for (std::size_t i = 0; i < u.cols(); ++i) {
    double w = 0.0;
    for (std::size_t j = 0; j < v.rows(); ++j) w += v(j, i) * v(j, i) * row_sq[j];
    acc += gu(i, i) * w;
  }
  return beta * acc;
}

/// Anchor probability for DropBlockOriginal with `window` that reproduces the
/// per-unit drop rate 1 - theta of partitioned DropBlock: 1 - (1 - theta)^(1/window).
inline double theta_correction(double theta, std::size_t window) {
  if (!(theta > 0.0) || theta > 1.0) throw InvalidArgumentError("theta must be in (0, 1]");
  if (window == 0) throw InvalidArgumentError("window must be positive");
  if (theta == 1.0) return 1.0;
  return -std::expm1(std::log1p(-theta) / static_cast<double>(window));
}

}  // namespace structdrop
