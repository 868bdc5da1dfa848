#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "structdrop/dropout_schemes.hpp"
#include "structdrop/errors.hpp"
#include "structdrop/factor_pair.hpp"
#include "structdrop/matrix.hpp"
#include "structdrop/svd.hpp"

namespace structdrop {

namespace detail {

inline void require_spectrum(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      throw InvalidSpectrumError("spectrum entry " + std::to_string(i) + " is negative or not finite");
    }
    if (i > 0 && values[i] > values[i - 1]) {
      throw InvalidSpectrumError("spectrum is not sorted in descending order at index " + std::to_string(i));
    }
  }
}

}  // namespace detail

struct KSupportValue {
  double value;
  std::size_t rho_star;
};

/// Squared spectral k-support norm scaled by beta:
///
///   beta * max_rho [ sum_{i<rho} a_i^2 + (sum_{i>=rho} a_i)^2 / (r - rho + 1) ]
///
/// where rho ranges over the admissible integers in 1..r, those whose level
/// (sum_{i>=rho} a_i) / (r - rho + 1) does not exceed a_{rho-1}. Each
/// admissible rho is a monotone feasible point of the dual problem, so the
/// max over them is the supremum; inadmissible ones can exceed it. Spectra
/// shorter than r are treated as zero-padded. Ties go to the smallest rho.
inline KSupportValue k_support_sq(std::span<const double> values, std::size_t r, double beta) {
  if (r == 0) throw InvalidArgumentError("k-support rank must be at least 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidArgumentError("k-support scale must be finite and >= 0");
  detail::require_spectrum(values);

  const std::size_t n = values.size();
  std::vector<double> tail(n + 1, 0.0);  // tail[i] = sum_{j >= i} a_j
  for (std::size_t i = n; i-- > 0;) tail[i] = tail[i + 1] + values[i];

  double head_sq = 0.0;  // sum_{i < rho} a_i^2
  double best = -1.0;
  std::size_t best_rho = 1;
  for (std::size_t rho = 1; rho <= r; ++rho) {
    const std::size_t i0 = rho - 1;  // zero-based first index of the tail
    const double t = i0 < n ? tail[i0] : 0.0;
    const double width = static_cast<double>(r - rho + 1);
    const double prev = rho == 1 ? std::numeric_limits<double>::infinity() : (i0 - 1 < n ? values[i0 - 1] : 0.0);
    const double candidate = head_sq + t * t / width;
    if (i0 < n) head_sq += values[i0] * values[i0];
    if (t / width > prev * (1.0 + 1e-12)) continue;
    if (candidate > best) {
      best = candidate;
      best_rho = rho;
    }
  }
  return {beta * best, best_rho};
}

/// Envelope value for a matrix: k_support_sq of its singular values.
inline double k_support_sq(const Matrix& a, std::size_t r, double beta) {
  const std::vector<double> s = singular_values(a);
  return k_support_sq(s, r, beta).value;
}

/// Conjugate of the unscaled envelope: 1/4 * sum of the r largest squared values.
inline double fenchel_conjugate(std::span<const double> values, std::size_t r) {
  if (r == 0) throw InvalidArgumentError("k-support rank must be at least 1");
  detail::require_spectrum(values);
  double acc = 0.0;
  for (std::size_t i = 0; i < std::min(r, values.size()); ++i) acc += values[i] * values[i];
  return 0.25 * acc;
}

/// Closed-form minimizer of ||Y - A||_F^2 + envelope(A) for one (rho, lambda) choice.
struct SpectralMinimizer {
  std::size_t rho = 1;
  std::size_t lambda = 1;
  std::vector<double> shrunk_values;
  double objective = 0.0;
  double beta = 0.0;
  double s_sum = 0.0;
  double c_const = 0.0;
};

struct GlobalMinimum {
  SpectralMinimizer minimizer;
  Matrix a_star;
};

namespace detail {

// Candidate spectrum for one (rho, lambda) pair; false if it is not a
// descending nonnegative spectrum.
inline bool shrink_candidate(const std::vector<double>& m, std::size_t r, double beta, std::size_t rho,
                             std::size_t lambda, SpectralMinimizer& out) {
  const std::size_t p = m.size();
  std::vector<double> a(p, 0.0);
  double s = 0.0;
  const double c = static_cast<double>(r) + beta * static_cast<double>(lambda) +
                   (beta + 1.0) * (1.0 - static_cast<double>(rho));
  if (lambda + 1 <= rho) {
    for (std::size_t i = 0; i < lambda; ++i) a[i] = m[i] / (beta + 1.0);
  } else {
    for (std::size_t i = 0; i + 1 < rho; ++i) a[i] = m[i] / (beta + 1.0);
    for (std::size_t i = rho - 1; i < lambda; ++i) s += m[i];
    if (!(c > 0.0)) return false;
    for (std::size_t i = rho - 1; i < lambda; ++i) a[i] = std::max(m[i] - (beta / c) * s, 0.0);
  }
  for (std::size_t i = 1; i < p; ++i)
    if (a[i] > a[i - 1]) return false;

  double fit = 0.0;
  for (std::size_t i = 0; i < p; ++i) fit += (m[i] - a[i]) * (m[i] - a[i]);
  out.rho = rho;
  out.lambda = lambda;
  out.objective = fit + k_support_sq(a, r, beta).value;
  out.beta = beta;
  out.s_sum = s;
  out.c_const = c;
  out.shrunk_values = std::move(a);
  return true;
}

}  // namespace detail

/// Global minimizer of F(A) = ||Y - A||_F^2 + envelope(A) with the envelope
/// scale beta = (1 - theta_bar) / theta_bar.
///
/// Every (rho, lambda) in {1..r} x {1..min(a, N)} is tried; among feasible
/// candidates the smallest objective wins, ties going to the smaller lambda
/// and then the smaller rho.
inline GlobalMinimum global_minimizer(const Matrix& y, std::size_t r, double theta_bar) {
  if (!(theta_bar > 0.0 && theta_bar < 1.0)) {
    throw DegenerateSchemeError("global minimizer needs theta_bar in (0, 1), got " + std::to_string(theta_bar));
  }
  if (r == 0) throw InvalidArgumentError("block size must be at least 1");
  const double beta = (1.0 - theta_bar) / theta_bar;
  const SvdResult s = svd(y);
  const std::vector<double>& m = s.singular_values;
  const std::size_t p = m.size();

  SpectralMinimizer best;
  bool found = false;
  for (std::size_t lambda = 1; lambda <= p; ++lambda) {
    for (std::size_t rho = 1; rho <= r; ++rho) {
      SpectralMinimizer cand;
      if (!detail::shrink_candidate(m, r, beta, rho, lambda, cand)) continue;
      if (!found || cand.objective < best.objective) {
        best = std::move(cand);
        found = true;
      }
    }
  }
  // lambda = 1, rho = 1 always yields a valid one-entry spectrum, so this is
  // reachable only through a numerical pathology.
  if (!found) throw ConvergenceError("global minimizer: no feasible shrinkage candidate", 0.0);

  Matrix a_star = reconstruct(s.left, best.shrunk_values, s.right);
  return {std::move(best), std::move(a_star)};
}

struct BalanceReport {
  std::vector<double> block_norms;
  double max_ratio = 1.0;
  bool is_balanced = true;
};

inline BalanceReport balance_report(const FactorPair& fp, const Matrix& x, double tolerance = 1e-2) {
  BalanceReport rep;
  rep.block_norms = block_norms(fp, x);
  const auto [lo, hi] = std::minmax_element(rep.block_norms.begin(), rep.block_norms.end());
  if (*hi == 0.0) {
    rep.max_ratio = 1.0;
    rep.is_balanced = true;
  } else if (*lo == 0.0) {
    rep.max_ratio = std::numeric_limits<double>::infinity();
    rep.is_balanced = false;
  } else {
    rep.max_ratio = *hi / *lo;
    rep.is_balanced = rep.max_ratio <= 1.0 + tolerance;
  }
  return rep;
}

/// (U, V) -> ([U U], [V V]) / sqrt(2): same product, half the regularizer.
inline FactorPair duplicate_halving(const FactorPair& fp) {
  const double s = 1.0 / std::sqrt(2.0);
  return FactorPair(scale(hconcat(fp.u(), fp.u()), s), scale(hconcat(fp.v(), fp.v()), s), fp.block_size());
}

/// (d / r) * sum_i ||U_i V_i^T X||_F^2, the width-scaled block penalty
/// without the dropout factor.
inline double width_scaled_penalty(const FactorPair& fp, const Matrix& x) {
  double acc = 0.0;
  for (double a2 : block_norms_sq(fp, x)) acc += a2;
  return static_cast<double>(fp.block_count()) * acc;
}

/// Replicates every block in proportion to its share of ||alpha||_1 so that
/// all but at most one copy per block carry the norm ||alpha||_1 / target_blocks.
///
/// target_blocks counts blocks, not columns. The result has at most
/// target_blocks + k blocks, the same U V^T X, and a width-scaled penalty of at
/// most ((target_blocks + k) / target_blocks) * ||alpha||_1^2. Blocks with
/// alpha_i = 0 contribute nothing to U V^T X and are dropped.
inline FactorPair rebalance(const FactorPair& fp, const Matrix& x, std::size_t target_blocks) {
  const std::size_t k = fp.block_count();
  if (target_blocks < k) {
    throw InvalidArgumentError("rebalance: target block count " + std::to_string(target_blocks) +
                               " is below the current " + std::to_string(k));
  }
  const std::vector<double> alpha = block_norms(fp, x);
  double l1 = 0.0;
  for (double a : alpha) l1 += a;
  if (l1 == 0.0) throw DegenerateFactorError("rebalance: every block product is zero");

  const double unit = l1 / static_cast<double>(target_blocks);
  const std::size_t r = fp.block_size();
  const std::size_t a_rows = fp.u().rows();
  const std::size_t b_rows = fp.v().rows();

  // Column-major staging of the new blocks; each block is U_i, V_i scaled by
  // sqrt(weight / alpha_i) so that its product norm equals weight.
  std::vector<std::vector<double>> ucols;
  std::vector<std::vector<double>> vcols;
  auto push_block = [&](std::size_t blk, double weight, double alpha_i) {
    const double f = std::sqrt(weight / alpha_i);
    for (std::size_t j = blk * r; j < (blk + 1) * r; ++j) {
      std::vector<double> uc = fp.u().column(j);
      std::vector<double> vc = fp.v().column(j);
      for (double& e : uc) e *= f;
      for (double& e : vc) e *= f;
      ucols.push_back(std::move(uc));
      vcols.push_back(std::move(vc));
    }
  };

  for (std::size_t i = 0; i < k; ++i) {
    if (alpha[i] == 0.0) continue;
    double share = alpha[i] / unit;
    const double nearest = std::round(share);
    if (std::abs(share - nearest) <= 1e-12 * std::max(1.0, share)) share = nearest;
    const auto copies = static_cast<std::size_t>(std::floor(share));
    for (std::size_t c = 0; c < copies; ++c) push_block(i, unit, alpha[i]);
    const double remainder = alpha[i] - static_cast<double>(copies) * unit;
    if (remainder > 0.0 && share != nearest) push_block(i, remainder, alpha[i]);
  }

  const std::size_t width = ucols.size();
  Matrix u = Matrix::generate(a_rows, width, [&](std::size_t i, std::size_t j) { return ucols[j][i]; });
  Matrix v = Matrix::generate(b_rows, width, [&](std::size_t i, std::size_t j) { return vcols[j][i]; });
  return FactorPair(std::move(u), std::move(v), r);
}

/// Repeated rebalance with a doubling target block count, starting from the
/// current count, until the width-scaled penalty improves by no more than
/// `rel_tol` relative or the count would exceed `max_blocks`. Returns the best
/// factorization found.
inline FactorPair rebalance_doubling(const FactorPair& fp, const Matrix& x, double rel_tol = 1e-6,
                                     std::size_t max_blocks = 4096) {
  std::size_t target = fp.block_count();
  FactorPair best = rebalance(fp, x, target);
  double best_pen = width_scaled_penalty(best, x);
  while (target * 2 <= max_blocks) {
    target *= 2;
    FactorPair next = rebalance(fp, x, target);
    const double pen = width_scaled_penalty(next, x);
    const bool improved_enough = pen < best_pen * (1.0 - rel_tol);
    if (pen < best_pen) {
      best = std::move(next);
      best_pen = pen;
    }
    if (!improved_enough) break;
  }
  return best;
}

/// Retain probability used at width d so that the effective scale at width r
/// stays theta_bar: theta_bar r / (theta_bar r + (1 - theta_bar) d).
inline double retain_for_width(double theta_bar, std::size_t r, std::size_t d) {
  if (!(theta_bar > 0.0 && theta_bar <= 1.0)) throw InvalidArgumentError("theta_bar must be in (0, 1]");
  const double rr = static_cast<double>(r);
  const double dd = static_cast<double>(d);
  return theta_bar * rr / (theta_bar * rr + (1.0 - theta_bar) * dd);
}

/// Inverse of retain_for_width: the theta_bar for which theta is the retain
/// probability at width d.
inline double theta_bar_for_retain(double theta, std::size_t r, std::size_t d) {
  if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgumentError("theta must be in (0, 1]");
  const double rr = static_cast<double>(r);
  const double dd = static_cast<double>(d);
  return theta * dd / (rr * (1.0 - theta) + theta * dd);
}

/// ||Y - U V^T X||_F^2 + (d / r) * beta_bar * sum_i ||U_i V_i^T X||_F^2
/// with beta_bar = (1 - theta_bar) / theta_bar.
inline double objective_f(const FactorPair& fp, const Matrix& x, const Matrix& y, double theta_bar) {
  if (!(theta_bar > 0.0 && theta_bar < 1.0)) {
    throw DegenerateSchemeError("objective needs theta_bar in (0, 1), got " + std::to_string(theta_bar));
  }
  const Matrix pred = product(fp, x);
  if (pred.rows() != y.rows() || pred.cols() != y.cols()) {
    throw DimensionError("objective: prediction " + shape_string(pred) + " vs target " + shape_string(y));
  }
  const double beta_bar = (1.0 - theta_bar) / theta_bar;
  return frobenius_sq(subtract(y, pred)) + beta_bar * width_scaled_penalty(fp, x);
}

}  // namespace structdrop
