#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "structdrop/dropout_schemes.hpp"
#include "structdrop/errors.hpp"
#include "structdrop/factor_pair.hpp"
#include "structdrop/matrix.hpp"
#include "structdrop/rng.hpp"

namespace structdrop {

enum class TrainingMode { stochastic_sgd, full_batch_deterministic };
enum class BatchMode { single_sample, full_batch };

struct TrainingConfig {
  double learning_rate = 1e-3;
  std::size_t iterations = 1;
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::stochastic_sgd;
  DropoutScheme scheme = DropoutScheme::bernoulli(0.5);
  BatchMode batch = BatchMode::single_sample;
  std::size_t log_stride = 10;

  double retain_probability() const noexcept { return scheme.theta(); }
  std::size_t block_size() const noexcept { return scheme.block_size(); }
};

struct TrainingRecord {
  std::size_t iteration = 0;
  /// Data-fit loss of the full dataset under one freshly drawn mask.
  double stochastic_objective = 0.0;
  /// Closed-form expectation of the stochastic objective.
  double deterministic_objective = 0.0;
  std::vector<double> block_norms;
};

struct TrainingTrace {
  std::vector<TrainingRecord> records;
  Matrix u;
  Matrix v;
  double learning_rate = 0.0;
};

/// Called on every record with the current factors; may amend the record.
using RecordHook = std::function<void(const Matrix& u, const Matrix& v, TrainingRecord& rec)>;

// RNG streams owned by the trainer; dataset synthesis uses 1 through 4.
inline constexpr std::uint64_t kTrainMaskStream = 5;
inline constexpr std::uint64_t kEvalMaskStream = 6;

/// ||Y - U V^T X||_F^2
inline double fit_loss(const Matrix& u, const Matrix& v, const Matrix& x, const Matrix& y) {
  return frobenius_sq(subtract(y, matmul(u, matmul(transpose(v), x))));
}

/// V with its columns (or entries, for a weight mask) multiplied by mask / rescale.
inline Matrix apply_mask(const Matrix& v, const MaskSample& mask, double rescale) {
  if (mask.is_unit_mask()) {
    if (mask.cols != v.cols()) throw DimensionError("mask length does not match factor width");
    std::vector<double> s(mask.cols);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = mask[j] ? 1.0 / rescale : 0.0;
    return scale_columns(v, s);
  }
  if (mask.rows != v.rows() || mask.cols != v.cols()) throw DimensionError("weight mask shape does not match V");
  return Matrix::generate(v.rows(), v.cols(),
                          [&](std::size_t i, std::size_t j) { return mask(i, j) ? v(i, j) / rescale : 0.0; });
}

/// Loss of the network with the mask applied, on the given columns.
inline double masked_loss(const Matrix& u, const Matrix& v, const Matrix& x, const Matrix& y, const MaskSample& mask,
                          double rescale) {
  return fit_loss(u, apply_mask(v, mask, rescale), x, y);
}

/// Mean retain rate used to rescale surviving units.
inline double mask_rescale(const DropoutScheme& scheme, std::size_t width) {
  return characteristic_matrix(scheme, width).mean.front();
}

/// Expected value of the stochastic objective in closed form: the data fit
/// plus <cbar, U^T U (.) (X^T V)^T (X^T V)> for unit masks, or the exact
/// DropConnect penalty for weight masks.
inline double deterministic_objective(const Matrix& u, const Matrix& v, const Matrix& x, const Matrix& y,
                                      const DropoutScheme& scheme) {
  if (scheme.is_dropconnect()) return fit_loss(u, v, x, y) + regularizer_dropconnect_exact(u, v, x, scheme.theta());
  const CharacteristicMatrix cm = characteristic_matrix(scheme, u.cols());
  return fit_loss(u, v, x, y) + regularizer_generalized(cm, u, matmul(transpose(x), v));
}

/// One step of masked SGD on the columns (x_t, y_t), with both factors
/// updated from the pre-step iterates:
///
///   eps = (1/rescale) U D V^T x - y
///   U'  = U - (eta/rescale) eps x^T V D
///   V'  = V - (eta/rescale) x eps^T U D
///
/// For a weight mask Z the masked factor is Z (.) V and the V update is
/// multiplied entrywise by Z. The step equals eta/2 times the gradient of the
/// masked loss.
inline std::pair<Matrix, Matrix> sgd_step(const Matrix& u, const Matrix& v, const Matrix& x_t, const Matrix& y_t,
                                          const MaskSample& mask, double eta, double rescale) {
  if (u.cols() != v.cols()) throw DimensionError("sgd_step: U and V widths differ");
  if (x_t.rows() != v.rows() || y_t.rows() != u.rows() || x_t.cols() != y_t.cols()) {
    throw DimensionError("sgd_step: sample shapes " + shape_string(x_t) + ", " + shape_string(y_t) +
                         " do not conform to U " + shape_string(u) + ", V " + shape_string(v));
  }
  const double g = eta / rescale;
  if (mask.is_unit_mask()) {
    if (mask.cols != u.cols()) throw DimensionError("sgd_step: mask length does not match width");
    std::vector<double> z(mask.cols);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = mask[j] ? 1.0 : 0.0;
    const Matrix vd = scale_columns(v, z);
    const Matrix ud = scale_columns(u, z);
    const Matrix h = matmul(transpose(vd), x_t);  // D V^T x
    const Matrix eps = subtract(scale(matmul(u, h), 1.0 / rescale), y_t);
    Matrix u_next = axpy(u, g, matmul(eps, transpose(h)));
    Matrix v_next = axpy(v, g, matmul(x_t, matmul(transpose(eps), ud)));
    return {std::move(u_next), std::move(v_next)};
  }
  const Matrix zv = apply_mask(v, mask, 1.0);
  const Matrix h = matmul(transpose(zv), x_t);
  const Matrix eps = subtract(scale(matmul(u, h), 1.0 / rescale), y_t);
  Matrix u_next = axpy(u, g, matmul(eps, transpose(h)));
  const Matrix gv = matmul(x_t, matmul(transpose(eps), u));
  Matrix v_next = Matrix::generate(v.rows(), v.cols(), [&](std::size_t i, std::size_t j) {
    return mask(i, j) ? v(i, j) - g * gv(i, j) : v(i, j);
  });
  return {std::move(u_next), std::move(v_next)};
}

namespace detail {

// Gradient step of eta/2 on the deterministic objective, matching the scale
// of the stochastic step in expectation.
struct DeterministicStepper {
  Matrix cbar;
  Matrix gxx;  // X X^T
  Matrix yxt;  // Y X^T

  std::pair<Matrix, Matrix> step(const Matrix& u, const Matrix& v, double eta) const {
    const Matrix gv = matmul(gxx, v);
    const Matrix m1 = matmul(transpose(v), gv);  // V^T X X^T V
    const Matrix utu = gram(u);
    const Matrix grad_u = add(subtract(matmul(u, m1), matmul(yxt, v)), matmul(u, hadamard(cbar, m1)));
    const Matrix grad_v =
        add(subtract(matmul(gv, utu), matmul(transpose(yxt), u)), matmul(gv, hadamard(cbar, utu)));
    // grad_* above are half the true gradients, so a step of eta/2 is eta * grad_*.
    return {axpy(u, eta, grad_u), axpy(v, eta, grad_v)};
  }
};

inline Matrix column_slice(const Matrix& m, std::size_t j) { return column_block(m, j, 1); }

}  // namespace detail

/// Trains (U, V) from the given initialization.
///
/// Records are taken before the first step, every log_stride steps, and after
/// the last step. Single-sample mode visits the data columns cyclically.
/// The run is a pure function of its inputs and cfg.seed.
inline TrainingTrace train(const Matrix& x, const Matrix& y, const Matrix& init_u, const Matrix& init_v,
                           const TrainingConfig& cfg, const RecordHook& hook = {}) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw InvalidArgumentError("learning rate must be positive and finite");
  }
  if (cfg.iterations == 0) throw InvalidArgumentError("iteration count must be at least 1");
  if (cfg.log_stride == 0) throw InvalidArgumentError("log stride must be at least 1");
  if (x.cols() != y.cols() || init_v.rows() != x.rows() || init_u.rows() != y.rows() ||
      init_u.cols() != init_v.cols()) {
    throw DimensionError("train: X " + shape_string(x) + ", Y " + shape_string(y) + ", U " + shape_string(init_u) +
                         ", V " + shape_string(init_v) + " do not conform");
  }

  const std::size_t d = init_u.cols();
  const DropoutScheme& scheme = cfg.scheme;
  if (cfg.mode == TrainingMode::full_batch_deterministic && scheme.is_dropconnect()) {
    throw InvalidArgumentError("full-batch deterministic training needs a unit-mask scheme");
  }
  const CharacteristicMatrix cm = characteristic_matrix(scheme, d);
  const double rescale = cm.mean.front();
  const std::size_t block = scheme.block_size();
  const double eta = cfg.learning_rate;
  const std::size_t n = x.cols();

  SeededRng mask_rng(cfg.seed, kTrainMaskStream);
  SeededRng eval_rng(cfg.seed, kEvalMaskStream);
  const detail::DeterministicStepper stepper{cm.cbar, matmul(x, transpose(x)), matmul(y, transpose(x))};

  TrainingTrace trace;
  trace.learning_rate = eta;
  Matrix u = init_u;
  Matrix v = init_v;
  double initial = 0.0;

  auto record = [&](std::size_t t) {
    TrainingRecord rec;
    rec.iteration = t;
    rec.deterministic_objective = deterministic_objective(u, v, x, y, scheme);
    const MaskSample eval_mask = sample_mask(scheme, d, eval_rng, x.rows());
    rec.stochastic_objective = masked_loss(u, v, x, y, eval_mask, rescale);
    rec.block_norms = block_norms(FactorPair(u, v, block), x);
    if (hook) hook(u, v, rec);
    if (!std::isfinite(rec.deterministic_objective) || !std::isfinite(rec.stochastic_objective)) {
      throw DivergenceError("training diverged at iteration " + std::to_string(t) + " with learning rate " +
                                std::to_string(eta),
                            eta);
    }
    if (t == 0) {
      initial = rec.deterministic_objective;
    } else if (initial > 0.0 && rec.deterministic_objective > 1e6 * initial) {
      throw DivergenceError("objective grew past 1e6 times its initial value at iteration " + std::to_string(t) +
                                " with learning rate " + std::to_string(eta),
                            eta);
    }
    trace.records.push_back(std::move(rec));
  };

  try {
    record(0);
    for (std::size_t t = 1; t <= cfg.iterations; ++t) {
      if (cfg.mode == TrainingMode::full_batch_deterministic) {
        std::tie(u, v) = stepper.step(u, v, eta);
      } else {
        const MaskSample mask = sample_mask(scheme, d, mask_rng, x.rows());
        if (cfg.batch == BatchMode::full_batch) {
          std::tie(u, v) = sgd_step(u, v, x, y, mask, eta, rescale);
        } else {
          const std::size_t col = (t - 1) % n;
          std::tie(u, v) =
              sgd_step(u, v, detail::column_slice(x, col), detail::column_slice(y, col), mask, eta, rescale);
        }
      }
      if (t % cfg.log_stride == 0 || t == cfg.iterations) record(t);
    }
  } catch (const NonFiniteError&) {
    throw DivergenceError("training produced non-finite factors with learning rate " + std::to_string(eta), eta);
  }

  trace.u = std::move(u);
  trace.v = std::move(v);
  return trace;
}

namespace detail {

// Number of independent Bernoulli variables behind one mask draw.
inline std::size_t bernoulli_variable_count(const DropoutScheme& scheme, std::size_t d, std::size_t b) {
  if (scheme.is_dropconnect()) return b * d;
  if (const auto* p = std::get_if<DropBlockPartitioned>(&scheme.variant())) {
    require_divides(p->block_size, d);
    return d / p->block_size;
  }
  return d;  // Bernoulli units or DropBlockOriginal anchors
}

inline MaskSample mask_from_bits(const DropoutScheme& scheme, std::size_t d, std::size_t b,
                                 const std::vector<std::uint8_t>& bits) {
  MaskSample m;
  m.cols = d;
  if (scheme.is_dropconnect()) {
    m.rows = b;
    m.values = bits;
    return m;
  }
  if (const auto* p = std::get_if<DropBlockPartitioned>(&scheme.variant())) {
    m.values.resize(d);
    for (std::size_t j = 0; j < d; ++j) m.values[j] = bits[j / p->block_size];
    return m;
  }
  if (const auto* p = std::get_if<DropBlockOriginal>(&scheme.variant())) {
    require_window(p->window, d);
    m.values = anchors_to_mask(bits, p->window);
    return m;
  }
  m.values = bits;
  return m;
}

}  // namespace detail

inline constexpr std::size_t kMaxEnumeratedVariables = 20;

/// Exact expectation of the stochastic objective by weighting every mask
/// with its probability. Limited to kMaxEnumeratedVariables independent draws.
inline double expected_objective_exact(const Matrix& u, const Matrix& v, const Matrix& x, const Matrix& y,
                                       const DropoutScheme& scheme) {
  const std::size_t d = u.cols();
  const std::size_t count = detail::bernoulli_variable_count(scheme, d, v.rows());
  if (count > kMaxEnumeratedVariables) {
    throw EnumerationTooLargeError("enumeration over " + std::to_string(count) + " Bernoulli variables exceeds " +
                                   std::to_string(kMaxEnumeratedVariables));
  }
  const double theta = scheme.theta();
  const double rescale = mask_rescale(scheme, d);
  std::vector<std::uint8_t> bits(count);
  double acc = 0.0;
  for (std::uint64_t code = 0; code < (std::uint64_t{1} << count); ++code) {
    double weight = 1.0;
    for (std::size_t i = 0; i < count; ++i) {
      bits[i] = (code >> i) & 1u;
      weight *= bits[i] ? theta : 1.0 - theta;
    }
    if (weight == 0.0) continue;
    acc += weight * masked_loss(u, v, x, y, detail::mask_from_bits(scheme, d, v.rows(), bits), rescale);
  }
  return acc;
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_err = 0.0;
};

/// Sample mean and standard error of the stochastic objective over n_samples masks.
inline MonteCarloEstimate expected_objective_mc(const Matrix& u, const Matrix& v, const Matrix& x, const Matrix& y,
                                                const DropoutScheme& scheme, std::size_t n_samples,
                                                SeededRng& rng) {
  if (n_samples < 2) throw InvalidArgumentError("Monte-Carlo estimate needs at least 2 samples");
  const std::size_t d = u.cols();
  const double rescale = mask_rescale(scheme, d);
  // Welford's running mean and sum of squared deviations.
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 1; i <= n_samples; ++i) {
    const double val = masked_loss(u, v, x, y, sample_mask(scheme, d, rng, v.rows()), rescale);
    const double delta = val - mean;
    mean += delta / static_cast<double>(i);
    m2 += delta * (val - mean);
  }
  const double var = m2 / static_cast<double>(n_samples - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_samples))};
}

}  // namespace structdrop
